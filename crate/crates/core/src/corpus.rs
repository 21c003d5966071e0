//! Repository discovery, validation and acquisition.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::{DirEntry, WalkDir};

use crate::ids::{NotebookId, RepositoryId, RunId};
use crate::notebook::{parse_notebook, NotebookParseError, ParsedNotebook, NOTEBOOK_EXTENSION};
use crate::process::run_with_timeout;

pub const PROBE_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Repository {
    pub repository_id: RepositoryId,
    /// Normalized URL (`file://` for local directory inputs).
    pub url: String,
    pub local_path: PathBuf,
    pub accessible: bool,
    pub has_requirements_file: bool,
    /// Repository-relative `requirements.txt` paths, authoritative first.
    pub requirement_manifests: Vec<String>,
    pub setup_manifests: Vec<String>,
    pub notebook_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProvisioningStatus {
    EnvironmentBuilt,
    BuildFailed,
    KernelNotFound,
    NoPythonNotebooks,
    InvalidUrl,
    /// Environment stages not (yet) run: inference-only invocation or no container runtime.
    NotProvisioned,
}

impl ProvisioningStatus {
    pub const ALL: [ProvisioningStatus; 6] = [
        ProvisioningStatus::EnvironmentBuilt,
        ProvisioningStatus::BuildFailed,
        ProvisioningStatus::KernelNotFound,
        ProvisioningStatus::NoPythonNotebooks,
        ProvisioningStatus::InvalidUrl,
        ProvisioningStatus::NotProvisioned,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProvisioningStatus::EnvironmentBuilt => "EnvironmentBuilt",
            ProvisioningStatus::BuildFailed => "BuildFailed",
            ProvisioningStatus::KernelNotFound => "KernelNotFound",
            ProvisioningStatus::NoPythonNotebooks => "NoPythonNotebooks",
            ProvisioningStatus::InvalidUrl => "InvalidUrl",
            ProvisioningStatus::NotProvisioned => "NotProvisioned",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

impl fmt::Display for ProvisioningStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One containerized experiment over one repository.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: RunId,
    pub repository_id: RepositoryId,
    /// Identifies the pipeline invocation; unique together with `repository_id`.
    pub invocation_id: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub provisioning_status: ProvisioningStatus,
    pub status_reason: Option<String>,
    pub image_reference: Option<String>,
    pub revision: Option<String>,
    pub pipeline_version: String,
    pub build_failure_phase: Option<String>,
}

impl RunRecord {
    pub fn start(repository_id: RepositoryId, invocation_id: &str) -> Self {
        let now = Utc::now().trunc_subsecs(6);
        Self {
            run_id: RunId::generate(),
            repository_id,
            invocation_id: invocation_id.to_string(),
            started_at: now,
            finished_at: now,
            provisioning_status: ProvisioningStatus::NotProvisioned,
            status_reason: None,
            image_reference: None,
            revision: None,
            pipeline_version: crate::PIPELINE_VERSION.to_string(),
            build_failure_phase: None,
        }
    }

    pub fn finish(&mut self) {
        self.finished_at = Utc::now().trunc_subsecs(6).max(self.started_at);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotebookDescriptor {
    pub notebook_id: NotebookId,
    pub repository_id: RepositoryId,
    /// `/`-separated path relative to the repository root.
    pub relative_path: String,
    pub kernel_name: String,
    pub language: Option<String>,
    pub nbformat_version: (u32, u32),
    /// Set when the file could not be read or parsed.
    pub parse_error: Option<String>,
}

impl NotebookDescriptor {
    pub fn parse_failed(&self) -> bool {
        self.parse_error.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValidationResult {
    Accessible,
    RemovedOrPrivate,
    Malformed,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    /// The probe could not reach the remote; worth retrying later.
    #[error("repository probe timed out after {0:?}")]
    ProbeTimeout(Duration),
    #[error("repository probe failed: {0}")]
    ProbeNetwork(String),
    #[error("clone of {url} failed: {message}")]
    Clone { url: String, message: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, CorpusError::ProbeTimeout(_) | CorpusError::ProbeNetwork(_))
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CorpusError {
    let context = context.into();
    move |source| CorpusError::Io { context, source }
}

/// Where a repository comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RepositorySource {
    Remote { normalized_url: String },
    LocalDirectory { path: PathBuf, normalized_url: String },
}

impl RepositorySource {
    pub fn normalized_url(&self) -> &str {
        match self {
            RepositorySource::Remote { normalized_url } => normalized_url,
            RepositorySource::LocalDirectory { normalized_url, .. } => normalized_url,
        }
    }

    pub fn repository_id(&self) -> RepositoryId {
        RepositoryId::for_normalized_url(self.normalized_url())
    }
}

const ACCEPTED_SCHEMES: &[&str] = &["https", "http", "git", "ssh", "file"];

/// Canonical form of a repository URL: lowercase scheme and host, no
/// credentials, query, fragment, trailing slash or `.git` suffix. GitHub
/// paths are case-insensitive and are lowercased, and GitHub is always https.
pub fn normalize_url(raw: &str) -> Option<String> {
    let raw = raw.trim();
    let mut url = url::Url::parse(raw).ok()?;
    if !ACCEPTED_SCHEMES.contains(&url.scheme()) {
        return None;
    }
    if url.scheme() != "file" && url.host_str().is_none_or(str::is_empty) {
        return None;
    }
    let _ = url.set_username("");
    let _ = url.set_password(None);
    url.set_query(None);
    url.set_fragment(None);
    let github = url.host_str() == Some("github.com") || url.host_str() == Some("www.github.com");
    if github {
        let _ = url.set_scheme("https");
        let _ = url.set_host(Some("github.com"));
        let _ = url.set_port(None);
    }
    let mut path = url.path().trim_end_matches('/').to_string();
    if let Some(stripped) = path.strip_suffix(".git") {
        path = stripped.to_string();
    }
    if github {
        path = path.to_ascii_lowercase();
    }
    if path.is_empty() || path == "/" || path.split('/').any(|s| s == "." || s == "..") || path.ends_with('/') {
        return None;
    }
    url.set_path(&path);
    Some(url.to_string())
}

/// Interprets a CLI input: an existing directory is a local repository,
/// anything else must be a URL.
pub fn resolve_source(input: &str) -> Result<RepositorySource, ValidationResult> {
    let path = Path::new(input.trim());
    if !input.contains("://") && path.is_dir() {
        let canonical = path.canonicalize().map_err(|_| ValidationResult::RemovedOrPrivate)?;
        let normalized_url = format!("file://{}", canonical.display());
        return Ok(RepositorySource::LocalDirectory {
            path: canonical,
            normalized_url,
        });
    }
    normalize_url(input)
        .map(|normalized_url| RepositorySource::Remote { normalized_url })
        .ok_or(ValidationResult::Malformed)
}

const GONE_PATTERNS: &[&str] = &[
    "repository not found",
    "not found",
    "could not read username",
    "terminal prompts disabled",
    "authentication failed",
    "does not appear to be a git repository",
    "no such file or directory",
    "returned error: 403",
    "returned error: 404",
    "returned error: 410",
    "returned error: 451",
    "unavailable for legal reasons",
    "access denied",
];

const NETWORK_PATTERNS: &[&str] = &[
    "could not resolve host",
    "failed to connect",
    "connection timed out",
    "connection refused",
    "operation timed out",
    "network is unreachable",
    "early eof",
    "ssl",
];

fn git() -> Command {
    let mut cmd = Command::new("git");
    cmd.env("GIT_TERMINAL_PROMPT", "0")
        .env("GIT_ASKPASS", "true")
        .env("SSH_ASKPASS", "true")
        .env("GIT_SSH_COMMAND", "ssh -o BatchMode=yes");
    cmd
}

/// Classifies a failed remote probe from git's stderr.
pub fn classify_probe_failure(stderr: &str) -> Result<ValidationResult, CorpusError> {
    let lower = stderr.to_ascii_lowercase();
    if GONE_PATTERNS.iter().any(|p| lower.contains(p)) {
        return Ok(ValidationResult::RemovedOrPrivate);
    }
    let message = stderr.lines().last().unwrap_or("").trim().to_string();
    if NETWORK_PATTERNS.iter().any(|p| lower.contains(p)) {
        return Err(CorpusError::ProbeNetwork(message));
    }
    Err(CorpusError::ProbeNetwork(if message.is_empty() {
        "git exited unsuccessfully".into()
    } else {
        message
    }))
}

/// Read-only, unauthenticated existence probe (remote refs listing).
pub fn validate_repository(url: &str, timeout: Duration) -> Result<ValidationResult, CorpusError> {
    let source = match resolve_source(url) {
        Ok(s) => s,
        Err(verdict) => return Ok(verdict),
    };
    match source {
        RepositorySource::LocalDirectory { path, .. } => Ok(if std::fs::read_dir(&path).is_ok() {
            ValidationResult::Accessible
        } else {
            ValidationResult::RemovedOrPrivate
        }),
        RepositorySource::Remote { normalized_url } => {
            let mut cmd = git();
            cmd.args(["ls-remote", "--heads", "--", &normalized_url]);
            let out = run_with_timeout(cmd, Some(timeout)).map_err(io_err("running git ls-remote"))?;
            if out.timed_out {
                return Err(CorpusError::ProbeTimeout(timeout));
            }
            if out.success() {
                return Ok(ValidationResult::Accessible);
            }
            classify_probe_failure(&out.stderr)
        }
    }
}

/// Directories never searched for notebooks or manifests.
fn is_ignored_dir(entry: &DirEntry) -> bool {
    if entry.depth() == 0 || !entry.file_type().is_dir() {
        return false;
    }
    let name = entry.file_name().to_string_lossy();
    name.starts_with('.')
        || matches!(
            name.as_ref(),
            "node_modules" | "__pycache__" | "site-packages" | "venv" | "env" | "virtualenv"
        )
}

fn repo_files(root: &Path) -> impl Iterator<Item = (String, PathBuf)> + '_ {
    WalkDir::new(root)
        .follow_links(false)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| !is_ignored_dir(e))
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .filter_map(move |e| {
            let rel = e.path().strip_prefix(root).ok()?;
            let rel = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            Some((rel, e.path().to_path_buf()))
        })
}

fn manifest_order(a: &String, b: &String) -> std::cmp::Ordering {
    let depth = |p: &String| p.matches('/').count();
    depth(a).cmp(&depth(b)).then_with(|| a.cmp(b))
}

/// All `requirements.txt` and `setup.py` files, shallowest first, then by path.
pub fn find_manifests(root: &Path) -> (Vec<String>, Vec<String>) {
    let mut requirements = Vec::new();
    let mut setups = Vec::new();
    for (rel, _) in repo_files(root) {
        let name = rel.rsplit('/').next().unwrap_or(&rel).to_ascii_lowercase();
        if name == "requirements.txt" {
            requirements.push(rel);
        } else if name == "setup.py" {
            setups.push(rel);
        }
    }
    requirements.sort_by(manifest_order);
    setups.sort_by(manifest_order);
    (requirements, setups)
}

fn notebook_paths(root: &Path) -> Vec<(String, PathBuf)> {
    let mut found: Vec<(String, PathBuf)> = repo_files(root)
        .filter(|(rel, _)| {
            Path::new(rel)
                .extension()
                .is_some_and(|ext| ext.eq_ignore_ascii_case(NOTEBOOK_EXTENSION))
        })
        .collect();
    found.sort();
    found
}

fn copy_tree(from: &Path, to: &Path) -> Result<(), CorpusError> {
    for entry in WalkDir::new(from)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| !(e.depth() > 0 && e.file_name() == ".git"))
    {
        let entry = entry.map_err(|e| CorpusError::Io {
            context: format!("walking {}", from.display()),
            source: e.into(),
        })?;
        let rel = entry.path().strip_prefix(from).expect("walk stays under root");
        let target = to.join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&target).map_err(io_err(format!("creating {}", target.display())))?;
        } else if entry.file_type().is_file() {
            std::fs::copy(entry.path(), &target).map_err(io_err(format!("copying {}", entry.path().display())))?;
        }
    }
    Ok(())
}

pub fn head_revision(path: &Path) -> Option<String> {
    let mut cmd = git();
    cmd.arg("-C").arg(path).args(["rev-parse", "HEAD"]);
    let out = run_with_timeout(cmd, Some(PROBE_TIMEOUT)).ok()?;
    out.success().then(|| out.stdout.trim().to_string())
}

/// Result of acquiring a working tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Acquired {
    pub repository: Repository,
    pub revision: Option<String>,
}

/// Checks out the repository under `workdir/<repository_id>` (shallow clone
/// of the default branch, or a copy for local directories) and probes it
/// for manifests and notebooks.
pub fn acquire_repository(source: &RepositorySource, workdir: &Path, timeout: Duration) -> Result<Acquired, CorpusError> {
    let repository_id = source.repository_id();
    let dest = workdir.join(repository_id.as_str());
    if dest.exists() {
        std::fs::remove_dir_all(&dest).map_err(io_err(format!("clearing {}", dest.display())))?;
    }
    std::fs::create_dir_all(workdir).map_err(io_err(format!("creating {}", workdir.display())))?;
    let revision = match source {
        RepositorySource::Remote { normalized_url } => {
            let mut cmd = git();
            cmd.args(["clone", "--depth", "1", "--quiet", "--", normalized_url])
                .arg(&dest);
            let out = run_with_timeout(cmd, Some(timeout)).map_err(io_err("running git clone"))?;
            if !out.success() {
                let _ = std::fs::remove_dir_all(&dest);
                let message = if out.timed_out {
                    format!("timed out after {timeout:?}")
                } else {
                    out.stderr.trim().to_string()
                };
                return Err(CorpusError::Clone {
                    url: normalized_url.clone(),
                    message,
                });
            }
            head_revision(&dest)
        }
        RepositorySource::LocalDirectory { path, .. } => {
            copy_tree(path, &dest)?;
            head_revision(path)
        }
    };
    let (requirement_manifests, setup_manifests) = find_manifests(&dest);
    let notebook_count = notebook_paths(&dest).len();
    Ok(Acquired {
        repository: Repository {
            repository_id,
            url: source.normalized_url().to_string(),
            local_path: dest,
            accessible: true,
            has_requirements_file: !requirement_manifests.is_empty(),
            requirement_manifests,
            setup_manifests,
            notebook_count,
        },
        revision,
    })
}

/// Reads and parses one notebook of an acquired repository.
pub fn load_notebook(repo: &Repository, descriptor: &NotebookDescriptor) -> Result<ParsedNotebook, String> {
    let path = repo.local_path.join(&descriptor.relative_path);
    let bytes = std::fs::read(&path).map_err(|e| format!("unreadable: {e}"))?;
    parse_notebook(&bytes).map_err(|e| e.to_string())
}

fn nbformat_hint(bytes: &[u8]) -> (u32, u32) {
    let Ok(value) = serde_json::from_slice::<serde_json::Value>(bytes) else {
        return (0, 0);
    };
    let get = |k: &str| value.get(k).and_then(serde_json::Value::as_u64).unwrap_or(0) as u32;
    (get("nbformat"), get("nbformat_minor"))
}

/// One descriptor per notebook file, sorted by relative path. Files that
/// fail to parse are kept with `parse_error` set.
pub fn discover_notebooks(repo: &Repository) -> Vec<NotebookDescriptor> {
    notebook_paths(&repo.local_path)
        .into_iter()
        .map(|(relative_path, path)| {
            let notebook_id = NotebookId::for_path(&repo.repository_id, &relative_path);
            let mut descriptor = NotebookDescriptor {
                notebook_id,
                repository_id: repo.repository_id.clone(),
                relative_path,
                kernel_name: String::new(),
                language: None,
                nbformat_version: (0, 0),
                parse_error: None,
            };
            match std::fs::read(&path) {
                Err(e) => descriptor.parse_error = Some(format!("unreadable: {e}")),
                Ok(bytes) => match parse_notebook(&bytes) {
                    Ok(nb) => {
                        descriptor.kernel_name = nb.kernel_name;
                        descriptor.language = nb.language;
                        descriptor.nbformat_version = nb.nbformat;
                    }
                    Err(e) => {
                        if let NotebookParseError::UnsupportedFormat { .. } = e {
                            descriptor.nbformat_version = nbformat_hint(&bytes);
                        }
                        descriptor.parse_error = Some(e.to_string());
                    }
                },
            }
            descriptor
        })
        .collect()
}
