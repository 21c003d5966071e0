//! In-container notebook execution and error extraction.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::NotebookDescriptor;
use crate::ids::{NotebookId, RepositoryId, RunId};
use crate::notebook::{markdown_code_ratio, parse_notebook, CellKind, OutputType, ParsedNotebook};
use crate::runtime::{ContainerRuntime, ResourceLimits, RuntimeError, REPOSITORY_LABEL};

pub const DEFAULT_EXEC_TIMEOUT: Duration = Duration::from_secs(600);
pub const DEFAULT_KERNEL: &str = "python3";
/// Exit code of the in-container wrapper when the notebook file is absent.
const MISSING_NOTEBOOK_EXIT: i32 = 66;
/// `timeout -s KILL` exit status.
const KILLED_EXIT: i32 = 137;
const OUTPUT_DIR: &str = "/tmp/repro-out";
const REPO_ROOT: &str = "/repo";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExecutionStatus {
    Success,
    ErroredButCompleted,
    KernelNotFound,
    NotebookNotFound,
    Timeout,
    Skipped,
}

impl ExecutionStatus {
    pub const ALL: [ExecutionStatus; 6] = [
        ExecutionStatus::Success,
        ExecutionStatus::ErroredButCompleted,
        ExecutionStatus::KernelNotFound,
        ExecutionStatus::NotebookNotFound,
        ExecutionStatus::Timeout,
        ExecutionStatus::Skipped,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExecutionStatus::Success => "Success",
            ExecutionStatus::ErroredButCompleted => "ErroredButCompleted",
            ExecutionStatus::KernelNotFound => "KernelNotFound",
            ExecutionStatus::NotebookNotFound => "NotebookNotFound",
            ExecutionStatus::Timeout => "Timeout",
            ExecutionStatus::Skipped => "Skipped",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

impl fmt::Display for ExecutionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCategory {
    Dependency,
    Data,
    Code,
    Logic,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 4] =
        [ErrorCategory::Dependency, ErrorCategory::Data, ErrorCategory::Code, ErrorCategory::Logic];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Dependency => "Dependency",
            ErrorCategory::Data => "Data",
            ErrorCategory::Code => "Code",
            ErrorCategory::Logic => "Logic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionError {
    pub error_type: String,
    pub category: ErrorCategory,
    pub message: String,
    /// Position among the notebook's code cells.
    pub cell_index: usize,
    pub count: u32,
    /// The type was not in the classification table.
    pub unrecognized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub notebook_id: NotebookId,
    pub run_id: RunId,
    pub status: ExecutionStatus,
    pub status_reason: Option<String>,
    /// Absent only for skipped notebooks.
    pub duration_s: Option<f64>,
    pub code_cell_count: usize,
    pub markdown_code_ratio: Option<f64>,
    pub errors: Vec<ExecutionError>,
    pub executed_notebook_path: Option<PathBuf>,
    pub kernel_used: Option<String>,
}

impl ExecutionRecord {
    pub fn skipped(descriptor: &NotebookDescriptor, run_id: &RunId, reason: impl Into<String>) -> Self {
        Self {
            notebook_id: descriptor.notebook_id.clone(),
            run_id: run_id.clone(),
            status: ExecutionStatus::Skipped,
            status_reason: Some(reason.into()),
            duration_s: None,
            code_cell_count: 0,
            markdown_code_ratio: None,
            errors: Vec::new(),
            executed_notebook_path: None,
            kernel_used: None,
        }
    }

    pub fn total_error_count(&self) -> u64 {
        self.errors.iter().map(|e| u64::from(e.count)).sum()
    }
}

/// Canonical spelling of an exception name: qualified names reduced to the
/// class name, whitespace removed ("File Not Found Error" and
/// "FileNotFoundError" coincide), and an omitted `Error` suffix restored
/// for known types.
pub fn normalize_error_type(raw: &str) -> String {
    let last = raw.trim().rsplit('.').next().unwrap_or("").trim();
    let compact: String = last.split_whitespace().collect();
    if lookup(&compact).is_some() {
        return canonical_case(&compact);
    }
    let suffixed = format!("{compact}Error");
    if lookup(&suffixed).is_some() {
        return canonical_case(&suffixed);
    }
    compact
}

const CATEGORY_TABLE: &[(&str, ErrorCategory)] = &[
    ("ModuleNotFoundError", ErrorCategory::Dependency),
    ("ImportError", ErrorCategory::Dependency),
    ("InstallDependencyError", ErrorCategory::Dependency),
    ("FileNotFoundError", ErrorCategory::Data),
    ("PermissionError", ErrorCategory::Data),
    ("IsADirectoryError", ErrorCategory::Data),
    ("NotADirectoryError", ErrorCategory::Data),
    ("FileExistsError", ErrorCategory::Data),
    ("SyntaxError", ErrorCategory::Code),
    ("IndentationError", ErrorCategory::Code),
    ("TabError", ErrorCategory::Code),
    ("TypeError", ErrorCategory::Code),
    ("AttributeError", ErrorCategory::Code),
    ("NameError", ErrorCategory::Logic),
    ("UnboundLocalError", ErrorCategory::Logic),
    ("ValueError", ErrorCategory::Logic),
    ("KeyError", ErrorCategory::Logic),
    ("IndexError", ErrorCategory::Logic),
    ("ZeroDivisionError", ErrorCategory::Logic),
    ("AssertionError", ErrorCategory::Logic),
];

fn lookup(name: &str) -> Option<(&'static str, ErrorCategory)> {
    CATEGORY_TABLE
        .iter()
        .find(|(known, _)| known.eq_ignore_ascii_case(name))
        .copied()
}

fn canonical_case(name: &str) -> String {
    lookup(name).map(|(k, _)| k.to_string()).unwrap_or_else(|| name.to_string())
}

/// Maps an exception to its failure category. Returns `(category, known)`;
/// unknown names fall back to Logic with `known = false`.
pub fn classify_error(error_type: &str, message: &str) -> (ErrorCategory, bool) {
    let name = normalize_error_type(error_type);
    if let Some((_, category)) = lookup(&name) {
        return (category, true);
    }
    if name == "OSError" || name == "IOError" {
        let lower = message.to_ascii_lowercase();
        if lower.contains("no such file") || lower.contains("permission denied") {
            return (ErrorCategory::Data, true);
        }
    }
    (ErrorCategory::Logic, false)
}

fn first_line(text: &str) -> String {
    text.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim().to_string()
}

/// One entry per (error_type, code-cell) pair carrying error outputs.
pub fn extract_errors(executed: &ParsedNotebook) -> Vec<ExecutionError> {
    let mut grouped: BTreeMap<(usize, String), ExecutionError> = BTreeMap::new();
    let code = executed.cells.iter().filter(|c| c.kind == CellKind::Code);
    for (code_index, cell) in code.enumerate() {
        for output in &cell.outputs {
            if output.output_type != OutputType::Error {
                continue;
            }
            let Some(err) = &output.error else { continue };
            let error_type = normalize_error_type(&err.name);
            let message = first_line(&err.value);
            let (category, known) = classify_error(&error_type, &message);
            grouped
                .entry((code_index, error_type.clone()))
                .and_modify(|e| e.count += 1)
                .or_insert(ExecutionError {
                    error_type,
                    category,
                    message,
                    cell_index: code_index,
                    count: 1,
                    unrecognized: !known,
                });
        }
    }
    grouped.into_values().collect()
}

/// Where executed artifacts and logs go.
#[derive(Debug, Clone)]
pub struct ExecutionPaths {
    pub logdir: PathBuf,
    pub artifacts: PathBuf,
}

impl ExecutionPaths {
    pub fn artifact_path(&self, run_id: &RunId, relative_path: &str) -> PathBuf {
        self.artifacts.join(run_id.as_str()).join(relative_path)
    }

    pub fn execution_log(&self, run_id: &RunId, notebook_id: &NotebookId) -> PathBuf {
        self.logdir.join(run_id.as_str()).join(format!("{notebook_id}.execution.log"))
    }
}

fn kernel_failure(text: &str) -> bool {
    const SIGNS: &[&str] = &[
        "NoSuchKernel",
        "No such kernel named",
        "Kernel died before replying to kernel_info",
        "Kernel didn't respond in",
        "kernel_info request timed out",
    ];
    SIGNS.iter().any(|s| text.contains(s))
}

fn last_exception_line(stderr: &str) -> Option<String> {
    stderr
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| {
            l.split(':')
                .next()
                .is_some_and(|head| !head.contains(' ') && (head.ends_with("Error") || head.ends_with("Exception")))
        })
        .map(String::from)
}

/// One running container holding a built image; notebooks of a repository
/// are executed in it one after another.
pub struct ExecutionSession<'r> {
    runtime: &'r dyn ContainerRuntime,
    container: String,
    run_id: RunId,
    kernels: Vec<String>,
}

impl<'r> ExecutionSession<'r> {
    pub fn open(
        runtime: &'r dyn ContainerRuntime,
        image: &str,
        repository_id: &RepositoryId,
        run_id: &RunId,
        limits: &ResourceLimits,
    ) -> Result<Self, RuntimeError> {
        let container = format!("repro-{repository_id}-{run_id}");
        let labels = vec![(REPOSITORY_LABEL.to_string(), repository_id.to_string())];
        runtime.start(image, &container, &labels, limits)?;
        let probe = runtime.exec(
            &container,
            REPO_ROOT,
            &["jupyter".into(), "kernelspec".into(), "list".into(), "--json".into()],
            Duration::from_secs(120),
        );
        let kernels = match probe {
            Ok(out) if out.success() => parse_kernelspecs(&out.stdout),
            _ => Vec::new(),
        };
        Ok(Self {
            runtime,
            container,
            run_id: run_id.clone(),
            kernels,
        })
    }

    pub fn available_kernels(&self) -> &[String] {
        &self.kernels
    }

    /// Kernel to request: the notebook's own if installed, else the default once.
    pub fn resolve_kernel(&self, requested: &str) -> Option<String> {
        resolve_kernel(&self.kernels, requested)
    }

    /// Runs one notebook with error tolerance and copies the result out.
    pub fn execute_notebook(
        &self,
        descriptor: &NotebookDescriptor,
        original: Option<&ParsedNotebook>,
        timeout: Duration,
        paths: &ExecutionPaths,
    ) -> ExecutionRecord {
        let mut record = ExecutionRecord::skipped(descriptor, &self.run_id, "");
        record.status_reason = None;
        if let Some(nb) = original {
            record.code_cell_count = nb.count(CellKind::Code);
            record.markdown_code_ratio = markdown_code_ratio(nb);
        }
        let log_path = paths.execution_log(&self.run_id, &descriptor.notebook_id);
        let Some(kernel) = self.resolve_kernel(&descriptor.kernel_name) else {
            record.status = ExecutionStatus::KernelNotFound;
            record.duration_s = Some(0.0);
            record.status_reason = Some(format!(
                "kernel `{}` unavailable and no default kernel installed",
                descriptor.kernel_name
            ));
            write_log(&log_path, record.status_reason.as_deref().unwrap_or(""));
            return record;
        };
        record.kernel_used = Some(kernel.clone());
        let (dir, file) = split_relative(&descriptor.relative_path);
        let workdir = if dir.is_empty() { REPO_ROOT.to_string() } else { format!("{REPO_ROOT}/{dir}") };
        let output_name = descriptor.notebook_id.to_string();
        let secs = timeout.as_secs().max(1);
        let script = format!(
            "if [ ! -f \"$1\" ]; then echo \"notebook not found: $1\" >&2; exit {MISSING_NOTEBOOK_EXIT}; fi; \
             mkdir -p {OUTPUT_DIR} && exec timeout -s KILL \"$2\" jupyter nbconvert --to notebook --execute \
             --allow-errors --ExecutePreprocessor.timeout=-1 --ExecutePreprocessor.kernel_name=\"$3\" \
             --output-dir {OUTPUT_DIR} --output \"$4\" \"$1\""
        );
        let argv = vec![
            "sh".to_string(),
            "-c".to_string(),
            script,
            "sh".to_string(),
            file.to_string(),
            secs.to_string(),
            kernel,
            output_name.clone(),
        ];
        let result = self.runtime.exec(&self.container, &workdir, &argv, timeout + Duration::from_secs(60));
        let out = match result {
            Err(e) => {
                record.status = ExecutionStatus::ErroredButCompleted;
                record.duration_s = Some(0.0);
                record.status_reason = Some(e.to_string());
                write_log(&log_path, &e.to_string());
                return record;
            }
            Ok(out) => out,
        };
        write_log(&log_path, &out.combined());
        record.duration_s = Some(out.elapsed.as_secs_f64());
        if out.timed_out || out.exit_code == Some(KILLED_EXIT) || out.exit_code == Some(124) {
            record.status = ExecutionStatus::Timeout;
            record.status_reason = Some(format!("exceeded {secs}s"));
            return record;
        }
        if out.exit_code == Some(MISSING_NOTEBOOK_EXIT) {
            record.status = ExecutionStatus::NotebookNotFound;
            record.status_reason = Some(format!("{} missing in image", descriptor.relative_path));
            return record;
        }
        if !out.success() {
            if kernel_failure(&out.stderr) {
                record.status = ExecutionStatus::KernelNotFound;
                record.status_reason = last_exception_line(&out.stderr);
            } else {
                record.status = ExecutionStatus::ErroredButCompleted;
                record.status_reason = Some(
                    last_exception_line(&out.stderr).unwrap_or_else(|| format!("converter exited with {:?}", out.exit_code)),
                );
            }
            return record;
        }
        let dest = paths.artifact_path(&self.run_id, &descriptor.relative_path);
        let source = format!("{OUTPUT_DIR}/{output_name}.ipynb");
        if let Err(e) = self.runtime.copy_out(&self.container, &source, &dest) {
            record.status = ExecutionStatus::ErroredButCompleted;
            record.status_reason = Some(format!("executed notebook not retrievable: {e}"));
            return record;
        }
        finish_from_artifact(record, &dest)
    }

    /// Stops and removes the container.
    pub fn close(self) -> Result<(), RuntimeError> {
        self.runtime.remove_containers(&[self.container])
    }
}

/// Completes a record from an executed notebook already on disk.
pub fn finish_from_artifact(mut record: ExecutionRecord, artifact: &Path) -> ExecutionRecord {
    let parsed = std::fs::read(artifact)
        .map_err(|e| e.to_string())
        .and_then(|b| parse_notebook(&b).map_err(|e| e.to_string()));
    match parsed {
        Err(e) => {
            record.status = ExecutionStatus::ErroredButCompleted;
            record.status_reason = Some(format!("executed notebook unreadable: {e}"));
        }
        Ok(executed) => {
            record.code_cell_count = executed.count(CellKind::Code);
            record.markdown_code_ratio = markdown_code_ratio(&executed);
            record.errors = extract_errors(&executed);
            record.executed_notebook_path = Some(artifact.to_path_buf());
            record.status = if record.errors.is_empty() {
                ExecutionStatus::Success
            } else {
                ExecutionStatus::ErroredButCompleted
            };
        }
    }
    record
}

pub fn resolve_kernel(available: &[String], requested: &str) -> Option<String> {
    if !requested.is_empty() && available.iter().any(|k| k == requested) {
        return Some(requested.to_string());
    }
    available.iter().find(|k| *k == DEFAULT_KERNEL).cloned()
}

/// Kernel names from `jupyter kernelspec list --json`.
pub fn parse_kernelspecs(json: &str) -> Vec<String> {
    let Ok(value) = serde_json::from_str::<serde_json::Value>(json) else {
        return Vec::new();
    };
    let mut names: Vec<String> = value
        .get("kernelspecs")
        .and_then(|k| k.as_object())
        .map(|m| m.keys().cloned().collect())
        .unwrap_or_default();
    names.sort();
    names
}

fn split_relative(relative_path: &str) -> (&str, &str) {
    match relative_path.rsplit_once('/') {
        Some((dir, file)) => (dir, file),
        None => ("", relative_path),
    }
}

fn write_log(path: &Path, text: &str) {
    if let Some(parent) = path.parent() {
        let _ = std::fs::create_dir_all(parent);
    }
    if let Err(e) = std::fs::write(path, text) {
        log::warn!("could not write execution log {}: {e}", path.display());
    }
}
