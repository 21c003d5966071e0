//! Stage orchestration over a corpus of repositories.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use thiserror::Error;

use crate::compare::{compute_metrics, detect_nondeterminism};
use crate::containerize::{
    build_image, cleanup_previous, generate_build_recipe, write_build_context, DEFAULT_BASE_IMAGE, DEFAULT_BUILD_TIMEOUT,
};
use crate::corpus::{
    acquire_repository, discover_notebooks, load_notebook, resolve_source, validate_repository, NotebookDescriptor,
    ProvisioningStatus, Repository, RepositorySource, RunRecord, ValidationResult, PROBE_TIMEOUT,
};
use crate::depinfer::{synthesize_dependency_spec, AliasTable, AliasTableError, DependencySpec, InferenceOptions};
use crate::events::EventLog;
use crate::executor::{ExecutionPaths, ExecutionRecord, ExecutionSession, ExecutionStatus, DEFAULT_EXEC_TIMEOUT};
use crate::ids::{RepositoryId, RunId};
use crate::notebook::{parse_notebook, CellKind, ParsedNotebook};
use crate::outcome::{assign_outcome_class, read_baseline, BaselineError, CurrentOutcome, InstallOutcome};
use crate::report::{aggregate_corpus, emit_reports, CorpusSummary, ReportError};
use crate::runtime::{ContainerRuntime, ResourceLimits};
use crate::store::{NotebookProfile, OutcomeRow, Store, StoreError};

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub inputs: Vec<String>,
    pub store_path: PathBuf,
    pub logdir: PathBuf,
    pub artifacts: PathBuf,
    pub workdir: PathBuf,
    pub report_dir: PathBuf,
    pub jobs: usize,
    pub build_timeout: Duration,
    pub exec_timeout: Duration,
    pub clone_timeout: Duration,
    pub base_image: String,
    pub alias_table: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    pub scan_magic_installs: bool,
    pub limits: ResourceLimits,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            store_path: "nbrepro.sqlite".into(),
            logdir: "logs".into(),
            artifacts: "artifacts".into(),
            workdir: "work".into(),
            report_dir: "reports".into(),
            jobs: 4,
            build_timeout: DEFAULT_BUILD_TIMEOUT,
            exec_timeout: DEFAULT_EXEC_TIMEOUT,
            clone_timeout: Duration::from_secs(600),
            base_image: DEFAULT_BASE_IMAGE.into(),
            alias_table: None,
            baseline: None,
            scan_magic_installs: true,
            limits: ResourceLimits::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.jobs == 0 {
            return Err(PipelineError::Config("--jobs must be at least 1".into()));
        }
        for (name, d) in [
            ("--build-timeout", self.build_timeout),
            ("--exec-timeout", self.exec_timeout),
            ("clone timeout", self.clone_timeout),
        ] {
            if d.is_zero() {
                return Err(PipelineError::Config(format!("{name} must be positive")));
            }
        }
        if self.base_image.trim().is_empty() {
            return Err(PipelineError::Config("--base-image must not be empty".into()));
        }
        Ok(())
    }

    pub fn inference_options(&self) -> Result<InferenceOptions, PipelineError> {
        let mut aliases = AliasTable::bundled();
        if let Some(path) = &self.alias_table {
            aliases.extend_from_file(path)?;
        }
        Ok(InferenceOptions {
            aliases,
            scan_magic_installs: self.scan_magic_installs,
        })
    }

    fn execution_paths(&self) -> ExecutionPaths {
        ExecutionPaths {
            logdir: self.logdir.clone(),
            artifacts: self.artifacts.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    AliasTable(#[from] AliasTableError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    /// A stage was invoked before the stage it depends on.
    #[error("{0}")]
    MissingPredecessor(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

fn io_context(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let context = context.into();
    move |source| PipelineError::Io { context, source }
}

/// Result of a stage over the corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StageSummary {
    pub invocation_id: String,
    pub repositories: usize,
    /// Inputs that could not be processed for operational reasons
    /// (network, clone, missing container runtime).
    pub infrastructure_failures: Vec<String>,
}

impl StageSummary {
    fn merge(&mut self, other: StageSummary) {
        self.infrastructure_failures.extend(other.infrastructure_failures);
        self.repositories = self.repositories.max(other.repositories);
    }

    pub fn total_failure(&self) -> bool {
        self.repositories > 0 && self.infrastructure_failures.len() >= self.repositories
    }
}

/// Expands inputs: a readable file that is not a directory is a list of
/// URLs or paths, one per line, `#` starting a comment.
pub fn expand_inputs(inputs: &[String]) -> Result<Vec<String>, PipelineError> {
    let mut out = Vec::new();
    for input in inputs {
        let path = Path::new(input);
        if path.is_file() {
            let text = std::fs::read_to_string(path).map_err(io_context(format!("reading input list {input}")))?;
            let base = path.parent().unwrap_or(Path::new("."));
            for line in text.lines() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let relative = base.join(line);
                if !line.contains("://") && relative.is_dir() {
                    out.push(relative.to_string_lossy().into_owned());
                } else {
                    out.push(line.to_string());
                }
            }
        } else {
            out.push(input.clone());
        }
    }
    Ok(out)
}

/// Static profile of a parsed notebook.
pub fn profile_notebook(nb: &ParsedNotebook) -> NotebookProfile {
    let mut patterns = BTreeSet::new();
    for cell in nb.code_cells() {
        patterns.extend(detect_nondeterminism(&cell.source).1);
    }
    NotebookProfile {
        code_cells: nb.count(CellKind::Code),
        markdown_cells: nb.count(CellKind::Markdown),
        nondeterminism_patterns: crate::compare::NONDETERMINISM_PATTERNS
            .iter()
            .filter(|p| patterns.contains(**p))
            .map(|p| p.to_string())
            .collect(),
    }
}

/// Why a notebook is not executed, if it is not.
pub fn skip_reason(descriptor: &NotebookDescriptor) -> Option<String> {
    if let Some(e) = &descriptor.parse_error {
        return Some(format!("unparseable notebook: {e}"));
    }
    match &descriptor.language {
        Some(lang) if !lang.trim().to_ascii_lowercase().starts_with("python") => {
            Some(format!("non-Python notebook language `{lang}`"))
        }
        _ => None,
    }
}

pub struct Pipeline<'a> {
    pub config: &'a PipelineConfig,
    pub store: &'a Store,
    pub events: &'a EventLog,
    pool: rayon::ThreadPool,
}

enum RepoResult {
    Done,
    Infrastructure(String),
}

impl<'a> Pipeline<'a> {
    pub fn new(config: &'a PipelineConfig, store: &'a Store, events: &'a EventLog) -> Result<Self, PipelineError> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .thread_name(|i| format!("nbrepro-worker-{i}"))
            .build()
            .map_err(|e| PipelineError::Pool(e.to_string()))?;
        Ok(Self {
            config,
            store,
            events,
            pool,
        })
    }

    fn run_logdir(&self, run_id: &RunId) -> PathBuf {
        self.config.logdir.join(run_id.as_str())
    }

    // ---- stages 1 and 2 -------------------------------------------------

    /// Validate, acquire, discover and infer for every input. Creates one
    /// run per distinct repository under this pipeline's invocation id.
    pub fn infer(&self) -> Result<StageSummary, PipelineError> {
        let inputs = expand_inputs(&self.config.inputs)?;
        let options = self.config.inference_options()?;
        let mut seen = HashSet::new();
        let mut unique = Vec::new();
        for input in inputs {
            let key = match resolve_source(&input) {
                Ok(src) => src.repository_id(),
                Err(_) => RepositoryId::for_normalized_url(input.trim()),
            };
            if seen.insert(key) {
                unique.push(input);
            } else {
                log::warn!("duplicate input ignored: {input}");
            }
        }
        let results: Vec<(String, Result<RepoResult, PipelineError>)> = self.pool.install(|| {
            unique
                .par_iter()
                .map(|input| (input.clone(), self.infer_one(input, &options)))
                .collect()
        });
        let mut summary = StageSummary {
            invocation_id: self.events.invocation_id().to_string(),
            repositories: results.len(),
            ..Default::default()
        };
        for (input, result) in results {
            match result? {
                RepoResult::Done => {}
                RepoResult::Infrastructure(reason) => summary.infrastructure_failures.push(format!("{input}: {reason}")),
            }
        }
        Ok(summary)
    }

    fn record_unavailable(
        &self,
        repository_id: RepositoryId,
        url: &str,
        status: ProvisioningStatus,
        reason: String,
    ) -> Result<RunRecord, PipelineError> {
        let repo = Repository {
            repository_id: repository_id.clone(),
            url: url.to_string(),
            local_path: PathBuf::new(),
            accessible: false,
            has_requirements_file: false,
            requirement_manifests: Vec::new(),
            setup_manifests: Vec::new(),
            notebook_count: 0,
        };
        self.store.upsert_repository(&repo)?;
        let mut run = RunRecord::start(repository_id, self.events.invocation_id());
        run.provisioning_status = status;
        run.status_reason = Some(reason);
        run.finish();
        self.store.insert_run(&run)?;
        Ok(run)
    }

    fn infer_one(&self, input: &str, options: &InferenceOptions) -> Result<RepoResult, PipelineError> {
        let ev = self.events.scope("infer");
        let source = match resolve_source(input) {
            Ok(s) => s,
            Err(_) => {
                let id = RepositoryId::for_normalized_url(input.trim());
                let run = self.record_unavailable(
                    id.clone(),
                    input.trim(),
                    ProvisioningStatus::InvalidUrl,
                    "malformed repository URL".into(),
                )?;
                ev.repository(id).run(run.run_id).emit("invalid_url", Some(input.to_string()));
                return Ok(RepoResult::Done);
            }
        };
        let repository_id = source.repository_id();
        let ev = ev.repository(&repository_id);
        let url = source.normalized_url().to_string();
        match validate_repository(input, PROBE_TIMEOUT) {
            Ok(ValidationResult::Accessible) => {}
            Ok(verdict) => {
                let run = self.record_unavailable(
                    repository_id,
                    &url,
                    ProvisioningStatus::InvalidUrl,
                    format!("repository {verdict:?}"),
                )?;
                ev.run(run.run_id).emit("invalid_url", Some(format!("{verdict:?}")));
                return Ok(RepoResult::Done);
            }
            Err(e) => {
                let reason = format!("validation probe failed (retryable): {e}");
                let run = self.record_unavailable(repository_id, &url, ProvisioningStatus::NotProvisioned, reason.clone())?;
                ev.run(run.run_id).emit("probe_failed", Some(e.to_string()));
                return Ok(RepoResult::Infrastructure(reason));
            }
        }

        let mut run = RunRecord::start(repository_id.clone(), self.events.invocation_id());
        let ev = ev.run(&run.run_id);
        ev.emit("acquire_started", Some(url.clone()));
        let acquired = match acquire_repository(&source, &self.config.workdir, self.config.clone_timeout) {
            Ok(a) => a,
            Err(e) => {
                let reason = format!("acquisition failed: {e}");
                self.store.upsert_repository(&Repository {
                    repository_id: repository_id.clone(),
                    url,
                    local_path: self.config.workdir.join(repository_id.as_str()),
                    accessible: true,
                    has_requirements_file: false,
                    requirement_manifests: Vec::new(),
                    setup_manifests: Vec::new(),
                    notebook_count: 0,
                })?;
                run.status_reason = Some(reason.clone());
                run.finish();
                self.store.insert_run(&run)?;
                ev.emit("acquire_failed", Some(e.to_string()));
                return Ok(RepoResult::Infrastructure(reason));
            }
        };
        let repo = acquired.repository;
        run.revision = acquired.revision;
        self.store.upsert_repository(&repo)?;
        self.store.insert_run(&run)?;

        let descriptors = discover_notebooks(&repo);
        let mut parsed: Vec<(NotebookDescriptor, Option<ParsedNotebook>)> = Vec::new();
        for d in descriptors {
            let nb = if d.parse_error.is_none() {
                match load_notebook(&repo, &d) {
                    Ok(nb) => Some(nb),
                    Err(e) => {
                        let mut d = d;
                        d.parse_error = Some(e);
                        parsed.push((d, None));
                        continue;
                    }
                }
            } else {
                None
            };
            parsed.push((d, nb));
        }
        let rows: Vec<(NotebookDescriptor, Option<NotebookProfile>)> =
            parsed.iter().map(|(d, nb)| (d.clone(), nb.as_ref().map(profile_notebook))).collect();
        let count = self.store.replace_notebooks(&repo.repository_id, &rows)?;
        ev.emit("notebooks_discovered", Some(count.to_string()));
        for (d, _) in &parsed {
            if let Some(e) = &d.parse_error {
                ev.emit_for("notebook_unparseable", Some(d.notebook_id.to_string()), Some(e.clone()));
            }
        }

        let python: Vec<(&NotebookDescriptor, &ParsedNotebook)> = parsed
            .iter()
            .filter_map(|(d, nb)| nb.as_ref().filter(|nb| nb.is_python()).map(|nb| (d, nb)))
            .collect();
        if python.is_empty() {
            run.provisioning_status = ProvisioningStatus::NoPythonNotebooks;
            run.status_reason = Some(if parsed.is_empty() {
                "no notebook files".into()
            } else {
                "no parseable Python notebooks".into()
            });
            run.finish();
            self.store.update_run(&run)?;
            ev.emit("no_python_notebooks", None);
            return Ok(RepoResult::Done);
        }

        let spec = synthesize_dependency_spec(&repo, &python, options);
        let recipe = generate_build_recipe(&spec, &repo.local_path, &run.run_id, &self.config.base_image);
        write_build_context(&recipe).map_err(io_context(format!("writing build context for {}", repo.url)))?;
        self.store.set_run_recipe(&run.run_id, &spec, Some(&recipe.dockerfile_text))?;
        let dir = self.run_logdir(&run.run_id);
        std::fs::create_dir_all(&dir).map_err(io_context(format!("creating {}", dir.display())))?;
        let spec_json = serde_json::to_string_pretty(&spec).expect("spec serializes");
        std::fs::write(dir.join("dependency_spec.json"), spec_json).map_err(io_context("writing dependency spec"))?;
        for w in &spec.warnings {
            ev.emit("dependency_warning", Some(w.clone()));
        }
        ev.emit("dependencies_inferred", Some(spec.requirements.len().to_string()));
        run.finish();
        self.store.update_run(&run)?;
        Ok(RepoResult::Done)
    }

    // ---- stage 3 --------------------------------------------------------

    fn invocation_runs(&self, invocation: Option<&str>) -> Result<Vec<RunRecord>, PipelineError> {
        let invocation = match invocation {
            Some(i) => i.to_string(),
            None => self.store.latest_invocation()?.ok_or_else(|| {
                PipelineError::MissingPredecessor("store holds no runs; run `infer` first".into())
            })?,
        };
        Ok(self.store.runs_for_invocation(&invocation)?)
    }

    /// Build and execute every inferred repository of an invocation (the
    /// latest when `None`). Without a runtime, runs stay NotProvisioned.
    pub fn execute(
        &self,
        runtime: Option<&dyn ContainerRuntime>,
        invocation: Option<&str>,
    ) -> Result<StageSummary, PipelineError> {
        let runs = self.invocation_runs(invocation)?;
        let mut pending = Vec::new();
        for run in runs.iter().filter(|r| r.provisioning_status == ProvisioningStatus::NotProvisioned) {
            if let Some((spec, _)) = self.store.run_recipe(&run.run_id)? {
                pending.push((run.clone(), spec));
            }
        }
        let any_inferred = runs.iter().any(|r| r.provisioning_status != ProvisioningStatus::NotProvisioned)
            || !pending.is_empty();
        if !any_inferred && !runs.is_empty() && pending.is_empty() {
            return Err(PipelineError::MissingPredecessor(
                "no inferred repositories to execute; run `infer` first".into(),
            ));
        }
        let mut summary = StageSummary {
            invocation_id: runs.first().map(|r| r.invocation_id.clone()).unwrap_or_default(),
            repositories: runs.len(),
            ..Default::default()
        };
        let Some(runtime) = runtime else {
            for (mut run, _) in pending {
                run.status_reason = Some("container runtime unavailable; build and execution skipped".into());
                run.finish();
                self.store.update_run(&run)?;
                self.events
                    .scope("execute")
                    .repository(&run.repository_id)
                    .run(&run.run_id)
                    .emit("runtime_unavailable", None);
                summary.infrastructure_failures.push(format!("{}: container runtime unavailable", run.repository_id));
            }
            return Ok(summary);
        };
        let results: Vec<Result<RepoResult, PipelineError>> = self.pool.install(|| {
            pending
                .into_par_iter()
                .map(|(run, spec)| self.execute_repository(runtime, run, &spec))
                .collect()
        });
        for r in results {
            if let RepoResult::Infrastructure(reason) = r? {
                summary.infrastructure_failures.push(reason);
            }
        }
        Ok(summary)
    }

    fn execute_repository(
        &self,
        runtime: &dyn ContainerRuntime,
        mut run: RunRecord,
        spec: &DependencySpec,
    ) -> Result<RepoResult, PipelineError> {
        let ev = self.events.scope("execute").repository(&run.repository_id).run(&run.run_id);
        let Some(repo) = self.store.repository(&run.repository_id)? else {
            return Err(PipelineError::MissingPredecessor(format!("repository {} not in store", run.repository_id)));
        };
        if !repo.local_path.is_dir() {
            let reason = format!("working tree {} missing; rerun `infer`", repo.local_path.display());
            run.status_reason = Some(reason.clone());
            run.finish();
            self.store.update_run(&run)?;
            return Ok(RepoResult::Infrastructure(reason));
        }
        let recipe = generate_build_recipe(spec, &repo.local_path, &run.run_id, &self.config.base_image);
        write_build_context(&recipe).map_err(io_context("writing build context"))?;

        if let Err(e) = cleanup_previous(runtime, &repo.repository_id) {
            run.provisioning_status = ProvisioningStatus::BuildFailed;
            run.build_failure_phase = Some("Runtime".into());
            run.status_reason = Some(format!("cleanup failed: {e}"));
            run.finish();
            self.store.update_run(&run)?;
            ev.emit("cleanup_failed", Some(e.to_string()));
            return Ok(RepoResult::Infrastructure(format!("{}: {e}", repo.url)));
        }
        ev.emit("build_started", Some(recipe.image_tag.clone()));
        let build_log = self.run_logdir(&run.run_id).join("build.log");
        let image = match build_image(runtime, &recipe, &repo.repository_id, self.config.build_timeout, &build_log) {
            Ok(image) => image,
            Err(failure) => {
                run.provisioning_status = ProvisioningStatus::BuildFailed;
                run.build_failure_phase = Some(failure.phase.as_str().into());
                run.status_reason = Some(failure.to_string());
                run.finish();
                self.store.update_run(&run)?;
                ev.emit("build_failed", Some(failure.phase.as_str().into()));
                return Ok(RepoResult::Done);
            }
        };
        run.image_reference = Some(image.clone());
        run.provisioning_status = ProvisioningStatus::EnvironmentBuilt;
        ev.emit("build_succeeded", Some(image.clone()));

        let session = match ExecutionSession::open(runtime, &image, &repo.repository_id, &run.run_id, &self.config.limits) {
            Ok(s) => s,
            Err(e) => {
                run.status_reason = Some(format!("container start failed: {e}"));
                run.finish();
                self.store.update_run(&run)?;
                ev.emit("container_start_failed", Some(e.to_string()));
                return Ok(RepoResult::Infrastructure(format!("{}: {e}", repo.url)));
            }
        };
        let paths = self.config.execution_paths();
        let mut attempted = 0usize;
        let mut kernel_missing = 0usize;
        for row in self.store.notebooks(Some(&repo.repository_id))? {
            let d = &row.descriptor;
            let record = match skip_reason(d) {
                Some(reason) => ExecutionRecord::skipped(d, &run.run_id, reason),
                None => {
                    let original = load_notebook(&repo, d).ok();
                    ev.emit_for("notebook_started", Some(d.notebook_id.to_string()), Some(d.relative_path.clone()));
                    session.execute_notebook(d, original.as_ref(), self.config.exec_timeout, &paths)
                }
            };
            if record.status != ExecutionStatus::Skipped {
                attempted += 1;
                kernel_missing += (record.status == ExecutionStatus::KernelNotFound) as usize;
            }
            ev.emit_for("notebook_finished", Some(d.notebook_id.to_string()), Some(record.status.as_str().into()));
            self.store.put_execution(&record)?;
        }
        if let Err(e) = session.close() {
            log::warn!("removing container for {}: {e}", repo.url);
        }
        if attempted > 0 && kernel_missing == attempted {
            run.provisioning_status = ProvisioningStatus::KernelNotFound;
            run.status_reason = Some("no notebook could start a kernel".into());
        }
        run.finish();
        self.store.update_run(&run)?;
        ev.emit("repository_finished", Some(run.provisioning_status.as_str().into()));
        Ok(RepoResult::Done)
    }

    // ---- stage 4 --------------------------------------------------------

    /// Compares executed artifacts against committed outputs. With
    /// `require_artifacts`, an invocation that was never executed is an error.
    pub fn compare(&self, invocation: Option<&str>, require_artifacts: bool) -> Result<usize, PipelineError> {
        let runs = self.invocation_runs(invocation)?;
        let mut work = Vec::new();
        let mut executions_seen = 0usize;
        for run in &runs {
            let execs = self.store.executions(&run.run_id)?;
            executions_seen += execs.len();
            let repo = self.store.repository(&run.repository_id)?;
            let notebooks: HashMap<_, _> = self
                .store
                .notebooks(Some(&run.repository_id))?
                .into_iter()
                .map(|n| (n.descriptor.notebook_id.clone(), n.descriptor))
                .collect();
            for e in execs {
                if let (Some(path), Some(repo), Some(d)) =
                    (e.executed_notebook_path.clone(), repo.as_ref(), notebooks.get(&e.notebook_id))
                {
                    work.push((run.run_id.clone(), repo.clone(), d.clone(), path));
                }
            }
        }
        if require_artifacts && work.is_empty() {
            let ids: Vec<String> = runs.iter().map(|r| r.run_id.to_string()).collect();
            let hint = if executions_seen == 0 { "; run `execute` first" } else { "" };
            return Err(PipelineError::MissingPredecessor(format!(
                "no executed artifacts for run {}{hint}",
                ids.join(", ")
            )));
        }
        let results: Vec<Result<bool, PipelineError>> = self.pool.install(|| {
            work.par_iter()
                .map(|(run_id, repo, d, artifact)| self.compare_one(run_id, repo, d, artifact))
                .collect()
        });
        let mut compared = 0;
        for r in results {
            compared += r? as usize;
        }
        Ok(compared)
    }

    fn compare_one(&self, run_id: &RunId, repo: &Repository, d: &NotebookDescriptor, artifact: &Path) -> Result<bool, PipelineError> {
        let ev = self.events.scope("compare").repository(&repo.repository_id).run(run_id);
        let original = match load_notebook(repo, d) {
            Ok(nb) => nb,
            Err(e) => {
                ev.emit_for("original_unreadable", Some(d.notebook_id.to_string()), Some(e));
                return Ok(false);
            }
        };
        let executed = match std::fs::read(artifact).map_err(|e| e.to_string()).and_then(|b| parse_notebook(&b).map_err(|e| e.to_string())) {
            Ok(nb) => nb,
            Err(e) => {
                ev.emit_for("artifact_unreadable", Some(d.notebook_id.to_string()), Some(e));
                return Ok(false);
            }
        };
        let metrics = compute_metrics(&d.notebook_id, run_id, &original, &executed);
        self.store.put_metrics(&metrics)?;
        let dir = self.run_logdir(run_id);
        std::fs::create_dir_all(&dir).map_err(io_context(format!("creating {}", dir.display())))?;
        let mut json = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
        json.push('\n');
        std::fs::write(dir.join(format!("{}.comparison.json", d.notebook_id)), json)
            .map_err(io_context("writing comparison"))?;
        ev.emit_for(
            "compared",
            Some(d.notebook_id.to_string()),
            Some(metrics.score.map(|s| format!("{s}")).unwrap_or_else(|| "undefined".into())),
        );
        Ok(true)
    }

    // ---- classification and reporting -----------------------------------

    /// Imports a baseline and assigns outcome classes for the latest run of
    /// every repository. Returns (classified, unmatched baseline rows).
    pub fn classify(&self, baseline: &Path) -> Result<(usize, usize), PipelineError> {
        let file = std::fs::File::open(baseline).map_err(io_context(format!("opening baseline {}", baseline.display())))?;
        let records = read_baseline(file)?;
        self.store.replace_baseline(&records)?;
        let runs = self.store.latest_runs()?;
        if runs.is_empty() {
            return Err(PipelineError::MissingPredecessor("store holds no runs; run `run` or `infer` first".into()));
        }
        let by_id: HashMap<_, _> = records.iter().map(|b| (b.notebook_id.clone(), b)).collect();
        let mut matched = HashSet::new();
        let mut rows = Vec::new();
        for run in &runs {
            let execs: HashMap<_, _> =
                self.store.executions(&run.run_id)?.into_iter().map(|e| (e.notebook_id.clone(), e)).collect();
            let metrics: HashMap<_, _> =
                self.store.metrics(&run.run_id)?.into_iter().map(|m| (m.notebook_id.clone(), m)).collect();
            for nb in self.store.notebooks(Some(&run.repository_id))? {
                let id = &nb.descriptor.notebook_id;
                let Some(b) = by_id.get(id) else { continue };
                matched.insert(id.clone());
                let exec = execs.get(id);
                let m = metrics.get(id);
                let current = CurrentOutcome {
                    provisioning: run.provisioning_status,
                    execution: exec.map(|e| e.status),
                    error_types: exec.map(|e| e.errors.iter().map(|x| x.error_type.clone()).collect()).unwrap_or_default(),
                    diff_cells: m.filter(|m| !m.structural_mismatch).map(|m| m.different_count + m.nondeterministic_count),
                    score: m.and_then(|m| m.score),
                };
                rows.push(OutcomeRow {
                    notebook_id: id.clone(),
                    run_id: run.run_id.clone(),
                    repository_id: run.repository_id.clone(),
                    class: assign_outcome_class(b, &current),
                    baseline_install_failed: b.prev_dependency_install == InstallOutcome::Fail,
                });
            }
        }
        let run_ids: Vec<RunId> = runs.iter().map(|r| r.run_id.clone()).collect();
        self.store.replace_outcomes(&run_ids, &rows)?;
        let unmatched = records.len() - matched.len();
        self.events
            .scope("classify")
            .emit("classified", Some(format!("{} classified, {unmatched} unmatched baseline rows", rows.len())));
        Ok((rows.len(), unmatched))
    }

    pub fn report(&self) -> Result<CorpusSummary, PipelineError> {
        let summary = aggregate_corpus(self.store)?;
        for v in summary.invariant_violations() {
            log::error!("report invariant violated: {v}");
        }
        emit_reports(&summary, &self.config.report_dir, chrono::Utc::now())?;
        self.events.scope("report").emit("reports_written", Some(self.config.report_dir.display().to_string()));
        Ok(summary)
    }

    /// All stages in order for a fresh invocation.
    pub fn run_all(&self, runtime: Option<&dyn ContainerRuntime>) -> Result<StageSummary, PipelineError> {
        let mut summary = self.infer()?;
        let invocation = summary.invocation_id.clone();
        summary.merge(self.execute(runtime, Some(&invocation))?);
        self.compare(Some(&invocation), false)?;
        if let Some(baseline) = &self.config.baseline {
            self.classify(baseline)?;
        }
        self.report()?;
        Ok(summary)
    }
}

/// Convenience for callers that only need a one-off local source id.
pub fn repository_id_for_input(input: &str) -> RepositoryId {
    match resolve_source(input) {
        Ok(RepositorySource::Remote { normalized_url }) | Ok(RepositorySource::LocalDirectory { normalized_url, .. }) => {
            RepositoryId::for_normalized_url(&normalized_url)
        }
        Err(_) => RepositoryId::for_normalized_url(input.trim()),
    }
}
