//! Baseline comparison and outcome classes.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_url, ProvisioningStatus};
use crate::executor::{normalize_error_type, ErrorCategory, ExecutionStatus};
use crate::ids::{NotebookId, RepositoryId};

pub const BASELINE_HEADER: [&str; 5] = [
    "notebook_id",
    "prev_dependency_install",
    "prev_execution_status",
    "prev_diff_cells",
    "prev_duration_s",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstallOutcome {
    Success,
    Fail,
}

impl InstallOutcome {
    /// Accepts the spellings found in exported tables ("Sucess", "failed", ...).
    pub fn parse_lenient(text: &str) -> Option<Self> {
        let t = text.trim().to_ascii_lowercase();
        if t.starts_with("suc") || t == "ok" || t == "true" || t == "1" {
            Some(InstallOutcome::Success)
        } else if t.starts_with("fail") || t == "false" || t == "0" || t.contains("error") {
            Some(InstallOutcome::Fail)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub notebook_id: NotebookId,
    pub prev_dependency_install: InstallOutcome,
    pub prev_execution_status: String,
    pub prev_diff_cells: Option<u32>,
    pub prev_duration_s: Option<f64>,
}

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("baseline file: {0}")]
    Csv(#[from] csv::Error),
    #[error("baseline header must be `{}`, found `{found}`", BASELINE_HEADER.join(","))]
    Header { found: String },
    #[error("baseline line {line}: {reason}")]
    Row { line: u64, reason: String },
}

/// A baseline key is either a notebook id or `<repository url>::<relative path>`.
pub fn resolve_baseline_key(key: &str) -> Option<NotebookId> {
    let key = key.trim();
    if let Some((url, path)) = key.rsplit_once("::") {
        let normalized = normalize_url(url)?;
        let repo = RepositoryId::for_normalized_url(&normalized);
        return Some(NotebookId::for_path(&repo, path.trim().trim_start_matches("./")));
    }
    (!key.is_empty()).then(|| NotebookId::from_raw(key))
}

fn optional<T: std::str::FromStr>(text: &str) -> Result<Option<T>, String> {
    let t = text.trim();
    if t.is_empty() || t == "-" || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("null") {
        return Ok(None);
    }
    t.parse().map(Some).map_err(|_| format!("not a number: {t:?}"))
}

/// Reads a baseline export (UTF-8, comma-delimited, fixed header).
pub fn read_baseline<R: Read>(reader: R) -> Result<Vec<BaselineRecord>, BaselineError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let found: Vec<&str> = headers.iter().collect();
    if found != BASELINE_HEADER {
        return Err(BaselineError::Header { found: found.join(",") });
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |reason: String| BaselineError::Row { line, reason };
        let notebook_id = resolve_baseline_key(&row[0]).ok_or_else(|| bad(format!("unusable notebook_id {:?}", &row[0])))?;
        let prev_dependency_install = InstallOutcome::parse_lenient(&row[1])
            .ok_or_else(|| bad(format!("prev_dependency_install must be Success or Fail, got {:?}", &row[1])))?;
        records.push(BaselineRecord {
            notebook_id,
            prev_dependency_install,
            prev_execution_status: row[2].to_string(),
            prev_diff_cells: optional(&row[3]).map_err(bad)?,
            prev_duration_s: optional(&row[4]).map_err(|r| BaselineError::Row { line, reason: r })?,
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OutcomeClass {
    #[serde(rename = "A_EnvironmentResolved")]
    EnvironmentResolved,
    #[serde(rename = "B_PersistentError")]
    PersistentError,
    #[serde(rename = "C_ReproducibilityDrift")]
    ReproducibilityDrift,
    #[serde(rename = "D_Regression")]
    Regression,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 4] = [
        OutcomeClass::EnvironmentResolved,
        OutcomeClass::PersistentError,
        OutcomeClass::ReproducibilityDrift,
        OutcomeClass::Regression,
    ];

    pub fn letter(self) -> char {
        match self {
            OutcomeClass::EnvironmentResolved => 'A',
            OutcomeClass::PersistentError => 'B',
            OutcomeClass::ReproducibilityDrift => 'C',
            OutcomeClass::Regression => 'D',
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeClass::EnvironmentResolved => "A_EnvironmentResolved",
            OutcomeClass::PersistentError => "B_PersistentError",
            OutcomeClass::ReproducibilityDrift => "C_ReproducibilityDrift",
            OutcomeClass::Regression => "D_Regression",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What the current pipeline observed for one notebook.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentOutcome {
    pub provisioning: ProvisioningStatus,
    /// `None` when no execution was attempted.
    pub execution: Option<ExecutionStatus>,
    pub error_types: Vec<String>,
    /// Different plus non-deterministic cells.
    pub diff_cells: Option<usize>,
    pub score: Option<f64>,
}

/// How far a pipeline got with a notebook.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Reach {
    /// No result at all: invalid source, missing notebook, skipped.
    Unavailable,
    /// Stopped before any cell ran: install or build failure, missing kernel.
    Provisioning,
    Errored,
    Succeeded,
}

fn current_reach(cur: &CurrentOutcome) -> Reach {
    match cur.provisioning {
        ProvisioningStatus::InvalidUrl | ProvisioningStatus::NoPythonNotebooks => return Reach::Unavailable,
        ProvisioningStatus::BuildFailed | ProvisioningStatus::KernelNotFound => return Reach::Provisioning,
        ProvisioningStatus::EnvironmentBuilt | ProvisioningStatus::NotProvisioned => {}
    }
    match cur.execution {
        None | Some(ExecutionStatus::Skipped) | Some(ExecutionStatus::NotebookNotFound) => Reach::Unavailable,
        Some(ExecutionStatus::KernelNotFound) => Reach::Provisioning,
        Some(ExecutionStatus::ErroredButCompleted) | Some(ExecutionStatus::Timeout) => Reach::Errored,
        Some(ExecutionStatus::Success) => Reach::Succeeded,
    }
}

/// Reading of a baseline free-text status.
#[derive(Debug, Clone, PartialEq, Eq)]
enum BaselineStatus {
    Success,
    Unavailable,
    Stopped,
    Error(String),
}

fn baseline_status(text: &str) -> BaselineStatus {
    let t = text.trim().trim_matches(|c| c == '<' || c == '>').trim();
    let lower = t.to_ascii_lowercase();
    let compact: String = lower.split_whitespace().collect();
    if t.is_empty() || t == "-" {
        BaselineStatus::Unavailable
    } else if compact.starts_with("suc") {
        BaselineStatus::Success
    } else if compact.contains("skip") || compact.contains("notebooknotfound") || compact.contains("invalidurl") {
        BaselineStatus::Unavailable
    } else if compact.contains("kernelnotfound") || compact.contains("installdependency") {
        BaselineStatus::Stopped
    } else {
        BaselineStatus::Error(normalize_error_type(t))
    }
}

fn baseline_reach(b: &BaselineRecord) -> Reach {
    if b.prev_dependency_install == InstallOutcome::Fail {
        return Reach::Provisioning;
    }
    match baseline_status(&b.prev_execution_status) {
        BaselineStatus::Success => Reach::Succeeded,
        BaselineStatus::Unavailable => Reach::Unavailable,
        BaselineStatus::Stopped => Reach::Provisioning,
        BaselineStatus::Error(_) => Reach::Errored,
    }
}

/// Class of one notebook given its baseline. Precedence D > A > B > C.
pub fn assign_outcome_class(baseline: &BaselineRecord, current: &CurrentOutcome) -> OutcomeClass {
    let before = baseline_reach(baseline);
    let now = current_reach(current);
    let regression = now <= Reach::Provisioning
        || (before >= Reach::Errored && now < before)
        || (before == Reach::Unavailable && now == Reach::Errored);
    if regression {
        return OutcomeClass::Regression;
    }
    if before == Reach::Provisioning || (before == Reach::Errored && now == Reach::Succeeded) {
        return OutcomeClass::EnvironmentResolved;
    }
    if before == Reach::Errored && now == Reach::Errored {
        return OutcomeClass::PersistentError;
    }
    debug_assert!(now == Reach::Succeeded, "remaining pairs end in success");
    OutcomeClass::ReproducibilityDrift
}

/// Whether the baseline error and a current error share a type.
pub fn same_error_persists(baseline: &BaselineRecord, current: &CurrentOutcome) -> bool {
    match baseline_status(&baseline.prev_execution_status) {
        BaselineStatus::Error(t) => current.error_types.iter().any(|c| normalize_error_type(c) == t),
        _ => false,
    }
}

/// Category of the baseline failure, when the status names an exception.
pub fn baseline_error_category(baseline: &BaselineRecord) -> Option<ErrorCategory> {
    if baseline.prev_dependency_install == InstallOutcome::Fail {
        return Some(ErrorCategory::Dependency);
    }
    match baseline_status(&baseline.prev_execution_status) {
        BaselineStatus::Error(t) => Some(crate::executor::classify_error(&t, "").0),
        BaselineStatus::Stopped => Some(ErrorCategory::Dependency),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeAssignment {
    pub notebook_id: NotebookId,
    pub repository_id: RepositoryId,
    pub baseline_install_failed: bool,
    pub class: OutcomeClass,
}

/// Percentage with the given denominator; `None` when it is zero.
pub fn percentage(part: usize, whole: usize) -> Option<f64> {
    (whole > 0).then(|| 100.0 * part as f64 / whole as f64)
}

/// Repositories whose baseline dependency install failed, and how many of
/// them containerization resolved (every such notebook now in class A).
pub fn resolution_counts(assignments: &[OutcomeAssignment]) -> (usize, usize) {
    let mut repos: BTreeMap<&RepositoryId, bool> = BTreeMap::new();
    for a in assignments.iter().filter(|a| a.baseline_install_failed) {
        let resolved = repos.entry(&a.repository_id).or_insert(true);
        *resolved &= a.class == OutcomeClass::EnvironmentResolved;
    }
    let resolved = repos.values().filter(|r| **r).count();
    (resolved, repos.len())
}

pub fn resolution_rate(assignments: &[OutcomeAssignment]) -> Option<f64> {
    let (resolved, failed) = resolution_counts(assignments);
    percentage(resolved, failed)
}
