//! Embedded relational store for repositories, runs, executions and metrics.

use std::path::Path;
use std::sync::{Mutex, MutexGuard};

use chrono::{DateTime, NaiveDateTime, Utc};
use rusqlite::{params, Connection, OptionalExtension, Row};
use serde::{de::DeserializeOwned, Serialize};
use thiserror::Error;

use crate::compare::ReproducibilityMetrics;
use crate::corpus::{NotebookDescriptor, ProvisioningStatus, Repository, RunRecord};
use crate::depinfer::DependencySpec;
use crate::executor::{ErrorCategory, ExecutionError, ExecutionRecord, ExecutionStatus};
use crate::ids::{NotebookId, RepositoryId, RunId};
use crate::outcome::{BaselineRecord, InstallOutcome, OutcomeClass};

pub const SCHEMA_VERSION: i64 = 1;

const SCHEMA: &str = r#"
CREATE TABLE IF NOT EXISTS repositories (
    repository_id          TEXT PRIMARY KEY,
    url                    TEXT NOT NULL UNIQUE,
    local_path             TEXT NOT NULL,
    accessible             INTEGER NOT NULL,
    has_requirements_file  INTEGER NOT NULL,
    requirement_manifests  TEXT NOT NULL,
    setup_manifests        TEXT NOT NULL,
    notebook_count         INTEGER NOT NULL CHECK (notebook_count >= 0)
);
CREATE TABLE IF NOT EXISTS notebooks (
    notebook_id             TEXT PRIMARY KEY,
    repository_id           TEXT NOT NULL REFERENCES repositories(repository_id),
    relative_path           TEXT NOT NULL,
    kernel_name             TEXT NOT NULL,
    language                TEXT,
    nbformat_major          INTEGER NOT NULL,
    nbformat_minor          INTEGER NOT NULL,
    parse_error             TEXT,
    code_cell_count         INTEGER,
    markdown_cell_count     INTEGER,
    nondeterminism_patterns TEXT NOT NULL DEFAULT '[]',
    UNIQUE (repository_id, relative_path)
);
CREATE TABLE IF NOT EXISTS repository_runs (
    run_id              TEXT PRIMARY KEY,
    repository_id       TEXT NOT NULL REFERENCES repositories(repository_id),
    invocation_id       TEXT NOT NULL,
    started_at          TEXT NOT NULL,
    finished_at         TEXT NOT NULL CHECK (finished_at >= started_at),
    provisioning_status TEXT NOT NULL,
    status_reason       TEXT,
    image_reference     TEXT,
    revision            TEXT,
    pipeline_version    TEXT NOT NULL,
    build_failure_phase TEXT,
    dependency_spec     TEXT,
    dockerfile          TEXT,
    UNIQUE (repository_id, invocation_id)
);
CREATE TABLE IF NOT EXISTS notebook_executions (
    notebook_id            TEXT NOT NULL REFERENCES notebooks(notebook_id),
    run_id                 TEXT NOT NULL REFERENCES repository_runs(run_id),
    status                 TEXT NOT NULL,
    status_reason          TEXT,
    duration_s             REAL CHECK (duration_s IS NULL OR duration_s >= 0),
    code_cell_count        INTEGER NOT NULL,
    markdown_code_ratio    REAL,
    executed_notebook_path TEXT,
    kernel_used            TEXT,
    PRIMARY KEY (notebook_id, run_id)
);
CREATE TABLE IF NOT EXISTS execution_errors (
    notebook_id  TEXT NOT NULL,
    run_id       TEXT NOT NULL,
    error_type   TEXT NOT NULL,
    category     TEXT NOT NULL,
    message      TEXT NOT NULL,
    cell_index   INTEGER NOT NULL,
    count        INTEGER NOT NULL CHECK (count >= 1),
    unrecognized INTEGER NOT NULL,
    PRIMARY KEY (notebook_id, run_id, cell_index, error_type),
    FOREIGN KEY (notebook_id, run_id) REFERENCES notebook_executions(notebook_id, run_id)
);
CREATE TABLE IF NOT EXISTS reproducibility_metrics (
    notebook_id             TEXT NOT NULL,
    run_id                  TEXT NOT NULL,
    identical_count         INTEGER NOT NULL,
    different_count         INTEGER NOT NULL,
    nondeterministic_count  INTEGER NOT NULL,
    identical_indices       TEXT NOT NULL,
    different_indices       TEXT NOT NULL,
    nondeterministic_indices TEXT NOT NULL,
    total_code_cells        INTEGER NOT NULL,
    score                   REAL CHECK (score IS NULL OR (score >= 0 AND score <= 1)),
    category                TEXT NOT NULL,
    structural_mismatch     INTEGER NOT NULL,
    pattern_flagged_cells   TEXT NOT NULL,
    cells                   TEXT NOT NULL,
    PRIMARY KEY (notebook_id, run_id),
    FOREIGN KEY (notebook_id, run_id) REFERENCES notebook_executions(notebook_id, run_id)
);
CREATE TABLE IF NOT EXISTS baseline_records (
    notebook_id             TEXT PRIMARY KEY,
    prev_dependency_install TEXT NOT NULL,
    prev_execution_status   TEXT NOT NULL,
    prev_diff_cells         INTEGER,
    prev_duration_s         REAL
);
CREATE TABLE IF NOT EXISTS outcome_classes (
    notebook_id             TEXT NOT NULL REFERENCES notebooks(notebook_id),
    run_id                  TEXT NOT NULL REFERENCES repository_runs(run_id),
    class                   TEXT NOT NULL,
    baseline_install_failed INTEGER NOT NULL,
    PRIMARY KEY (notebook_id, run_id)
);
CREATE INDEX IF NOT EXISTS runs_by_repository ON repository_runs(repository_id, started_at);
"#;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store: {0}")]
    Sql(#[from] rusqlite::Error),
    #[error("store: corrupt column {column}: {reason}")]
    Corrupt { column: &'static str, reason: String },
    #[error("store schema version {found} is newer than supported version {SCHEMA_VERSION}")]
    SchemaVersion { found: i64 },
}

pub type StoreResult<T> = Result<T, StoreError>;

/// Static facts about a parsed notebook, stored next to its descriptor.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NotebookProfile {
    pub code_cells: usize,
    pub markdown_cells: usize,
    pub nondeterminism_patterns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NotebookRow {
    pub descriptor: NotebookDescriptor,
    pub profile: Option<NotebookProfile>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutcomeRow {
    pub notebook_id: NotebookId,
    pub run_id: RunId,
    pub repository_id: RepositoryId,
    pub class: OutcomeClass,
    pub baseline_install_failed: bool,
}

/// All store writes go through one connection guarded by a mutex.
pub struct Store {
    conn: Mutex<Connection>,
}

const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.6fZ";

fn time_text(t: &DateTime<Utc>) -> String {
    t.format(TIME_FORMAT).to_string()
}

fn parse_time(text: &str) -> StoreResult<DateTime<Utc>> {
    NaiveDateTime::parse_from_str(text, TIME_FORMAT)
        .map(|n| n.and_utc())
        .map_err(|e| StoreError::Corrupt {
            column: "timestamp",
            reason: e.to_string(),
        })
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

fn from_json<T: DeserializeOwned>(column: &'static str, text: &str) -> StoreResult<T> {
    serde_json::from_str(text).map_err(|e| StoreError::Corrupt {
        column,
        reason: e.to_string(),
    })
}

fn enum_col<T>(column: &'static str, text: &str, parse: impl Fn(&str) -> Option<T>) -> StoreResult<T> {
    parse(text).ok_or_else(|| StoreError::Corrupt {
        column,
        reason: format!("unknown value {text:?}"),
    })
}

impl Store {
    pub fn open(path: &Path) -> StoreResult<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| {
                StoreError::Sql(rusqlite::Error::InvalidPath(format!("{}: {e}", parent.display()).into()))
            })?;
        }
        Self::init(Connection::open(path)?)
    }

    pub fn open_in_memory() -> StoreResult<Self> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> StoreResult<Self> {
        conn.pragma_update(None, "foreign_keys", true)?;
        conn.pragma_update(None, "busy_timeout", 10_000)?;
        let _: String = conn.query_row("PRAGMA journal_mode = WAL", [], |r| r.get(0))?;
        let version: i64 = conn.query_row("PRAGMA user_version", [], |r| r.get(0))?;
        if version > SCHEMA_VERSION {
            return Err(StoreError::SchemaVersion { found: version });
        }
        conn.execute_batch(SCHEMA)?;
        conn.pragma_update(None, "user_version", SCHEMA_VERSION)?;
        Ok(Self { conn: Mutex::new(conn) })
    }

    fn conn(&self) -> MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    // ---- repositories -------------------------------------------------

    pub fn upsert_repository(&self, repo: &Repository) -> StoreResult<()> {
        self.conn().execute(
            "INSERT INTO repositories (repository_id, url, local_path, accessible, has_requirements_file,
                                       requirement_manifests, setup_manifests, notebook_count)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)
             ON CONFLICT(repository_id) DO UPDATE SET
                url = excluded.url, local_path = excluded.local_path, accessible = excluded.accessible,
                has_requirements_file = excluded.has_requirements_file,
                requirement_manifests = excluded.requirement_manifests,
                setup_manifests = excluded.setup_manifests",
            params![
                repo.repository_id.as_str(),
                repo.url,
                repo.local_path.to_string_lossy(),
                repo.accessible,
                repo.has_requirements_file,
                to_json(&repo.requirement_manifests),
                to_json(&repo.setup_manifests),
                0i64,
            ],
        )?;
        Ok(())
    }

    fn repository_from_row(row: &Row<'_>) -> rusqlite::Result<(Repository, String, String)> {
        Ok((
            Repository {
                repository_id: RepositoryId::from_raw(row.get::<_, String>(0)?),
                url: row.get(1)?,
                local_path: row.get::<_, String>(2)?.into(),
                accessible: row.get(3)?,
                has_requirements_file: row.get(4)?,
                requirement_manifests: Vec::new(),
                setup_manifests: Vec::new(),
                notebook_count: row.get::<_, i64>(7)? as usize,
            },
            row.get(5)?,
            row.get(6)?,
        ))
    }

    const REPO_COLUMNS: &'static str = "repository_id, url, local_path, accessible, has_requirements_file, \
                                        requirement_manifests, setup_manifests, notebook_count";

    fn finish_repository((mut repo, reqs, setups): (Repository, String, String)) -> StoreResult<Repository> {
        repo.requirement_manifests = from_json("requirement_manifests", &reqs)?;
        repo.setup_manifests = from_json("setup_manifests", &setups)?;
        Ok(repo)
    }

    pub fn repository(&self, id: &RepositoryId) -> StoreResult<Option<Repository>> {
        let conn = self.conn();
        let raw = conn
            .query_row(
                &format!("SELECT {} FROM repositories WHERE repository_id = ?1", Self::REPO_COLUMNS),
                [id.as_str()],
                Self::repository_from_row,
            )
            .optional()?;
        raw.map(Self::finish_repository).transpose()
    }

    pub fn repositories(&self) -> StoreResult<Vec<Repository>> {
        let conn = self.conn();
        let mut stmt =
            conn.prepare(&format!("SELECT {} FROM repositories ORDER BY repository_id", Self::REPO_COLUMNS))?;
        let rows = stmt.query_map([], Self::repository_from_row)?.collect::<Result<Vec<_>, _>>()?;
        rows.into_iter().map(Self::finish_repository).collect()
    }

    // ---- notebooks ----------------------------------------------------

    /// Records the notebooks found in a repository. Rows for files that
    /// disappeared are dropped unless executions still reference them; the
    /// repository's notebook_count is set to the resulting row count.
    pub fn replace_notebooks(
        &self,
        repository_id: &RepositoryId,
        notebooks: &[(NotebookDescriptor, Option<NotebookProfile>)],
    ) -> StoreResult<usize> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        {
            let mut upsert = tx.prepare(
                "INSERT INTO notebooks (notebook_id, repository_id, relative_path, kernel_name, language,
                     nbformat_major, nbformat_minor, parse_error, code_cell_count, markdown_cell_count,
                     nondeterminism_patterns)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11)
                 ON CONFLICT(notebook_id) DO UPDATE SET
                     kernel_name = excluded.kernel_name, language = excluded.language,
                     nbformat_major = excluded.nbformat_major, nbformat_minor = excluded.nbformat_minor,
                     parse_error = excluded.parse_error, code_cell_count = excluded.code_cell_count,
                     markdown_cell_count = excluded.markdown_cell_count,
                     nondeterminism_patterns = excluded.nondeterminism_patterns",
            )?;
            for (d, profile) in notebooks {
                upsert.execute(params![
                    d.notebook_id.as_str(),
                    repository_id.as_str(),
                    d.relative_path,
                    d.kernel_name,
                    d.language,
                    d.nbformat_version.0,
                    d.nbformat_version.1,
                    d.parse_error,
                    profile.as_ref().map(|p| p.code_cells as i64),
                    profile.as_ref().map(|p| p.markdown_cells as i64),
                    to_json(&profile.as_ref().map(|p| p.nondeterminism_patterns.clone()).unwrap_or_default()),
                ])?;
            }
            let keep: Vec<&str> = notebooks.iter().map(|(d, _)| d.notebook_id.as_str()).collect();
            let mut existing = tx.prepare(
                "SELECT notebook_id FROM notebooks n WHERE repository_id = ?1
                   AND NOT EXISTS (SELECT 1 FROM notebook_executions e WHERE e.notebook_id = n.notebook_id)
                   AND NOT EXISTS (SELECT 1 FROM outcome_classes o WHERE o.notebook_id = n.notebook_id)",
            )?;
            let stale: Vec<String> = existing
                .query_map([repository_id.as_str()], |r| r.get(0))?
                .collect::<Result<Vec<String>, _>>()?
                .into_iter()
                .filter(|id| !keep.contains(&id.as_str()))
                .collect();
            for id in stale {
                tx.execute("DELETE FROM notebooks WHERE notebook_id = ?1", [id])?;
            }
        }
        let count: i64 = tx.query_row(
            "SELECT COUNT(*) FROM notebooks WHERE repository_id = ?1",
            [repository_id.as_str()],
            |r| r.get(0),
        )?;
        tx.execute(
            "UPDATE repositories SET notebook_count = ?2 WHERE repository_id = ?1",
            params![repository_id.as_str(), count],
        )?;
        tx.commit()?;
        Ok(count as usize)
    }

    fn notebook_from_row(row: &Row<'_>) -> rusqlite::Result<(NotebookRow, String)> {
        let code: Option<i64> = row.get(8)?;
        let md: Option<i64> = row.get(9)?;
        Ok((
            NotebookRow {
                descriptor: NotebookDescriptor {
                    notebook_id: NotebookId::from_raw(row.get::<_, String>(0)?),
                    repository_id: RepositoryId::from_raw(row.get::<_, String>(1)?),
                    relative_path: row.get(2)?,
                    kernel_name: row.get(3)?,
                    language: row.get(4)?,
                    nbformat_version: (row.get(5)?, row.get(6)?),
                    parse_error: row.get(7)?,
                },
                profile: code.map(|c| NotebookProfile {
                    code_cells: c as usize,
                    markdown_cells: md.unwrap_or(0) as usize,
                    nondeterminism_patterns: Vec::new(),
                }),
            },
            row.get(10)?,
        ))
    }

    fn finish_notebook((mut row, patterns): (NotebookRow, String)) -> StoreResult<NotebookRow> {
        if let Some(p) = row.profile.as_mut() {
            p.nondeterminism_patterns = from_json("nondeterminism_patterns", &patterns)?;
        }
        Ok(row)
    }

    const NOTEBOOK_COLUMNS: &'static str = "notebook_id, repository_id, relative_path, kernel_name, language, \
         nbformat_major, nbformat_minor, parse_error, code_cell_count, markdown_cell_count, nondeterminism_patterns";

    /// Notebooks of one repository (or all), sorted by repository and path.
    pub fn notebooks(&self, repository_id: Option<&RepositoryId>) -> StoreResult<Vec<NotebookRow>> {
        let conn = self.conn();
        let rows = match repository_id {
            Some(id) => {
                let mut stmt = conn.prepare(&format!(
                    "SELECT {} FROM notebooks WHERE repository_id = ?1 ORDER BY relative_path",
                    Self::NOTEBOOK_COLUMNS
                ))?;
                let rows = stmt.query_map([id.as_str()], Self::notebook_from_row)?.collect::<Result<Vec<_>, _>>()?;
                rows
            }
            None => {
                let mut stmt = conn.prepare(&format!(
                    "SELECT {} FROM notebooks ORDER BY repository_id, relative_path",
                    Self::NOTEBOOK_COLUMNS
                ))?;
                let rows = stmt.query_map([], Self::notebook_from_row)?.collect::<Result<Vec<_>, _>>()?;
                rows
            }
        };
        rows.into_iter().map(Self::finish_notebook).collect()
    }

    // ---- runs ---------------------------------------------------------

    pub fn insert_run(&self, run: &RunRecord) -> StoreResult<()> {
        self.conn().execute(
            "INSERT INTO repository_runs (run_id, repository_id, invocation_id, started_at, finished_at,
                 provisioning_status, status_reason, image_reference, revision, pipeline_version, build_failure_phase)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11)",
            params![
                run.run_id.as_str(),
                run.repository_id.as_str(),
                run.invocation_id,
                time_text(&run.started_at),
                time_text(&run.finished_at),
                run.provisioning_status.as_str(),
                run.status_reason,
                run.image_reference,
                run.revision,
                run.pipeline_version,
                run.build_failure_phase,
            ],
        )?;
        Ok(())
    }

    pub fn update_run(&self, run: &RunRecord) -> StoreResult<()> {
        let changed = self.conn().execute(
            "UPDATE repository_runs SET finished_at = ?2, provisioning_status = ?3, status_reason = ?4,
                 image_reference = ?5, revision = ?6, build_failure_phase = ?7
             WHERE run_id = ?1",
            params![
                run.run_id.as_str(),
                time_text(&run.finished_at),
                run.provisioning_status.as_str(),
                run.status_reason,
                run.image_reference,
                run.revision,
                run.build_failure_phase,
            ],
        )?;
        if changed == 0 {
            return Err(StoreError::Sql(rusqlite::Error::QueryReturnedNoRows));
        }
        Ok(())
    }

    pub fn set_run_recipe(&self, run_id: &RunId, spec: &DependencySpec, dockerfile: Option<&str>) -> StoreResult<()> {
        self.conn().execute(
            "UPDATE repository_runs SET dependency_spec = ?2, dockerfile = ?3 WHERE run_id = ?1",
            params![run_id.as_str(), to_json(spec), dockerfile],
        )?;
        Ok(())
    }

    pub fn run_recipe(&self, run_id: &RunId) -> StoreResult<Option<(DependencySpec, Option<String>)>> {
        let raw: Option<(Option<String>, Option<String>)> = self
            .conn()
            .query_row(
                "SELECT dependency_spec, dockerfile FROM repository_runs WHERE run_id = ?1",
                [run_id.as_str()],
                |r| Ok((r.get(0)?, r.get(1)?)),
            )
            .optional()?;
        match raw {
            Some((Some(spec), dockerfile)) => Ok(Some((from_json("dependency_spec", &spec)?, dockerfile))),
            _ => Ok(None),
        }
    }

    const RUN_COLUMNS: &'static str = "run_id, repository_id, invocation_id, started_at, finished_at, \
         provisioning_status, status_reason, image_reference, revision, pipeline_version, build_failure_phase";

    fn run_from_row(row: &Row<'_>) -> rusqlite::Result<[Option<String>; 11]> {
        let mut cols: [Option<String>; 11] = Default::default();
        for (i, c) in cols.iter_mut().enumerate() {
            *c = row.get(i)?;
        }
        Ok(cols)
    }

    fn finish_run(cols: [Option<String>; 11]) -> StoreResult<RunRecord> {
        let [run_id, repository_id, invocation_id, started, finished, status, reason, image, revision, version, phase] =
            cols;
        let req = |c: Option<String>, name: &'static str| {
            c.ok_or(StoreError::Corrupt {
                column: name,
                reason: "null".into(),
            })
        };
        Ok(RunRecord {
            run_id: RunId::from_raw(req(run_id, "run_id")?),
            repository_id: RepositoryId::from_raw(req(repository_id, "repository_id")?),
            invocation_id: req(invocation_id, "invocation_id")?,
            started_at: parse_time(&req(started, "started_at")?)?,
            finished_at: parse_time(&req(finished, "finished_at")?)?,
            provisioning_status: enum_col(
                "provisioning_status",
                &req(status, "provisioning_status")?,
                ProvisioningStatus::parse,
            )?,
            status_reason: reason,
            image_reference: image,
            revision,
            pipeline_version: req(version, "pipeline_version")?,
            build_failure_phase: phase,
        })
    }

    fn query_runs(&self, sql_tail: &str, param: Option<&str>) -> StoreResult<Vec<RunRecord>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(&format!("SELECT {} FROM repository_runs {sql_tail}", Self::RUN_COLUMNS))?;
        let rows = match param {
            Some(p) => stmt.query_map([p], Self::run_from_row)?.collect::<Result<Vec<_>, _>>()?,
            None => stmt.query_map([], Self::run_from_row)?.collect::<Result<Vec<_>, _>>()?,
        };
        rows.into_iter().map(Self::finish_run).collect()
    }

    pub fn run(&self, run_id: &RunId) -> StoreResult<Option<RunRecord>> {
        Ok(self.query_runs("WHERE run_id = ?1", Some(run_id.as_str()))?.into_iter().next())
    }

    pub fn runs(&self) -> StoreResult<Vec<RunRecord>> {
        self.query_runs("ORDER BY started_at, run_id", None)
    }

    pub fn runs_for_invocation(&self, invocation_id: &str) -> StoreResult<Vec<RunRecord>> {
        self.query_runs("WHERE invocation_id = ?1 ORDER BY repository_id", Some(invocation_id))
    }

    /// Most recent run of every repository, ordered by repository id.
    pub fn latest_runs(&self) -> StoreResult<Vec<RunRecord>> {
        self.query_runs(
            "r WHERE run_id = (SELECT r2.run_id FROM repository_runs r2 WHERE r2.repository_id = r.repository_id
                               ORDER BY r2.started_at DESC, r2.run_id DESC LIMIT 1)
             ORDER BY repository_id",
            None,
        )
    }

    pub fn latest_invocation(&self) -> StoreResult<Option<String>> {
        Ok(self
            .conn()
            .query_row(
                "SELECT invocation_id FROM repository_runs ORDER BY started_at DESC, run_id DESC LIMIT 1",
                [],
                |r| r.get(0),
            )
            .optional()?)
    }

    // ---- executions ---------------------------------------------------

    /// Writes an execution with its errors, replacing any earlier row for
    /// the same (notebook, run); dependent metrics are removed.
    pub fn put_execution(&self, record: &ExecutionRecord) -> StoreResult<()> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        let key = params![record.notebook_id.as_str(), record.run_id.as_str()];
        tx.execute("DELETE FROM reproducibility_metrics WHERE notebook_id = ?1 AND run_id = ?2", key)?;
        tx.execute("DELETE FROM execution_errors WHERE notebook_id = ?1 AND run_id = ?2", key)?;
        tx.execute("DELETE FROM notebook_executions WHERE notebook_id = ?1 AND run_id = ?2", key)?;
        tx.execute(
            "INSERT INTO notebook_executions (notebook_id, run_id, status, status_reason, duration_s,
                 code_cell_count, markdown_code_ratio, executed_notebook_path, kernel_used)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9)",
            params![
                record.notebook_id.as_str(),
                record.run_id.as_str(),
                record.status.as_str(),
                record.status_reason,
                record.duration_s,
                record.code_cell_count as i64,
                record.markdown_code_ratio,
                record.executed_notebook_path.as_ref().map(|p| p.to_string_lossy().into_owned()),
                record.kernel_used,
            ],
        )?;
        for e in &record.errors {
            tx.execute(
                "INSERT INTO execution_errors (notebook_id, run_id, error_type, category, message, cell_index,
                     count, unrecognized)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
                params![
                    record.notebook_id.as_str(),
                    record.run_id.as_str(),
                    e.error_type,
                    e.category.as_str(),
                    e.message,
                    e.cell_index as i64,
                    e.count,
                    e.unrecognized,
                ],
            )?;
        }
        tx.commit()?;
        Ok(())
    }

    /// Executions of one run, ordered by notebook id.
    pub fn executions(&self, run_id: &RunId) -> StoreResult<Vec<ExecutionRecord>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT notebook_id, run_id, status, status_reason, duration_s, code_cell_count,
                    markdown_code_ratio, executed_notebook_path, kernel_used
             FROM notebook_executions WHERE run_id = ?1 ORDER BY notebook_id",
        )?;
        let raw = stmt
            .query_map([run_id.as_str()], |r| {
                Ok((
                    r.get::<_, String>(0)?,
                    r.get::<_, String>(1)?,
                    r.get::<_, String>(2)?,
                    r.get::<_, Option<String>>(3)?,
                    r.get::<_, Option<f64>>(4)?,
                    r.get::<_, i64>(5)?,
                    r.get::<_, Option<f64>>(6)?,
                    r.get::<_, Option<String>>(7)?,
                    r.get::<_, Option<String>>(8)?,
                ))
            })?
            .collect::<Result<Vec<_>, _>>()?;
        let mut err_stmt = conn.prepare(
            "SELECT error_type, category, message, cell_index, count, unrecognized FROM execution_errors
             WHERE notebook_id = ?1 AND run_id = ?2 ORDER BY cell_index, error_type",
        )?;
        let mut out = Vec::with_capacity(raw.len());
        for (nb, run, status, reason, duration, code, ratio, path, kernel) in raw {
            let errors = err_stmt
                .query_map(params![nb, run], |r| {
                    Ok((
                        r.get::<_, String>(0)?,
                        r.get::<_, String>(1)?,
                        r.get::<_, String>(2)?,
                        r.get::<_, i64>(3)?,
                        r.get::<_, u32>(4)?,
                        r.get::<_, bool>(5)?,
                    ))
                })?
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .map(|(error_type, category, message, cell_index, count, unrecognized)| {
                    Ok(ExecutionError {
                        error_type,
                        category: enum_col("category", &category, ErrorCategory::parse)?,
                        message,
                        cell_index: cell_index as usize,
                        count,
                        unrecognized,
                    })
                })
                .collect::<StoreResult<Vec<_>>>()?;
            out.push(ExecutionRecord {
                notebook_id: NotebookId::from_raw(nb),
                run_id: RunId::from_raw(run),
                status: enum_col("status", &status, ExecutionStatus::parse)?,
                status_reason: reason,
                duration_s: duration,
                code_cell_count: code as usize,
                markdown_code_ratio: ratio,
                errors,
                executed_notebook_path: path.map(Into::into),
                kernel_used: kernel,
            });
        }
        Ok(out)
    }

    // ---- metrics ------------------------------------------------------

    pub fn put_metrics(&self, m: &ReproducibilityMetrics) -> StoreResult<()> {
        self.conn().execute(
            "INSERT OR REPLACE INTO reproducibility_metrics (notebook_id, run_id, identical_count, different_count,
                 nondeterministic_count, identical_indices, different_indices, nondeterministic_indices,
                 total_code_cells, score, category, structural_mismatch, pattern_flagged_cells, cells)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11, ?12, ?13, ?14)",
            params![
                m.notebook_id.as_str(),
                m.run_id.as_str(),
                m.identical_count as i64,
                m.different_count as i64,
                m.nondeterministic_count as i64,
                to_json(&m.identical_indices),
                to_json(&m.different_indices),
                to_json(&m.nondeterministic_indices),
                m.total_code_cells as i64,
                m.score,
                m.category().as_str(),
                m.structural_mismatch,
                to_json(&m.pattern_flagged_cells),
                to_json(&m.cells),
            ],
        )?;
        Ok(())
    }

    pub fn metrics(&self, run_id: &RunId) -> StoreResult<Vec<ReproducibilityMetrics>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT notebook_id, run_id, identical_count, different_count, nondeterministic_count,
                    identical_indices, different_indices, nondeterministic_indices, total_code_cells, score,
                    structural_mismatch, pattern_flagged_cells, cells
             FROM reproducibility_metrics WHERE run_id = ?1 ORDER BY notebook_id",
        )?;
        type Raw = (String, String, i64, i64, i64, String, String, String, i64, Option<f64>, bool, String, String);
        let raw: Vec<Raw> = stmt
            .query_map([run_id.as_str()], |r| {
                Ok((
                    r.get(0)?,
                    r.get(1)?,
                    r.get(2)?,
                    r.get(3)?,
                    r.get(4)?,
                    r.get(5)?,
                    r.get(6)?,
                    r.get(7)?,
                    r.get(8)?,
                    r.get(9)?,
                    r.get(10)?,
                    r.get(11)?,
                    r.get(12)?,
                ))
            })?
            .collect::<Result<Vec<_>, _>>()?;
        raw.into_iter()
            .map(|(nb, run, ic, dc, nc, ii, di, ni, total, score, mismatch, flagged, cells)| {
                Ok(ReproducibilityMetrics {
                    notebook_id: NotebookId::from_raw(nb),
                    run_id: RunId::from_raw(run),
                    identical_count: ic as usize,
                    different_count: dc as usize,
                    nondeterministic_count: nc as usize,
                    identical_indices: from_json("identical_indices", &ii)?,
                    different_indices: from_json("different_indices", &di)?,
                    nondeterministic_indices: from_json("nondeterministic_indices", &ni)?,
                    total_code_cells: total as usize,
                    score,
                    structural_mismatch: mismatch,
                    pattern_flagged_cells: from_json("pattern_flagged_cells", &flagged)?,
                    cells: from_json("cells", &cells)?,
                })
            })
            .collect()
    }

    // ---- baseline and outcomes ------------------------------------------

    pub fn replace_baseline(&self, records: &[BaselineRecord]) -> StoreResult<()> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        tx.execute("DELETE FROM baseline_records", [])?;
        {
            let mut stmt = tx.prepare(
                "INSERT OR REPLACE INTO baseline_records (notebook_id, prev_dependency_install, prev_execution_status,
                     prev_diff_cells, prev_duration_s) VALUES (?1, ?2, ?3, ?4, ?5)",
            )?;
            for b in records {
                stmt.execute(params![
                    b.notebook_id.as_str(),
                    match b.prev_dependency_install {
                        InstallOutcome::Success => "Success",
                        InstallOutcome::Fail => "Fail",
                    },
                    b.prev_execution_status,
                    b.prev_diff_cells,
                    b.prev_duration_s,
                ])?;
            }
        }
        tx.commit()?;
        Ok(())
    }

    pub fn baseline(&self) -> StoreResult<Vec<BaselineRecord>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT notebook_id, prev_dependency_install, prev_execution_status, prev_diff_cells, prev_duration_s
             FROM baseline_records ORDER BY notebook_id",
        )?;
        let raw = stmt
            .query_map([], |r| {
                Ok((
                    r.get::<_, String>(0)?,
                    r.get::<_, String>(1)?,
                    r.get::<_, String>(2)?,
                    r.get::<_, Option<u32>>(3)?,
                    r.get::<_, Option<f64>>(4)?,
                ))
            })?
            .collect::<Result<Vec<_>, _>>()?;
        raw.into_iter()
            .map(|(nb, install, status, diff, duration)| {
                Ok(BaselineRecord {
                    notebook_id: NotebookId::from_raw(nb),
                    prev_dependency_install: enum_col("prev_dependency_install", &install, InstallOutcome::parse_lenient)?,
                    prev_execution_status: status,
                    prev_diff_cells: diff,
                    prev_duration_s: duration,
                })
            })
            .collect()
    }

    /// Replaces the outcome classes of the given runs.
    pub fn replace_outcomes(&self, run_ids: &[RunId], rows: &[OutcomeRow]) -> StoreResult<()> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        for run in run_ids {
            tx.execute("DELETE FROM outcome_classes WHERE run_id = ?1", [run.as_str()])?;
        }
        for o in rows {
            tx.execute(
                "INSERT INTO outcome_classes (notebook_id, run_id, class, baseline_install_failed)
                 VALUES (?1, ?2, ?3, ?4)",
                params![o.notebook_id.as_str(), o.run_id.as_str(), o.class.as_str(), o.baseline_install_failed],
            )?;
        }
        tx.commit()?;
        Ok(())
    }

    pub fn outcomes(&self, run_id: &RunId) -> StoreResult<Vec<OutcomeRow>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT o.notebook_id, o.run_id, r.repository_id, o.class, o.baseline_install_failed
             FROM outcome_classes o JOIN repository_runs r ON r.run_id = o.run_id
             WHERE o.run_id = ?1 ORDER BY o.notebook_id",
        )?;
        let raw = stmt
            .query_map([run_id.as_str()], |r| {
                Ok((
                    r.get::<_, String>(0)?,
                    r.get::<_, String>(1)?,
                    r.get::<_, String>(2)?,
                    r.get::<_, String>(3)?,
                    r.get::<_, bool>(4)?,
                ))
            })?
            .collect::<Result<Vec<_>, _>>()?;
        raw.into_iter()
            .map(|(nb, run, repo, class, failed)| {
                Ok(OutcomeRow {
                    notebook_id: NotebookId::from_raw(nb),
                    run_id: RunId::from_raw(run),
                    repository_id: RepositoryId::from_raw(repo),
                    class: enum_col("class", &class, OutcomeClass::parse)?,
                    baseline_install_failed: failed,
                })
            })
            .collect()
    }

    /// Rows violating referential integrity (should always be zero).
    pub fn integrity_violations(&self) -> StoreResult<usize> {
        let conn = self.conn();
        let mut stmt = conn.prepare("PRAGMA foreign_key_check")?;
        let n = stmt.query_map([], |_| Ok(()))?.count();
        Ok(n)
    }
}
