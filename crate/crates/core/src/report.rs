//! Corpus-level aggregation and report files.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compare::{categorize_score, ReproducibilityMetrics, ScoreCategory};
use crate::corpus::ProvisioningStatus;
use crate::executor::{normalize_error_type, ErrorCategory, ExecutionRecord, ExecutionStatus};
use crate::ids::NotebookId;
use crate::outcome::{percentage, resolution_counts, InstallOutcome, OutcomeAssignment, OutcomeClass};
use crate::store::{Store, StoreError};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const NOT_EXECUTED: &str = "NotExecuted";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RepositoryTotals {
    pub total: usize,
    pub with_requirements: usize,
    pub without_requirements: usize,
    /// Latest provisioning status of every repository.
    pub provisioning: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NotebookTotals {
    pub total: usize,
    /// Executed to completion without any error output.
    pub zero_errors: usize,
    /// Executed to completion with at least one error.
    pub with_errors: usize,
    /// Never completed: skipped, missing, timed out, no kernel, no build.
    pub not_completed: usize,
    pub status: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub part: usize,
    pub total: usize,
    /// Percentage; `None` for an empty population.
    pub percent: Option<f64>,
}

impl Rate {
    pub fn new(part: usize, total: usize) -> Self {
        Self {
            part,
            total,
            percent: percentage(part, total),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stratified<T> {
    pub with_requirements: T,
    pub without_requirements: T,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanScore {
    pub notebooks: usize,
    pub mean: Option<f64>,
}

impl MeanScore {
    fn of(scores: &[f64]) -> Self {
        Self {
            notebooks: scores.len(),
            mean: (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    /// Notebooks with at least one error; each histogram below sums to it.
    pub notebooks_with_errors: usize,
    /// Type of the first error (lowest code-cell index) per notebook.
    pub by_type: BTreeMap<String, usize>,
    pub by_category: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub baseline_records: usize,
    /// Baseline rows whose notebook is not in the corpus.
    pub unmatched_baseline: usize,
    /// Corpus notebooks without a baseline row.
    pub unclassified: usize,
    pub classes: BTreeMap<String, usize>,
    /// Repositories with a failed baseline install that containerization resolved.
    pub resolution: Rate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub records: usize,
    pub errors: ErrorHistogram,
    pub success_by_requirements: Stratified<Rate>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub schema_version: u32,
    pub runs: usize,
    pub repositories: RepositoryTotals,
    pub notebooks: NotebookTotals,
    pub errors: ErrorHistogram,
    pub success_by_requirements: Stratified<Rate>,
    pub score_categories: BTreeMap<String, usize>,
    pub scored_notebooks: usize,
    pub mean_score: Stratified<MeanScore>,
    pub mean_score_overall: MeanScore,
    pub nondeterminism: Rate,
    pub outcomes: Option<OutcomeSummary>,
    pub baseline: Option<BaselineSummary>,
}

fn zeroed<I: IntoIterator<Item = &'static str>>(keys: I) -> BTreeMap<String, usize> {
    keys.into_iter().map(|k| (k.to_string(), 0)).collect()
}

fn sum(map: &BTreeMap<String, usize>) -> usize {
    map.values().sum()
}

impl CorpusSummary {
    pub fn empty() -> Self {
        CorpusSummary {
            schema_version: REPORT_SCHEMA_VERSION,
            repositories: RepositoryTotals {
                provisioning: zeroed(ProvisioningStatus::ALL.map(ProvisioningStatus::as_str)),
                ..Default::default()
            },
            notebooks: NotebookTotals {
                status: zeroed(ExecutionStatus::ALL.map(ExecutionStatus::as_str).into_iter().chain([NOT_EXECUTED])),
                ..Default::default()
            },
            errors: ErrorHistogram {
                by_category: zeroed(ErrorCategory::ALL.map(ErrorCategory::as_str)),
                ..Default::default()
            },
            score_categories: zeroed(ScoreCategory::ALL.map(ScoreCategory::as_str)),
            ..Default::default()
        }
    }

    /// Sum invariants; empty when the summary is consistent.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut check = |name: &str, got: usize, want: usize| {
            if got != want {
                v.push(format!("{name}: sums to {got}, expected {want}"));
            }
        };
        let r = &self.repositories;
        check("repositories.provisioning", sum(&r.provisioning), r.total);
        check("repositories.requirements split", r.with_requirements + r.without_requirements, r.total);
        let n = &self.notebooks;
        check("notebooks.status", sum(&n.status), n.total);
        check("notebooks.error split", n.zero_errors + n.with_errors + n.not_completed, n.total);
        check("errors.by_type", sum(&self.errors.by_type), self.errors.notebooks_with_errors);
        check("errors.by_category", sum(&self.errors.by_category), self.errors.notebooks_with_errors);
        check("errors.population", self.errors.notebooks_with_errors, n.with_errors);
        let s = &self.success_by_requirements;
        check("success strata", s.with_requirements.total + s.without_requirements.total, n.total);
        check("score_categories", sum(&self.score_categories), self.scored_notebooks);
        check(
            "mean score strata",
            self.mean_score.with_requirements.notebooks + self.mean_score.without_requirements.notebooks,
            self.mean_score_overall.notebooks,
        );
        check("nondeterminism population", self.nondeterminism.total, n.total);
        if let Some(o) = &self.outcomes {
            check("outcome classes", sum(&o.classes) + o.unclassified, n.total);
        }
        if let Some(b) = &self.baseline {
            check("baseline.errors.by_type", sum(&b.errors.by_type), b.errors.notebooks_with_errors);
            check("baseline.errors.by_category", sum(&b.errors.by_category), b.errors.notebooks_with_errors);
        }
        v
    }
}

fn first_error(record: &ExecutionRecord) -> Option<(&str, ErrorCategory)> {
    record
        .errors
        .iter()
        .min_by(|a, b| a.cell_index.cmp(&b.cell_index).then(a.error_type.cmp(&b.error_type)))
        .map(|e| (e.error_type.as_str(), e.category))
}

/// Aggregates the latest run of every repository.
pub fn aggregate_corpus(store: &Store) -> Result<CorpusSummary, StoreError> {
    let mut s = CorpusSummary::empty();
    let runs = store.latest_runs()?;
    s.runs = runs.len();
    let repos: HashMap<_, _> = store.repositories()?.into_iter().map(|r| (r.repository_id.clone(), r)).collect();
    let baseline = store.baseline()?;
    let baseline_by_id: HashMap<&NotebookId, _> = baseline.iter().map(|b| (&b.notebook_id, b)).collect();
    let mut corpus_ids: BTreeSet<NotebookId> = BTreeSet::new();

    let mut scores: Stratified<Vec<f64>> = Stratified::default();
    let mut success: Stratified<(usize, usize)> = Stratified::default();
    let mut flagged = 0usize;
    let mut outcomes = OutcomeSummary {
        classes: zeroed(OutcomeClass::ALL.map(OutcomeClass::as_str)),
        ..Default::default()
    };
    let mut assignments: Vec<OutcomeAssignment> = Vec::new();
    let mut baseline_summary = BaselineSummary {
        errors: ErrorHistogram {
            by_category: zeroed(ErrorCategory::ALL.map(ErrorCategory::as_str)),
            ..Default::default()
        },
        ..Default::default()
    };
    let mut baseline_success: Stratified<(usize, usize)> = Stratified::default();

    for run in &runs {
        let has_req = repos.get(&run.repository_id).is_some_and(|r| r.has_requirements_file);
        s.repositories.total += 1;
        if has_req {
            s.repositories.with_requirements += 1;
        } else {
            s.repositories.without_requirements += 1;
        }
        *s.repositories.provisioning.entry(run.provisioning_status.as_str().into()).or_default() += 1;

        let executions: HashMap<NotebookId, ExecutionRecord> =
            store.executions(&run.run_id)?.into_iter().map(|e| (e.notebook_id.clone(), e)).collect();
        let metrics: HashMap<NotebookId, ReproducibilityMetrics> =
            store.metrics(&run.run_id)?.into_iter().map(|m| (m.notebook_id.clone(), m)).collect();
        let run_outcomes: HashMap<NotebookId, OutcomeClass> =
            store.outcomes(&run.run_id)?.into_iter().map(|o| (o.notebook_id, o.class)).collect();

        for nb in store.notebooks(Some(&run.repository_id))? {
            let id = nb.descriptor.notebook_id.clone();
            corpus_ids.insert(id.clone());
            s.notebooks.total += 1;
            let exec = executions.get(&id);
            let status_key = exec.map(|e| e.status.as_str()).unwrap_or(NOT_EXECUTED);
            *s.notebooks.status.entry(status_key.into()).or_default() += 1;
            match exec.map(|e| e.status) {
                Some(ExecutionStatus::Success) => s.notebooks.zero_errors += 1,
                Some(ExecutionStatus::ErroredButCompleted) => {
                    s.notebooks.with_errors += 1;
                    s.errors.notebooks_with_errors += 1;
                    let (ty, cat) = exec.and_then(first_error).unwrap_or(("Unknown", ErrorCategory::Logic));
                    *s.errors.by_type.entry(ty.to_string()).or_default() += 1;
                    *s.errors.by_category.entry(cat.as_str().into()).or_default() += 1;
                }
                _ => s.notebooks.not_completed += 1,
            }
            let ok = exec.is_some_and(|e| e.status == ExecutionStatus::Success) as usize;
            let stratum = if has_req { &mut success.with_requirements } else { &mut success.without_requirements };
            stratum.0 += ok;
            stratum.1 += 1;

            if let Some(m) = metrics.get(&id) {
                let category = categorize_score(m.score);
                *s.score_categories.entry(category.as_str().into()).or_default() += 1;
                s.scored_notebooks += 1;
                if let Some(score) = m.score {
                    if has_req {
                        scores.with_requirements.push(score);
                    } else {
                        scores.without_requirements.push(score);
                    }
                }
            }
            let has_patterns = nb.profile.as_ref().is_some_and(|p| !p.nondeterminism_patterns.is_empty())
                || metrics.get(&id).is_some_and(ReproducibilityMetrics::has_nondeterminism_patterns);
            flagged += has_patterns as usize;

            match (baseline_by_id.get(&id), run_outcomes.get(&id)) {
                (Some(b), Some(class)) => {
                    *outcomes.classes.entry(class.as_str().into()).or_default() += 1;
                    assignments.push(OutcomeAssignment {
                        notebook_id: id.clone(),
                        repository_id: run.repository_id.clone(),
                        baseline_install_failed: b.prev_dependency_install == InstallOutcome::Fail,
                        class: *class,
                    });
                }
                _ => outcomes.unclassified += 1,
            }
            if let Some(b) = baseline_by_id.get(&id) {
                let ok = b.prev_dependency_install == InstallOutcome::Success
                    && b.prev_execution_status.trim().to_ascii_lowercase().starts_with("suc");
                let stratum =
                    if has_req { &mut baseline_success.with_requirements } else { &mut baseline_success.without_requirements };
                stratum.0 += ok as usize;
                stratum.1 += 1;
            }
        }
    }

    s.success_by_requirements = Stratified {
        with_requirements: Rate::new(success.with_requirements.0, success.with_requirements.1),
        without_requirements: Rate::new(success.without_requirements.0, success.without_requirements.1),
    };
    let all_scores: Vec<f64> = scores.with_requirements.iter().chain(&scores.without_requirements).copied().collect();
    s.mean_score = Stratified {
        with_requirements: MeanScore::of(&scores.with_requirements),
        without_requirements: MeanScore::of(&scores.without_requirements),
    };
    s.mean_score_overall = MeanScore::of(&all_scores);
    s.nondeterminism = Rate::new(flagged, s.notebooks.total);

    if !baseline.is_empty() {
        outcomes.baseline_records = baseline.len();
        outcomes.unmatched_baseline = baseline.iter().filter(|b| !corpus_ids.contains(&b.notebook_id)).count();
        let (resolved, failed) = resolution_counts(&assignments);
        outcomes.resolution = Rate::new(resolved, failed);
        s.outcomes = Some(outcomes);

        baseline_summary.records = baseline.len();
        for b in &baseline {
            if let Some(ty) = baseline_error_type(b.prev_dependency_install, &b.prev_execution_status) {
                let (cat, _) = crate::executor::classify_error(&ty, "");
                baseline_summary.errors.notebooks_with_errors += 1;
                *baseline_summary.errors.by_type.entry(ty).or_default() += 1;
                *baseline_summary.errors.by_category.entry(cat.as_str().into()).or_default() += 1;
            }
        }
        baseline_summary.success_by_requirements = Stratified {
            with_requirements: Rate::new(baseline_success.with_requirements.0, baseline_success.with_requirements.1),
            without_requirements: Rate::new(
                baseline_success.without_requirements.0,
                baseline_success.without_requirements.1,
            ),
        };
        s.baseline = Some(baseline_summary);
    }
    Ok(s)
}

/// Error type a baseline row stands for, if it records an error.
fn baseline_error_type(install: InstallOutcome, status: &str) -> Option<String> {
    if install == InstallOutcome::Fail {
        return Some("InstallDependencyError".into());
    }
    let t = status.trim();
    let lower = t.to_ascii_lowercase();
    if t.is_empty() || t == "-" || lower.starts_with("suc") || lower.contains("skip") {
        return None;
    }
    Some(normalize_error_type(t.trim_matches(|c| c == '<' || c == '>')))
}

/// Percentage of notebooks with status Success in each requirements stratum.
pub fn success_rate_by_requirements(store: &Store) -> Result<Stratified<Rate>, StoreError> {
    Ok(aggregate_corpus(store)?.success_by_requirements)
}

/// Share of notebooks with at least one pattern-matched code cell.
pub fn nondeterminism_prevalence(store: &Store) -> Result<Rate, StoreError> {
    Ok(aggregate_corpus(store)?.nondeterminism)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    /// The only time-dependent field in any report file.
    pub generated_at: String,
    pub summary: CorpusSummary,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write reports to {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("report: {0}")]
    Csv(#[from] csv::Error),
}

fn fmt_f(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.4}")).unwrap_or_else(|| "undefined".into())
}

fn fmt_pct(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.1}%")).unwrap_or_else(|| "undefined".into())
}

fn csv_rows(s: &CorpusSummary) -> Vec<[String; 3]> {
    let mut rows: Vec<[String; 3]> = Vec::new();
    let mut push = |section: &str, key: &str, value: String| rows.push([section.into(), key.into(), value]);
    push("repositories", "total", s.repositories.total.to_string());
    push("repositories", "with_requirements", s.repositories.with_requirements.to_string());
    push("repositories", "without_requirements", s.repositories.without_requirements.to_string());
    for (k, v) in &s.repositories.provisioning {
        push("provisioning", k, v.to_string());
    }
    push("notebooks", "total", s.notebooks.total.to_string());
    push("notebooks", "zero_errors", s.notebooks.zero_errors.to_string());
    push("notebooks", "with_errors", s.notebooks.with_errors.to_string());
    push("notebooks", "not_completed", s.notebooks.not_completed.to_string());
    for (k, v) in &s.notebooks.status {
        push("execution_status", k, v.to_string());
    }
    for (k, v) in &s.errors.by_type {
        push("error_type", k, v.to_string());
    }
    for (k, v) in &s.errors.by_category {
        push("error_category", k, v.to_string());
    }
    let sr = &s.success_by_requirements;
    push("success_rate", "with_requirements", fmt_f(sr.with_requirements.percent));
    push("success_rate", "without_requirements", fmt_f(sr.without_requirements.percent));
    for (k, v) in &s.score_categories {
        push("score_category", k, v.to_string());
    }
    push("mean_score", "with_requirements", fmt_f(s.mean_score.with_requirements.mean));
    push("mean_score", "without_requirements", fmt_f(s.mean_score.without_requirements.mean));
    push("mean_score", "overall", fmt_f(s.mean_score_overall.mean));
    push("nondeterminism", "flagged", s.nondeterminism.part.to_string());
    push("nondeterminism", "prevalence", fmt_f(s.nondeterminism.percent));
    if let Some(o) = &s.outcomes {
        for (k, v) in &o.classes {
            push("outcome_class", k, v.to_string());
        }
        push("outcome_class", "Unclassified", o.unclassified.to_string());
        push("outcome", "unmatched_baseline", o.unmatched_baseline.to_string());
        push("outcome", "resolution_rate", fmt_f(o.resolution.percent));
    }
    if let Some(b) = &s.baseline {
        for (k, v) in &b.errors.by_type {
            push("baseline_error_type", k, v.to_string());
        }
        let bs = &b.success_by_requirements;
        push("baseline_success_rate", "with_requirements", fmt_f(bs.with_requirements.percent));
        push("baseline_success_rate", "without_requirements", fmt_f(bs.without_requirements.percent));
    }
    rows
}

fn share(part: usize, whole: usize) -> String {
    fmt_pct(percentage(part, whole))
}

fn markdown(s: &CorpusSummary, generated_at: &str) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# Reproducibility summary\n");
    let _ = writeln!(md, "Generated: {generated_at}  ");
    let _ = writeln!(md, "Schema version: {}\n", s.schema_version);

    let _ = writeln!(md, "## Dataset and provisioning\n");
    let _ = writeln!(md, "| Metric | Count |\n|---|---:|");
    let _ = writeln!(md, "| Repositories | {} |", s.repositories.total);
    let _ = writeln!(md, "| with requirements.txt | {} |", s.repositories.with_requirements);
    let _ = writeln!(md, "| without requirements.txt | {} |", s.repositories.without_requirements);
    for (k, v) in &s.repositories.provisioning {
        let _ = writeln!(md, "| provisioning: {k} | {v} |");
    }
    let _ = writeln!(md, "| Notebooks | {} |", s.notebooks.total);
    let _ = writeln!(md, "| reproducible (zero errors) | {} |", s.notebooks.zero_errors);
    let _ = writeln!(md, "| completed with errors | {} |", s.notebooks.with_errors);
    let _ = writeln!(md, "| not completed | {} |\n", s.notebooks.not_completed);

    let _ = writeln!(md, "## Error types (first error per notebook)\n");
    let _ = writeln!(md, "| Error type | Notebooks | Share |\n|---|---:|---:|");
    let mut by_type: Vec<(&String, &usize)> = s.errors.by_type.iter().collect();
    by_type.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    for (k, v) in by_type {
        let _ = writeln!(md, "| {k} | {v} | {} |", share(*v, s.errors.notebooks_with_errors));
    }
    let _ = writeln!(md, "\n| Category | Notebooks |\n|---|---:|");
    for (k, v) in &s.errors.by_category {
        let _ = writeln!(md, "| {k} | {v} |");
    }

    let _ = writeln!(md, "\n## Success rate by requirements status\n");
    let _ = writeln!(md, "| Stratum | Successful | Notebooks | Rate | Mean score |\n|---|---:|---:|---:|---:|");
    let sr = &s.success_by_requirements;
    for (label, rate, mean) in [
        ("With req", &sr.with_requirements, &s.mean_score.with_requirements),
        ("Without req", &sr.without_requirements, &s.mean_score.without_requirements),
    ] {
        let _ = writeln!(
            md,
            "| {label} | {} | {} | {} | {} |",
            rate.part,
            rate.total,
            fmt_pct(rate.percent),
            fmt_f(mean.mean)
        );
    }

    let _ = writeln!(md, "\n## Reproducibility score\n");
    let _ = writeln!(md, "| Category | Notebooks | Share |\n|---|---:|---:|");
    for cat in ScoreCategory::ALL {
        let v = s.score_categories.get(cat.as_str()).copied().unwrap_or(0);
        let _ = writeln!(md, "| {} | {v} | {} |", cat.as_str(), share(v, s.scored_notebooks));
    }
    let _ = writeln!(md, "\nMean score overall: {}  ", fmt_f(s.mean_score_overall.mean));
    let _ = writeln!(
        md,
        "Notebooks with non-determinism patterns: {} of {} ({})",
        s.nondeterminism.part,
        s.nondeterminism.total,
        fmt_pct(s.nondeterminism.percent)
    );

    if let Some(o) = &s.outcomes {
        let _ = writeln!(md, "\n## Outcome classes against baseline\n");
        let _ = writeln!(md, "| Class | Notebooks |\n|---|---:|");
        for (k, v) in &o.classes {
            let _ = writeln!(md, "| {k} | {v} |");
        }
        let _ = writeln!(md, "| Unclassified (no baseline) | {} |", o.unclassified);
        let _ = writeln!(
            md,
            "\nDependency-install failures resolved: {} of {} repositories ({})  ",
            o.resolution.part,
            o.resolution.total,
            fmt_pct(o.resolution.percent)
        );
        let _ = writeln!(md, "Baseline rows not matched to the corpus: {}  ", o.unmatched_baseline);
        let _ = writeln!(
            md,
            "Class assignment follows the precedence D > A > B > C; rows where signals conflict are resolved by that order."
        );
    }
    if let Some(b) = &s.baseline {
        let _ = writeln!(md, "\n## Baseline error types\n");
        let _ = writeln!(md, "| Error type | Notebooks | Share |\n|---|---:|---:|");
        for (k, v) in &b.errors.by_type {
            let _ = writeln!(md, "| {k} | {v} | {} |", share(*v, b.errors.notebooks_with_errors));
        }
    }
    md
}

/// Writes `report.json`, `summary.csv` and `summary.md` into `dir`.
pub fn emit_reports(summary: &CorpusSummary, dir: &Path, generated_at: DateTime<Utc>) -> Result<Vec<PathBuf>, ReportError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReportError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let stamp = generated_at.to_rfc3339_opts(SecondsFormat::Secs, true);
    let doc = ReportDocument {
        schema_version: REPORT_SCHEMA_VERSION,
        generated_at: stamp.clone(),
        summary: summary.clone(),
    };
    let json_path = dir.join("report.json");
    let mut json = serde_json::to_string_pretty(&doc).expect("summary serializes");
    json.push('\n');
    std::fs::write(&json_path, json).map_err(io(&json_path))?;

    let csv_path = dir.join("summary.csv");
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    wtr.write_record(["section", "key", "value"])?;
    for row in csv_rows(summary) {
        wtr.write_record(&row)?;
    }
    let bytes = wtr.into_inner().map_err(|e| ReportError::Io {
        path: csv_path.clone(),
        source: e.into_error(),
    })?;
    std::fs::write(&csv_path, bytes).map_err(io(&csv_path))?;

    let md_path = dir.join("summary.md");
    std::fs::write(&md_path, markdown(summary, &stamp)).map_err(io(&md_path))?;
    Ok(vec![json_path, csv_path, md_path])
}

pub fn read_report(path: &Path) -> std::io::Result<ReportDocument> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
