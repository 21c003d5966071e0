//! Acceptance harness: one line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test -p nbrepro-core --test acceptance`.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use serde::Deserialize;

use nbrepro::compare::{compute_metrics, detect_nondeterminism, NONDETERMINISM_PATTERNS};
use nbrepro::containerize::{generate_build_recipe, DEFAULT_BASE_IMAGE};
use nbrepro::corpus::{discover_notebooks, find_manifests, load_notebook, ProvisioningStatus, Repository, RunRecord};
use nbrepro::depinfer::{extract_imports, filter_standard_library, is_standard_library, synthesize_dependency_spec, InferenceOptions};
use nbrepro::executor::{ErrorCategory, ExecutionError, ExecutionRecord, ExecutionStatus};
use nbrepro::ids::{NotebookId, RepositoryId, RunId};
use nbrepro::notebook::{parse_notebook, CellKind, CellOutput, ParsedNotebook};
use nbrepro::outcome::{
    assign_outcome_class, resolution_rate, BaselineRecord, CurrentOutcome, InstallOutcome, OutcomeAssignment, OutcomeClass,
};
use nbrepro::report::{aggregate_corpus, emit_reports, read_report};
use nbrepro::store::{NotebookProfile, OutcomeRow, Store};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn code_notebook(cells: Vec<(String, Vec<CellOutput>)>) -> ParsedNotebook {
    ParsedNotebook::from_cells(cells.into_iter().map(|(s, o)| (CellKind::Code, s, o)).collect())
}

// ---- 1 ------------------------------------------------------------------

fn score_formula() -> Verdict {
    let started = Instant::now();
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let nb_id = NotebookId::from_raw("nb");
    let run_id = RunId::from_raw("run");
    let scoring = std::cell::Cell::new(Duration::ZERO);
    let result = runner.run(&(0usize..40, 0usize..40, 0usize..40), |(identical, different, nondet)| {
        let mut orig = Vec::new();
        let mut exec = Vec::new();
        for i in 0..identical {
            orig.push((format!("print({i})"), vec![CellOutput::stream("stdout", &format!("{i}\n"))]));
            exec.push((format!("print({i})"), vec![CellOutput::stream("stdout", &format!("{i}\n"))]));
        }
        for i in 0..different {
            orig.push((format!("v = {i}\nprint(v)"), vec![CellOutput::stream("stdout", "old\n")]));
            exec.push((format!("v = {i}\nprint(v)"), vec![CellOutput::stream("stdout", "new\n")]));
        }
        for _ in 0..nondet {
            orig.push(("print(random.random())".into(), vec![CellOutput::stream("stdout", "0.1\n")]));
            exec.push(("print(random.random())".into(), vec![CellOutput::stream("stdout", "0.7\n")]));
        }
        let (orig, exec) = (code_notebook(orig), code_notebook(exec));
        let t = Instant::now();
        let m = compute_metrics(&nb_id, &run_id, &orig, &exec);
        scoring.set(scoring.get() + t.elapsed());
        let total = identical + different + nondet;
        prop_assert_eq!(m.identical_count, identical);
        prop_assert_eq!(m.different_count, different);
        prop_assert_eq!(m.nondeterministic_count, nondet);
        prop_assert_eq!(m.identical_count + m.different_count + m.nondeterministic_count, m.total_code_cells);
        prop_assert_eq!(m.total_code_cells, total);
        let expected = (total > 0).then(|| identical as f64 / total as f64);
        prop_assert_eq!(m.score.map(f64::to_bits), expected.map(f64::to_bits));
        Ok(())
    });
    let elapsed = started.elapsed();
    let scoring = scoring.get();
    match result {
        Err(e) => Verdict::Fail(e.to_string()),
        Ok(()) if elapsed >= Duration::from_secs(1) => Verdict::Fail(format!("1000 partitions took {elapsed:?}")),
        Ok(()) => Verdict::Pass(format!("1000 partitions exact, scoring {scoring:?} ({elapsed:?} with generation)")),
    }
}

// ---- 2 ------------------------------------------------------------------

fn all_fixture_notebooks(scratch: &Path) -> Vec<(String, ParsedNotebook)> {
    let mut out = Vec::new();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(fixtures_dir().join("imports"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "ipynb"))
        .collect();
    paths.sort();
    for p in paths {
        let nb = parse_notebook(&std::fs::read(&p).unwrap()).unwrap();
        out.push((p.file_name().unwrap().to_string_lossy().into_owned(), nb));
    }
    for (name, dir) in common::fixture_corpus(scratch) {
        for entry in walkdir::WalkDir::new(&dir) {
            let entry = entry.unwrap();
            if entry.path().extension().is_some_and(|e| e == "ipynb") {
                let nb = parse_notebook(&std::fs::read(entry.path()).unwrap()).unwrap();
                out.push((format!("{name}/{}", entry.file_name().to_string_lossy()), nb));
            }
        }
    }
    let cells: Vec<LabeledCell> =
        serde_json::from_slice(&std::fs::read(fixtures_dir().join("nondeterminism_cells.json")).unwrap()).unwrap();
    out.push((
        "nondeterminism_cells".into(),
        code_notebook(cells.into_iter().map(|c| (c.source, vec![CellOutput::stream("stdout", "x\n")])).collect()),
    ));
    out
}

fn self_comparison() -> Verdict {
    let scratch = tempfile::tempdir().unwrap();
    let notebooks = all_fixture_notebooks(scratch.path());
    let mut failures = Vec::new();
    for (name, nb) in &notebooks {
        let m = compute_metrics(&NotebookId::from_raw("n"), &RunId::from_raw("r"), nb, nb);
        if m.different_count != 0 || m.nondeterministic_count != 0 || m.score != Some(1.0) {
            failures.push(format!("{name}: {:?}", m.score));
        }
    }
    if failures.is_empty() {
        Verdict::Pass(format!("{} notebooks score exactly 1.0 against themselves", notebooks.len()))
    } else {
        Verdict::Fail(failures.join("; "))
    }
}

// ---- 3 ------------------------------------------------------------------

fn fixture_repository(root: &Path, id: &str) -> Repository {
    let (reqs, setups) = find_manifests(root);
    Repository {
        repository_id: RepositoryId::from_raw(id),
        url: format!("file://{}", root.display()),
        local_path: root.to_path_buf(),
        accessible: true,
        has_requirements_file: !reqs.is_empty(),
        requirement_manifests: reqs,
        setup_manifests: setups,
        notebook_count: 0,
    }
}

fn spec_for(root: &Path, id: &str) -> nbrepro::depinfer::DependencySpec {
    let repo = fixture_repository(root, id);
    let descriptors = discover_notebooks(&repo);
    let parsed: Vec<_> = descriptors.iter().map(|d| (d, load_notebook(&repo, d).unwrap())).collect();
    let refs: Vec<_> = parsed.iter().map(|(d, nb)| (*d, nb)).collect();
    synthesize_dependency_spec(&repo, &refs, &InferenceOptions::default())
}

fn import_inference() -> Verdict {
    let dir = fixtures_dir().join("imports");
    let labels: BTreeMap<String, BTreeSet<String>> =
        serde_json::from_slice(&std::fs::read(dir.join("labels.json")).unwrap()).unwrap();
    let mut mismatches = Vec::new();
    for (name, expected) in &labels {
        let nb = parse_notebook(&std::fs::read(dir.join(name)).unwrap()).unwrap();
        let mut found = BTreeSet::new();
        for cell in nb.code_cells() {
            found.extend(extract_imports(&cell.source));
        }
        let got = filter_standard_library(&found);
        if &got != expected {
            mismatches.push(format!("{name}: expected {expected:?}, got {got:?}"));
        }
    }

    // every synthesized manifest: one single-notebook repository per fixture
    // plus the synthetic corpus
    let scratch = tempfile::tempdir().unwrap();
    let mut roots = Vec::new();
    for name in labels.keys() {
        let root = scratch.path().join(name.trim_end_matches(".ipynb"));
        std::fs::create_dir_all(&root).unwrap();
        std::fs::copy(dir.join(name), root.join(name)).unwrap();
        roots.push(root);
    }
    roots.extend(common::fixture_corpus(&scratch.path().join("corpus")).into_iter().map(|(_, p)| p));
    let mut leaked = Vec::new();
    for (i, root) in roots.iter().enumerate() {
        let spec = spec_for(root, &format!("r{i}"));
        for line in spec.synthesized_manifest.lines() {
            let name = line.split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '-')).next().unwrap_or("");
            if is_standard_library(name) || is_standard_library(&name.replace('-', "_")) {
                leaked.push(format!("{}: {line}", root.display()));
            }
        }
    }
    if mismatches.is_empty() && leaked.is_empty() {
        Verdict::Pass(format!(
            "{}/{} notebooks match their labels; no standard-library name in {} manifests",
            labels.len(),
            labels.len(),
            roots.len()
        ))
    } else {
        Verdict::Fail(format!("label mismatches: {mismatches:?}; stdlib in manifests: {leaked:?}"))
    }
}

// ---- 4 ------------------------------------------------------------------

#[derive(Deserialize)]
struct LabeledCell {
    source: String,
    patterns: Vec<String>,
}

fn nondeterminism_detector() -> Verdict {
    let cells: Vec<LabeledCell> =
        serde_json::from_slice(&std::fs::read(fixtures_dir().join("nondeterminism_cells.json")).unwrap()).unwrap();
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    let mut pattern_mismatch = Vec::new();
    let mut covered = BTreeSet::new();
    for (i, cell) in cells.iter().enumerate() {
        let (flagged, patterns) = detect_nondeterminism(&cell.source);
        let labeled = !cell.patterns.is_empty();
        match (flagged, labeled) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
        let got: BTreeSet<_> = patterns.iter().cloned().collect();
        let want: BTreeSet<_> = cell.patterns.iter().cloned().collect();
        if got != want {
            pattern_mismatch.push(format!("cell {i}: expected {want:?}, got {got:?}"));
        }
        covered.extend(want);
    }
    let uncovered: Vec<_> = NONDETERMINISM_PATTERNS.iter().filter(|p| !covered.contains(**p)).collect();
    let precision = tp as f64 / (tp + fp).max(1) as f64;
    let recall = tp as f64 / (tp + fn_).max(1) as f64;
    let summary = format!("{} cells, precision {precision:.3}, recall {recall:.3}", cells.len());
    if cells.len() == 20 && fp == 0 && fn_ == 0 && tp > 0 && pattern_mismatch.is_empty() && uncovered.is_empty() {
        Verdict::Pass(summary)
    } else {
        Verdict::Fail(format!("{summary}; pattern mismatches {pattern_mismatch:?}; uncovered {uncovered:?}"))
    }
}

// ---- 5 ------------------------------------------------------------------

fn recipe_determinism() -> Verdict {
    let scratch = tempfile::tempdir().unwrap();
    let corpus = common::fixture_corpus(scratch.path());
    let run_id = RunId::from_raw("0123456789abcdef");
    let mut checked = 0;
    for (i, (name, root)) in corpus.iter().enumerate() {
        let spec = spec_for(root, &format!("r{i}"));
        let first = generate_build_recipe(&spec, root, &run_id, DEFAULT_BASE_IMAGE);
        for _ in 0..100 {
            let again = generate_build_recipe(&spec, root, &run_id, DEFAULT_BASE_IMAGE);
            if again.dockerfile_text != first.dockerfile_text
                || again.manifest_text != first.manifest_text
                || again.local_manifest_text != first.local_manifest_text
                || again.image_tag != first.image_tag
            {
                return Verdict::Fail(format!("{name}: recipe differs between calls"));
            }
            checked += 1;
        }
    }
    Verdict::Pass(format!("{checked} regenerations byte-identical across {} specs", corpus.len()))
}

// ---- 6 ------------------------------------------------------------------

fn end_to_end() -> Verdict {
    use nbrepro::runtime::{ContainerRuntime, DockerCli};
    let Some(runtime) = DockerCli::detect() else {
        return Verdict::Skip("no container runtime (docker/podman) reachable".into());
    };
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let fixtures = common::fixture_corpus(&dir.path().join("corpus"));
    let inputs = fixtures.iter().map(|(_, p)| p.to_string_lossy().into_owned()).collect();
    let mut config = common::config_for(dir.path(), inputs);
    config.exec_timeout = Duration::from_secs(300);
    let store = Store::open(&config.store_path).unwrap();
    let inv = common::run_stages(&store, &config, Some(&runtime as &dyn ContainerRuntime));
    let results = common::fixture_expectations(&store, &inv, &fixtures);
    let failed: Vec<String> =
        results.iter().filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}"))).collect();
    if failed.is_empty() {
        Verdict::Pass(format!("6 fixture repositories as expected in {:?}", started.elapsed()))
    } else {
        Verdict::Fail(failed.join("; "))
    }
}

// ---- 7 ------------------------------------------------------------------

struct Row {
    label: &'static str,
    install: &'static str,
    prev_status: &'static str,
    prev_diff: Option<u32>,
    provisioning: ProvisioningStatus,
    execution: Option<ExecutionStatus>,
    errors: &'static [&'static str],
    diff: Option<usize>,
    expected: OutcomeClass,
}

fn table_rows() -> Vec<Row> {
    use ExecutionStatus as S;
    use OutcomeClass::*;
    use ProvisioningStatus as P;
    let row = |label, install, prev_status, prev_diff, provisioning, execution, errors, diff, expected| Row {
        label,
        install,
        prev_status,
        prev_diff,
        provisioning,
        execution,
        errors,
        diff,
        expected,
    };
    vec![
        row("A1", "Fail", "Fail", None, P::EnvironmentBuilt, Some(S::Success), &[], Some(4), EnvironmentResolved),
        row("A2", "Fail", "Install Dependency Error", None, P::EnvironmentBuilt, Some(S::Success), &[], Some(30), EnvironmentResolved),
        row("A3", "Fail", "Install Dependency Error", None, P::EnvironmentBuilt, Some(S::ErroredButCompleted), &["ModuleNotFoundError"], Some(4), EnvironmentResolved),
        row("A4", "Fail", "Install Dependency Error", None, P::EnvironmentBuilt, Some(S::ErroredButCompleted), &["PermissionError"], Some(9), EnvironmentResolved),
        row("B1", "Success", "SyntaxError", Some(0), P::EnvironmentBuilt, Some(S::ErroredButCompleted), &["SyntaxError"], Some(20), PersistentError),
        row("B2", "Success", "FileNotFoundError", Some(0), P::EnvironmentBuilt, Some(S::ErroredButCompleted), &["FileNotFoundError"], Some(20), PersistentError),
        row("B3", "Sucess", "File Not Found Error", Some(0), P::EnvironmentBuilt, Some(S::ErroredButCompleted), &["File Not Found Error"], Some(2), PersistentError),
        row("C1", "Success", "Success", Some(0), P::EnvironmentBuilt, Some(S::Success), &[], Some(3), ReproducibilityDrift),
        row("C2", "Success", "Success", Some(1), P::EnvironmentBuilt, Some(S::Success), &[], Some(1), ReproducibilityDrift),
        row("D1", "Success", "ModuleNotFoundError", Some(0), P::InvalidUrl, None, &[], None, Regression),
        row("D2", "Fail", "Install Dependency Error", None, P::BuildFailed, Some(S::KernelNotFound), &[], None, Regression),
        row("D3", "Success", "Sucess", Some(0), P::EnvironmentBuilt, Some(S::Success), &[], Some(5), Regression),
        row("D4", "Sucess", "<Skipping notebook>", None, P::EnvironmentBuilt, Some(S::ErroredButCompleted), &["TypeError"], Some(10), Regression),
        row("D5", "Fail", "Install Dependency Error", None, P::BuildFailed, None, &["Module Not Found"], None, Regression),
        row("D6", "Success", "ModuleNotFoundError", Some(1), P::EnvironmentBuilt, Some(S::NotebookNotFound), &[], None, Regression),
    ]
}

fn outcome_classification() -> Verdict {
    let mut wrong = Vec::new();
    let rows = table_rows();
    for r in &rows {
        let baseline = BaselineRecord {
            notebook_id: NotebookId::from_raw(r.label),
            prev_dependency_install: InstallOutcome::parse_lenient(r.install).unwrap(),
            prev_execution_status: r.prev_status.into(),
            prev_diff_cells: r.prev_diff,
            prev_duration_s: None,
        };
        let current = CurrentOutcome {
            provisioning: r.provisioning,
            execution: r.execution,
            error_types: r.errors.iter().map(|s| s.to_string()).collect(),
            diff_cells: r.diff,
            score: None,
        };
        let got = assign_outcome_class(&baseline, &current);
        if got != r.expected {
            wrong.push(format!("{} expected {} got {}", r.label, r.expected.as_str(), got.as_str()));
        }
    }

    // 96 repositories with a failed baseline install; 64 fully resolved
    let mut assignments = Vec::new();
    for repo in 0..96 {
        for nb in 0..2 {
            let class = if repo < 64 || nb == 0 { OutcomeClass::EnvironmentResolved } else { OutcomeClass::Regression };
            assignments.push(OutcomeAssignment {
                notebook_id: NotebookId::from_raw(format!("{repo}-{nb}")),
                repository_id: RepositoryId::from_raw(format!("{repo}")),
                baseline_install_failed: true,
                class,
            });
        }
    }
    let rate = resolution_rate(&assignments).unwrap_or(f64::NAN);
    let rate_ok = (rate - 66.7).abs() <= 0.05;
    if wrong.is_empty() && rate_ok {
        Verdict::Pass(format!("{} table rows reproduced; resolution rate {rate:.2}%", rows.len()))
    } else {
        Verdict::Fail(format!(
            "{}/{} table rows reproduced ({}); resolution rate {rate:.2}%{}",
            rows.len() - wrong.len(),
            rows.len(),
            wrong.join("; "),
            if rate_ok { "" } else { " out of tolerance" }
        ))
    }
}

// ---- 8 ------------------------------------------------------------------

#[derive(Debug, Clone)]
struct NbPlan {
    status: usize,
    errors: Vec<usize>,
    cells: (usize, usize, usize),
    patterns: bool,
    baseline: Option<(bool, usize)>,
}

#[derive(Debug, Clone)]
struct RepoPlan {
    has_requirements: bool,
    status: usize,
    notebooks: Vec<NbPlan>,
}

const ERROR_TYPES: &[&str] = &["ModuleNotFoundError", "FileNotFoundError", "NameError", "TypeError", "OddCustomError"];
const BASELINE_STATUSES: &[&str] = &["Success", "ModuleNotFoundError", "Install Dependency Error", "<Skipping notebook>", "-"];

fn repo_plan() -> impl Strategy<Value = RepoPlan> {
    let nb = (
        0..ExecutionStatus::ALL.len(),
        proptest::collection::vec(0..ERROR_TYPES.len(), 0..4),
        (0usize..6, 0usize..6, 0usize..6),
        any::<bool>(),
        proptest::option::of((any::<bool>(), 0..BASELINE_STATUSES.len())),
    )
        .prop_map(|(status, errors, cells, patterns, baseline)| NbPlan {
            status,
            errors,
            cells,
            patterns,
            baseline,
        });
    (any::<bool>(), 0..ProvisioningStatus::ALL.len(), proptest::collection::vec(nb, 0..5)).prop_map(
        |(has_requirements, status, notebooks)| RepoPlan {
            has_requirements,
            status,
            notebooks,
        },
    )
}

fn populate(store: &Store, plan: &[RepoPlan]) {
    let mut baseline = Vec::new();
    let mut outcomes = Vec::new();
    let mut run_ids = Vec::new();
    for (i, rp) in plan.iter().enumerate() {
        let repo_id = RepositoryId::from_raw(format!("repo{i:02}"));
        store
            .upsert_repository(&Repository {
                repository_id: repo_id.clone(),
                url: format!("https://example.org/r/{i}"),
                local_path: PathBuf::from(format!("/work/{i}")),
                accessible: true,
                has_requirements_file: rp.has_requirements,
                requirement_manifests: if rp.has_requirements { vec!["requirements.txt".into()] } else { vec![] },
                setup_manifests: vec![],
                notebook_count: 0,
            })
            .unwrap();
        let descriptors: Vec<_> = rp
            .notebooks
            .iter()
            .enumerate()
            .map(|(j, np)| {
                let d = nbrepro::corpus::NotebookDescriptor {
                    notebook_id: NotebookId::for_path(&repo_id, &format!("nb{j}.ipynb")),
                    repository_id: repo_id.clone(),
                    relative_path: format!("nb{j}.ipynb"),
                    kernel_name: "python3".into(),
                    language: Some("python".into()),
                    nbformat_version: (4, 4),
                    parse_error: None,
                };
                let total = np.cells.0 + np.cells.1 + np.cells.2;
                let profile = NotebookProfile {
                    code_cells: total,
                    markdown_cells: 1,
                    nondeterminism_patterns: if np.patterns { vec!["random.*".into()] } else { vec![] },
                };
                (d, Some(profile))
            })
            .collect();
        store.replace_notebooks(&repo_id, &descriptors).unwrap();
        let mut run = RunRecord::start(repo_id.clone(), "inv");
        run.provisioning_status = ProvisioningStatus::ALL[rp.status];
        run.finish();
        store.insert_run(&run).unwrap();
        run_ids.push(run.run_id.clone());
        if run.provisioning_status != ProvisioningStatus::EnvironmentBuilt {
            continue;
        }
        for ((d, _), np) in descriptors.iter().zip(&rp.notebooks) {
            let status = ExecutionStatus::ALL[np.status];
            let mut rec = ExecutionRecord::skipped(d, &run.run_id, "planned");
            rec.status = status;
            if status == ExecutionStatus::ErroredButCompleted {
                rec.errors = np
                    .errors
                    .iter()
                    .enumerate()
                    .map(|(k, t)| ExecutionError {
                        error_type: ERROR_TYPES[*t].into(),
                        category: ErrorCategory::ALL[*t % ErrorCategory::ALL.len()],
                        message: "boom".into(),
                        cell_index: k,
                        count: 1,
                        unrecognized: false,
                    })
                    .collect();
            }
            store.put_execution(&rec).unwrap();
            if matches!(status, ExecutionStatus::Success | ExecutionStatus::ErroredButCompleted) {
                let (a, b, c) = np.cells;
                let mut orig = Vec::new();
                let mut exec = Vec::new();
                for k in 0..a {
                    orig.push((format!("print({k})"), vec![CellOutput::stream("stdout", "same\n")]));
                    exec.push((format!("print({k})"), vec![CellOutput::stream("stdout", "same\n")]));
                }
                for _ in 0..b {
                    orig.push(("print(v)".into(), vec![CellOutput::stream("stdout", "a\n")]));
                    exec.push(("print(v)".into(), vec![CellOutput::stream("stdout", "b\n")]));
                }
                for _ in 0..c {
                    orig.push(("print(uuid.uuid4())".into(), vec![CellOutput::stream("stdout", "a\n")]));
                    exec.push(("print(uuid.uuid4())".into(), vec![CellOutput::stream("stdout", "b\n")]));
                }
                let m = compute_metrics(&d.notebook_id, &run.run_id, &code_notebook(orig), &code_notebook(exec));
                store.put_metrics(&m).unwrap();
            }
        }
        for ((d, _), np) in descriptors.iter().zip(&rp.notebooks) {
            if let Some((install_ok, status)) = np.baseline {
                let b = BaselineRecord {
                    notebook_id: d.notebook_id.clone(),
                    prev_dependency_install: if install_ok { InstallOutcome::Success } else { InstallOutcome::Fail },
                    prev_execution_status: BASELINE_STATUSES[status].into(),
                    prev_diff_cells: None,
                    prev_duration_s: None,
                };
                let class = assign_outcome_class(
                    &b,
                    &CurrentOutcome {
                        provisioning: run.provisioning_status,
                        execution: Some(ExecutionStatus::ALL[np.status]),
                        error_types: vec![],
                        diff_cells: None,
                        score: None,
                    },
                );
                outcomes.push(OutcomeRow {
                    notebook_id: d.notebook_id.clone(),
                    run_id: run.run_id.clone(),
                    repository_id: repo_id.clone(),
                    class,
                    baseline_install_failed: !install_ok,
                });
                baseline.push(b);
            }
        }
    }
    store.replace_baseline(&baseline).unwrap();
    store.replace_outcomes(&run_ids, &outcomes).unwrap();
}

fn report_integrity() -> Verdict {
    let mut runner = TestRunner::new(Config {
        cases: 500,
        failure_persistence: None,
        ..Config::default()
    });
    let out = tempfile::tempdir().unwrap();
    let result = runner.run(&proptest::collection::vec(repo_plan(), 0..8), |plan| {
        let store = Store::open_in_memory().unwrap();
        populate(&store, &plan);
        let s = aggregate_corpus(&store).unwrap();
        let violations = s.invariant_violations();
        prop_assert!(violations.is_empty(), "{:?}", violations);

        // independent recounts
        let sum = |m: &BTreeMap<String, usize>| m.values().sum::<usize>();
        prop_assert_eq!(s.repositories.total, plan.len());
        prop_assert_eq!(sum(&s.repositories.provisioning), plan.len());
        prop_assert_eq!(s.repositories.with_requirements + s.repositories.without_requirements, plan.len());
        let notebooks: usize = plan.iter().map(|r| r.notebooks.len()).sum();
        prop_assert_eq!(s.notebooks.total, notebooks);
        prop_assert_eq!(s.notebooks.zero_errors + s.notebooks.with_errors + s.notebooks.not_completed, notebooks);
        prop_assert_eq!(sum(&s.notebooks.status), notebooks);
        prop_assert_eq!(sum(&s.errors.by_type), s.errors.notebooks_with_errors);
        prop_assert_eq!(sum(&s.errors.by_category), s.errors.notebooks_with_errors);
        let built = ProvisioningStatus::ALL.iter().position(|p| *p == ProvisioningStatus::EnvironmentBuilt).unwrap();
        let compared = plan
            .iter()
            .filter(|r| r.status == built)
            .flat_map(|r| &r.notebooks)
            .filter(|n| {
                matches!(ExecutionStatus::ALL[n.status], ExecutionStatus::Success | ExecutionStatus::ErroredButCompleted)
            })
            .count();
        prop_assert_eq!(s.scored_notebooks, compared);
        prop_assert_eq!(sum(&s.score_categories), compared);
        if let Some(o) = &s.outcomes {
            prop_assert_eq!(sum(&o.classes) + o.unclassified, notebooks);
        }

        let files = emit_reports(&s, out.path(), chrono::Utc::now()).unwrap();
        prop_assert_eq!(files.len(), 3);
        let back = read_report(&out.path().join("report.json")).unwrap();
        prop_assert_eq!(back.summary, s);
        Ok(())
    });
    match result {
        Ok(()) => Verdict::Pass("500 randomized stores, every histogram sums to its population".into()),
        Err(e) => Verdict::Fail(e.to_string()),
    }
}

fn main() {
    let criteria: Vec<(&str, fn() -> Verdict)> = vec![
        ("score formula exactness", score_formula),
        ("self-comparison identity", self_comparison),
        ("import inference matches labels", import_inference),
        ("non-determinism detector precision and recall", nondeterminism_detector),
        ("recipe determinism", recipe_determinism),
        ("end-to-end fixture corpus", end_to_end),
        ("outcome classification", outcome_classification),
        ("report integrity", report_integrity),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
        match verdict {
            Verdict::Pass(d) => println!("PASS  {}. {name}: {d}", i + 1),
            Verdict::Skip(d) => println!("SKIP  {}. {name}: {d}", i + 1),
            Verdict::Fail(d) => {
                failed += 1;
                println!("FAIL  {}. {name}: {d}", i + 1)
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
