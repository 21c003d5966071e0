//! Cell-level output comparison and reproducibility metrics.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ids::{NotebookId, RunId};
use crate::notebook::{Cell, CellOutput, OutputType, ParsedNotebook};
use crate::pysource::{code_only, strip_ipython};

static ANSI: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\x1b\[[0-9;?]*[ -/]*[@-~]|\x1b\][^\x07\x1b]*(?:\x07|\x1b\\)|\x1b[@-Z\\-_]").unwrap()
});

/// Terminal-faithful text normalization: escapes removed, CRLF folded,
/// carriage-return overwrites resolved, trailing whitespace dropped.
pub fn normalize_text(text: &str) -> String {
    let stripped = ANSI.replace_all(text, "");
    let unified = stripped.replace("\r\n", "\n");
    unified
        .lines()
        .map(|line| line.rsplit('\r').find(|seg| !seg.trim().is_empty()).unwrap_or("").trim_end())
        .collect::<Vec<_>>()
        .join("\n")
        .trim_end_matches('\n')
        .to_string()
}

fn is_textual(mime: &str) -> bool {
    mime.starts_with("text/") || mime.ends_with("+xml") || mime.ends_with("json") || mime.ends_with("javascript")
}

fn payload_text(mime: &str, value: &Value) -> String {
    match value {
        Value::String(s) if is_textual(mime) => normalize_text(s),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Canonical text of one output; equal strings mean equal outputs.
pub fn normalize_output(out: &CellOutput) -> String {
    match out.output_type {
        OutputType::Stream => {
            let text = out.payload.get("text/plain").and_then(Value::as_str).unwrap_or("");
            format!("stream[{}]\n{}", out.stream_name.as_deref().unwrap_or(""), normalize_text(text))
        }
        OutputType::Error => {
            let (name, value) = out
                .error
                .as_ref()
                .map(|e| (e.name.as_str(), e.value.as_str()))
                .unwrap_or(("", ""));
            format!("error\n{}: {}", name.trim(), normalize_text(value))
        }
        OutputType::ExecuteResult | OutputType::DisplayData => {
            let kind = if out.output_type == OutputType::ExecuteResult { "result" } else { "display" };
            let mut text = String::from(kind);
            for (mime, value) in &out.payload {
                text.push('\n');
                text.push_str(mime);
                text.push('\n');
                text.push_str(&payload_text(mime, value));
            }
            text
        }
    }
}

/// Normalized outputs of a cell, with consecutive chunks of the same
/// stream merged first.
pub fn normalized_outputs(cell: &Cell) -> Vec<String> {
    let mut merged: Vec<CellOutput> = Vec::new();
    for out in &cell.outputs {
        if out.output_type == OutputType::Stream {
            if let Some(prev) = merged.last_mut() {
                if prev.output_type == OutputType::Stream && prev.stream_name == out.stream_name {
                    let add = out.payload.get("text/plain").and_then(Value::as_str).unwrap_or("").to_string();
                    if let Some(Value::String(s)) = prev.payload.get_mut("text/plain") {
                        s.push_str(&add);
                    }
                    continue;
                }
            }
        }
        merged.push(out.clone());
    }
    merged.iter().map(normalize_output).collect()
}

pub const NONDETERMINISM_PATTERNS: &[&str] =
    &["random.*", "uuid.*", "np.random", "numpy.random", "time.time", "datetime.now", "os.environ"];

static DOTTED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[A-Za-z_][A-Za-z0-9_]*(?:[ \t]*\.[ \t]*[A-Za-z_][A-Za-z0-9_]*)*").unwrap());
static FROM_IMPORT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^[ \t]*from[ \t]+([A-Za-z_][\w.]*)[ \t]+import[ \t]+\(?([^)\n]*)").unwrap());

fn chain_patterns(parts: &[&str]) -> Option<&'static str> {
    match parts {
        ["np", "random", ..] => Some("np.random"),
        ["numpy", "random", ..] => Some("numpy.random"),
        ["random", _, ..] => Some("random.*"),
        ["uuid", _, ..] => Some("uuid.*"),
        ["time", "time", ..] => Some("time.time"),
        ["os", "environ", ..] => Some("os.environ"),
        _ => {
            let now = parts.windows(2).any(|w| w[0] == "datetime" && w[1] == "now");
            now.then_some("datetime.now")
        }
    }
}

/// Static scan for sources of run-to-run variability, outside comments and
/// string literals. Returns the matched pattern names in list order.
pub fn detect_nondeterminism(source: &str) -> (bool, Vec<String>) {
    let code = code_only(&strip_ipython(source));
    let mut hits = [false; NONDETERMINISM_PATTERNS.len()];
    let mut mark = |name: &str| {
        if let Some(i) = NONDETERMINISM_PATTERNS.iter().position(|p| *p == name) {
            hits[i] = true;
        }
    };
    for m in DOTTED.find_iter(&code) {
        let preceded_by_dot = code[..m.start()].trim_end_matches([' ', '\t']).ends_with('.');
        if preceded_by_dot {
            continue;
        }
        let parts: Vec<&str> = m.as_str().split('.').map(str::trim).collect();
        if let Some(name) = chain_patterns(&parts) {
            mark(name);
        }
    }
    for caps in FROM_IMPORT.captures_iter(&code) {
        let module: Vec<&str> = caps[1].split('.').collect();
        for name in caps[2].split(',') {
            let imported = name.split_whitespace().next().unwrap_or("");
            if imported.is_empty() {
                continue;
            }
            let mut parts = module.clone();
            parts.push(imported);
            if let Some(p) = chain_patterns(&parts) {
                mark(p);
            }
        }
    }
    let matched: Vec<String> = NONDETERMINISM_PATTERNS
        .iter()
        .zip(hits)
        .filter(|(_, hit)| *hit)
        .map(|(p, _)| p.to_string())
        .collect();
    (!matched.is_empty(), matched)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Identical,
    Different,
    NonDeterministic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellComparison {
    /// Code-cell position.
    pub cell_index: usize,
    pub verdict: Verdict,
    pub matched_patterns: Vec<String>,
}

/// Equal normalized output sequences are Identical regardless of patterns.
pub fn compare_cell(cell_index: usize, original: &Cell, executed: &Cell) -> CellComparison {
    if normalized_outputs(original) == normalized_outputs(executed) {
        return CellComparison {
            cell_index,
            verdict: Verdict::Identical,
            matched_patterns: Vec::new(),
        };
    }
    let (flagged, matched_patterns) = detect_nondeterminism(&original.source);
    CellComparison {
        cell_index,
        verdict: if flagged { Verdict::NonDeterministic } else { Verdict::Different },
        matched_patterns,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproducibilityMetrics {
    pub notebook_id: NotebookId,
    pub run_id: RunId,
    pub identical_count: usize,
    pub different_count: usize,
    pub nondeterministic_count: usize,
    pub identical_indices: Vec<usize>,
    pub different_indices: Vec<usize>,
    pub nondeterministic_indices: Vec<usize>,
    pub total_code_cells: usize,
    /// `None` when undefined (no code cells or structural mismatch).
    pub score: Option<f64>,
    /// Code-cell counts of the two artifacts differ; nothing was compared.
    pub structural_mismatch: bool,
    /// Code cells whose source matches a variability pattern, whatever the verdict.
    pub pattern_flagged_cells: Vec<usize>,
    pub cells: Vec<CellComparison>,
}

impl ReproducibilityMetrics {
    pub fn category(&self) -> ScoreCategory {
        categorize_score(self.score)
    }

    pub fn has_nondeterminism_patterns(&self) -> bool {
        !self.pattern_flagged_cells.is_empty()
    }
}

/// Identical cells over total code cells.
pub fn score_of(identical: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| identical as f64 / total as f64)
}

fn flagged_cells(cells: &[&Cell]) -> Vec<usize> {
    cells
        .iter()
        .enumerate()
        .filter(|(_, c)| detect_nondeterminism(&c.source).0)
        .map(|(i, _)| i)
        .collect()
}

/// Compares code cells position by position.
pub fn compute_metrics(
    notebook_id: &NotebookId,
    run_id: &RunId,
    original: &ParsedNotebook,
    executed: &ParsedNotebook,
) -> ReproducibilityMetrics {
    let left = original.code_cells();
    let right = executed.code_cells();
    let mut m = ReproducibilityMetrics {
        notebook_id: notebook_id.clone(),
        run_id: run_id.clone(),
        identical_count: 0,
        different_count: 0,
        nondeterministic_count: 0,
        identical_indices: Vec::new(),
        different_indices: Vec::new(),
        nondeterministic_indices: Vec::new(),
        total_code_cells: left.len(),
        score: None,
        structural_mismatch: left.len() != right.len(),
        pattern_flagged_cells: flagged_cells(&left),
        cells: Vec::new(),
    };
    if m.structural_mismatch {
        return m;
    }
    for (i, (a, b)) in left.iter().zip(&right).enumerate() {
        let cmp = compare_cell(i, a, b);
        match cmp.verdict {
            Verdict::Identical => m.identical_indices.push(i),
            Verdict::Different => m.different_indices.push(i),
            Verdict::NonDeterministic => m.nondeterministic_indices.push(i),
        }
        m.cells.push(cmp);
    }
    m.identical_count = m.identical_indices.len();
    m.different_count = m.different_indices.len();
    m.nondeterministic_count = m.nondeterministic_indices.len();
    m.score = score_of(m.identical_count, m.total_code_cells);
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScoreCategory {
    Poor,
    Low,
    Moderate,
    Good,
    High,
    Perfect,
    Unscored,
}

impl ScoreCategory {
    pub const ALL: [ScoreCategory; 7] = [
        ScoreCategory::Poor,
        ScoreCategory::Low,
        ScoreCategory::Moderate,
        ScoreCategory::Good,
        ScoreCategory::High,
        ScoreCategory::Perfect,
        ScoreCategory::Unscored,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreCategory::Poor => "Poor",
            ScoreCategory::Low => "Low",
            ScoreCategory::Moderate => "Moderate",
            ScoreCategory::Good => "Good",
            ScoreCategory::High => "High",
            ScoreCategory::Perfect => "Perfect",
            ScoreCategory::Unscored => "Unscored",
        }
    }

    /// Exact binning from integer counts, free of floating-point rounding.
    pub fn from_counts(identical: usize, total: usize) -> Self {
        if total == 0 {
            return ScoreCategory::Unscored;
        }
        if identical >= total {
            return ScoreCategory::Perfect;
        }
        let fifths = (5 * identical) / total;
        match fifths {
            0 => ScoreCategory::Poor,
            1 => ScoreCategory::Low,
            2 => ScoreCategory::Moderate,
            3 => ScoreCategory::Good,
            _ => ScoreCategory::High,
        }
    }
}

impl fmt::Display for ScoreCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Half-open bins of width 0.2; exactly 1.0 is Perfect.
pub fn categorize_score(score: Option<f64>) -> ScoreCategory {
    let Some(s) = score.filter(|s| s.is_finite() && (0.0..=1.0).contains(s)) else {
        return ScoreCategory::Unscored;
    };
    if s >= 1.0 {
        ScoreCategory::Perfect
    } else if s >= 0.8 {
        ScoreCategory::High
    } else if s >= 0.6 {
        ScoreCategory::Good
    } else if s >= 0.4 {
        ScoreCategory::Moderate
    } else if s >= 0.2 {
        ScoreCategory::Low
    } else {
        ScoreCategory::Poor
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::notebook::CellKind;
    use std::collections::BTreeMap;

    fn code(source: &str, outputs: Vec<CellOutput>) -> (CellKind, String, Vec<CellOutput>) {
        (CellKind::Code, source.to_string(), outputs)
    }

    fn ids() -> (NotebookId, RunId) {
        (NotebookId::from_raw("nb"), RunId::from_raw("run"))
    }

    #[test]
    fn text_normalization() {
        assert_eq!(
            normalize_output(&CellOutput::stream("stdout", "hello \r\n")),
            normalize_output(&CellOutput::stream("stdout", "hello\n"))
        );
        assert_eq!(normalize_text("\x1b[31mred\x1b[0m  "), "red");
        assert_eq!(normalize_text("10%\r50%\r100%\ndone"), "100%\ndone");
        assert_ne!(
            normalize_output(&CellOutput::stream("stdout", "x")),
            normalize_output(&CellOutput::stream("stderr", "x"))
        );
    }

    #[test]
    fn images_compare_exactly() {
        let png = |b64: &str| {
            let mut p = BTreeMap::new();
            p.insert("image/png".to_string(), Value::String(b64.into()));
            CellOutput::display_data(p)
        };
        assert_eq!(normalize_output(&png("iVBORw0KGgo=")), normalize_output(&png("iVBORw0KGgo=")));
        assert_ne!(normalize_output(&png("iVBORw0KGgo=")), normalize_output(&png("iVBORw0KGgp=")));
    }

    #[test]
    fn tracebacks_excluded() {
        let a = CellOutput::error("KeyError", "'k'", vec!["File /home/alice/x.py".into()]);
        let b = CellOutput::error("KeyError", "'k'", vec!["File /repo/x.py".into()]);
        assert_eq!(normalize_output(&a), normalize_output(&b));
    }

    #[test]
    fn execution_counts_ignored() {
        let mut p = BTreeMap::new();
        p.insert("text/plain".to_string(), Value::String("3".into()));
        let a = CellOutput::execute_result(p.clone(), Some(1));
        let b = CellOutput::execute_result(p, Some(7));
        assert_eq!(normalize_output(&a), normalize_output(&b));
    }

    #[test]
    fn stream_chunks_coalesce() {
        let nb = ParsedNotebook::from_cells(vec![
            code("print", vec![CellOutput::stream("stdout", "a\n"), CellOutput::stream("stdout", "b\n")]),
            code("print", vec![CellOutput::stream("stdout", "a\nb\n")]),
        ]);
        let cells = nb.code_cells();
        assert_eq!(normalized_outputs(cells[0]), normalized_outputs(cells[1]));
    }

    #[test]
    fn detector_examples() {
        assert_eq!(detect_nondeterminism("x = np.random.rand(3)"), (true, vec!["np.random".to_string()]));
        assert_eq!(detect_nondeterminism("print('random text')"), (false, vec![]));
        assert_eq!(detect_nondeterminism("t = time.time()"), (true, vec!["time.time".to_string()]));
        assert_eq!(
            detect_nondeterminism("from datetime import datetime\nstamp = datetime.now()").1,
            vec!["datetime.now"]
        );
        assert_eq!(detect_nondeterminism("from numpy.random import rand").1, vec!["numpy.random"]);
        assert!(!detect_nondeterminism("self.random.x = 1\nrng = my.time.time()").0);
        assert!(!detect_nondeterminism("import random").0);
    }

    #[test]
    fn verdicts() {
        let nb1 = ParsedNotebook::from_cells(vec![
            code("print(1)", vec![CellOutput::stream("stdout", "1\n")]),
            code("print(datetime.now())", vec![CellOutput::stream("stdout", "2020\n")]),
            code("print(2)", vec![CellOutput::stream("stdout", "2\n")]),
        ]);
        let nb2 = ParsedNotebook::from_cells(vec![
            code("print(1)", vec![CellOutput::stream("stdout", "1\n")]),
            code("print(datetime.now())", vec![CellOutput::stream("stdout", "2026\n")]),
            code("print(2)", vec![CellOutput::stream("stdout", "3\n")]),
        ]);
        let (a, b) = (nb1.code_cells(), nb2.code_cells());
        assert_eq!(compare_cell(0, a[0], b[0]).verdict, Verdict::Identical);
        let nd = compare_cell(1, a[1], b[1]);
        assert_eq!(nd.verdict, Verdict::NonDeterministic);
        assert_eq!(nd.matched_patterns, vec!["datetime.now"]);
        assert_eq!(compare_cell(2, a[2], b[2]).verdict, Verdict::Different);
        // equal outputs stay identical even when a pattern is present
        assert_eq!(compare_cell(1, a[1], a[1]).verdict, Verdict::Identical);
    }

    #[test]
    fn metrics_small_fixture() {
        let out = |s: &str| vec![CellOutput::stream("stdout", s)];
        let orig = ParsedNotebook::from_cells(vec![
            code("a", out("1")),
            (CellKind::Markdown, "text".into(), vec![]),
            code("b", out("2")),
            code("c", out("3")),
            code("random.random()", out("0.1")),
        ]);
        let exec = ParsedNotebook::from_cells(vec![
            code("a", out("1")),
            (CellKind::Markdown, "text".into(), vec![]),
            code("b", out("2")),
            code("c", out("4")),
            code("random.random()", out("0.7")),
        ]);
        let (n, r) = ids();
        let m = compute_metrics(&n, &r, &orig, &exec);
        assert_eq!((m.identical_count, m.different_count, m.nondeterministic_count), (2, 1, 1));
        assert_eq!(m.identical_indices, vec![0, 1]);
        assert_eq!(m.different_indices, vec![2]);
        assert_eq!(m.nondeterministic_indices, vec![3]);
        assert_eq!(m.score, Some(0.5));
        assert_eq!(m.pattern_flagged_cells, vec![3]);
    }

    #[test]
    fn self_comparison_and_edge_cases() {
        let nb = ParsedNotebook::from_cells(vec![code("x = time.time()", vec![CellOutput::stream("stdout", "1")])]);
        let (n, r) = ids();
        let m = compute_metrics(&n, &r, &nb, &nb);
        assert_eq!((m.different_count, m.score), (0, Some(1.0)));
        let empty = ParsedNotebook::from_cells(vec![(CellKind::Markdown, "only".into(), vec![])]);
        let e = compute_metrics(&n, &r, &empty, &empty);
        assert_eq!((e.total_code_cells, e.score, e.category()), (0, None, ScoreCategory::Unscored));
        let mismatch = compute_metrics(&n, &r, &nb, &empty);
        assert!(mismatch.structural_mismatch);
        assert_eq!(mismatch.category(), ScoreCategory::Unscored);
    }

    #[test]
    fn twenty_cells_fifteen_identical() {
        assert_eq!(score_of(15, 20), Some(0.75));
    }

    #[test]
    fn bins() {
        assert_eq!(categorize_score(Some(0.15)), ScoreCategory::Poor);
        assert_eq!(categorize_score(Some(0.2)), ScoreCategory::Low);
        assert_eq!(categorize_score(Some(0.4)), ScoreCategory::Moderate);
        assert_eq!(categorize_score(Some(0.6)), ScoreCategory::Good);
        assert_eq!(categorize_score(Some(0.8)), ScoreCategory::High);
        assert_eq!(categorize_score(Some(0.999)), ScoreCategory::High);
        assert_eq!(categorize_score(Some(1.0)), ScoreCategory::Perfect);
        assert_eq!(categorize_score(None), ScoreCategory::Unscored);
        assert_eq!(categorize_score(Some(f64::NAN)), ScoreCategory::Unscored);
    }

    #[test]
    fn exact_and_float_bins_agree() {
        for total in 1..=60usize {
            for identical in 0..=total {
                assert_eq!(
                    ScoreCategory::from_counts(identical, total),
                    categorize_score(score_of(identical, total)),
                    "{identical}/{total}"
                );
            }
        }
    }
}
