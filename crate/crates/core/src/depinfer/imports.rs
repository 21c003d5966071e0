//! Static import extraction and notebook install-command scanning.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;

use crate::pysource::{code_only, statements, strip_ipython};

static IDENTIFIER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[A-Za-z_][A-Za-z0-9_]*$").unwrap());
/// Compound-statement headers that may precede an import on the same line.
static COMPOUND_PREFIX: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:(?:try|else|finally)\s*:|(?:if|elif|while|with|except|for)\b[^:]*:)\s*").unwrap()
});

fn top_level(dotted: &str) -> Option<String> {
    let first = dotted.trim().split('.').next()?.trim();
    IDENTIFIER.is_match(first).then(|| first.to_string())
}

fn imports_in_statement(stmt: &str, found: &mut BTreeSet<String>) {
    let mut stmt = stmt.trim();
    while let Some(m) = COMPOUND_PREFIX.find(stmt) {
        if m.end() == 0 {
            break;
        }
        stmt = stmt[m.end()..].trim_start();
    }
    if let Some(rest) = stmt.strip_prefix("import") {
        if !rest.starts_with(char::is_whitespace) {
            return;
        }
        for item in rest.split(',') {
            let module = item.split_whitespace().next().unwrap_or("");
            if let Some(name) = top_level(module) {
                found.insert(name);
            }
        }
    } else if let Some(rest) = stmt.strip_prefix("from") {
        if !rest.starts_with(char::is_whitespace) {
            return;
        }
        let mut words = rest.split_whitespace();
        let module = words.next().unwrap_or("");
        if words.next() != Some("import") || module.starts_with('.') {
            // relative imports refer to the repository itself
            return;
        }
        if let Some(name) = top_level(module) {
            found.insert(name);
        }
    }
}

/// Top-level module names imported by a code cell. Comments, string
/// literals and IPython syntax are ignored; broken cells are scanned line by
/// line as far as possible.
pub fn extract_imports(source: &str) -> BTreeSet<String> {
    let code = code_only(&strip_ipython(source));
    let mut found = BTreeSet::new();
    for stmt in statements(&code) {
        imports_in_statement(&stmt, &mut found);
    }
    found
}

/// pip options that consume the following argument.
const OPTIONS_WITH_VALUE: &[&str] = &[
    "-r", "--requirement", "-c", "--constraint", "-i", "--index-url", "--extra-index-url",
    "-f", "--find-links", "-t", "--target", "--trusted-host", "--prefix", "--root",
    "--upgrade-strategy", "--src", "--python-version", "--platform", "--implementation",
    "--abi", "--progress-bar", "--log", "--cache-dir",
];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MagicInstalls {
    pub specs: Vec<String>,
    pub warnings: Vec<String>,
}

fn unquote(token: &str) -> &str {
    let t = token.trim();
    for q in ['"', '\''] {
        if let Some(inner) = t.strip_prefix(q).and_then(|r| r.strip_suffix(q)) {
            return inner;
        }
    }
    t
}

/// Tokens after `install` for `pip install`, `pip3 install`, `python -m pip install`
/// and `{sys.executable} -m pip install`.
fn pip_install_args(command: &str) -> Option<Vec<&str>> {
    let mut tokens: Vec<&str> = Vec::new();
    for token in command.split_whitespace() {
        if matches!(token, "&&" | "||" | "|" | ";") || token.starts_with('#') || token.starts_with('>') || token.starts_with("2>") {
            break;
        }
        if let Some(last) = token.strip_suffix(';') {
            tokens.push(last);
            break;
        }
        tokens.push(token);
    }
    let mut i = 0;
    if tokens.get(i).is_some_and(|t| t.starts_with("python") || t.contains("sys.executable")) {
        if tokens.get(i + 1) != Some(&"-m") {
            return None;
        }
        i += 2;
    }
    if !tokens.get(i).is_some_and(|t| *t == "pip" || *t == "pip3") {
        return None;
    }
    if tokens.get(i + 1) != Some(&"install") {
        return None;
    }
    Some(tokens[i + 2..].to_vec())
}

/// Requirement specifiers from `!pip install ...` and `%pip install ...` lines.
pub fn extract_magic_installs(source: &str) -> MagicInstalls {
    let mut out = MagicInstalls::default();
    for line in source.lines() {
        let trimmed = line.trim_start();
        let Some(command) = trimmed.strip_prefix('!').or_else(|| trimmed.strip_prefix('%')) else {
            continue;
        };
        let Some(args) = pip_install_args(command.trim()) else {
            continue;
        };
        let mut iter = args.into_iter();
        while let Some(arg) = iter.next() {
            let arg = unquote(arg);
            if arg.starts_with('-') {
                let flag = arg.split('=').next().unwrap_or(arg);
                if OPTIONS_WITH_VALUE.contains(&flag) && !arg.contains('=') {
                    let value = iter.next().unwrap_or("");
                    if flag == "-r" || flag == "--requirement" {
                        out.warnings
                            .push(format!("notebook install of requirements file skipped: {}", unquote(value)));
                    }
                } else if arg == "-e" || arg == "--editable" {
                    if let Some(target) = iter.next() {
                        out.specs.push(format!("-e {}", unquote(target)));
                    }
                }
                continue;
            }
            if !arg.is_empty() {
                out.specs.push(arg.to_string());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn grammar_forms() {
        assert_eq!(
            extract_imports("import numpy as np\nfrom sklearn.model_selection import train_test_split"),
            set(&["numpy", "sklearn"])
        );
        assert_eq!(
            extract_imports("import os, sys as system, matplotlib.pyplot as plt\nimport a.b.c"),
            set(&["os", "sys", "matplotlib", "a"])
        );
    }

    #[test]
    fn comments_and_strings_excluded() {
        assert_eq!(extract_imports("# import fake\ns = 'import nope'"), set(&[]));
        assert_eq!(extract_imports("doc = \"\"\"\nimport hidden\n\"\"\""), set(&[]));
    }

    #[test]
    fn relative_imports_excluded() {
        assert_eq!(extract_imports("from . import helpers"), set(&[]));
        assert_eq!(extract_imports("from .utils import x\nfrom ..pkg.mod import y"), set(&[]));
    }

    #[test]
    fn nested_and_conditional_imports() {
        let src = "try:\n    import ujson as json\nexcept ImportError:\n    import json\n\
                   def f():\n    from scipy import stats\n    return stats\n\
                   if True: import seaborn\n";
        assert_eq!(extract_imports(src), set(&["json", "scipy", "seaborn", "ujson"]));
    }

    #[test]
    fn broken_cells_are_scanned_best_effort() {
        let src = "import pandas\nprint 'python 2 style'\nfor x in :\nfrom tqdm import tqdm";
        assert_eq!(extract_imports(src), set(&["pandas", "tqdm"]));
    }

    #[test]
    fn parenthesized_from_import() {
        let src = "from keras.layers import (\n    Dense,\n    Dropout,\n)\nimport torch; import torchvision";
        assert_eq!(extract_imports(src), set(&["keras", "torch", "torchvision"]));
    }

    #[test]
    fn lookalike_words_are_not_imports() {
        assert_eq!(extract_imports("important = 1\nfromage = 2\nx.import_data()"), set(&[]));
    }

    #[test]
    fn magic_lines_ignored_for_imports() {
        assert_eq!(extract_imports("!pip install requests\n%matplotlib inline\nimport bs4"), set(&["bs4"]));
    }

    #[test]
    fn magic_installs() {
        let src = "!pip install -q numpy==1.21 'pandas>=1'\n%pip install --upgrade seaborn\n\
                   !python -m pip install -r reqs.txt tqdm && echo done\n!ls -la\nimport os";
        let got = extract_magic_installs(src);
        assert_eq!(got.specs, vec!["numpy==1.21", "pandas>=1", "seaborn", "tqdm"]);
        assert_eq!(got.warnings.len(), 1);
        assert!(got.warnings[0].contains("reqs.txt"));
    }

    #[test]
    fn magic_install_with_interpreter_path() {
        let got = extract_magic_installs("!{sys.executable} -m pip install --index-url https://x/simple xgboost");
        assert_eq!(got.specs, vec!["xgboost"]);
        assert_eq!(extract_magic_installs("!conda install numpy").specs, Vec::<String>::new());
    }
}
