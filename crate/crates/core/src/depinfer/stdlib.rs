//! Standard-library membership and import-name to distribution-name aliases.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::sync::LazyLock;

const STDLIB_PY310: &str = include_str!("../../data/stdlib_py310.txt");
const LEGACY_PY2: &str = include_str!("../../data/legacy_py2_stdlib.txt");
const BUNDLED_ALIASES: &str = include_str!("../../data/import_aliases.txt");

fn data_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

static STDLIB: LazyLock<HashSet<&'static str>> =
    LazyLock::new(|| data_lines(STDLIB_PY310).chain(data_lines(LEGACY_PY2)).collect());

/// True for top-level modules shipped with the container's interpreter
/// (CPython 3.10), and for Python 2 stdlib names that no index provides.
pub fn is_standard_library(module: &str) -> bool {
    STDLIB.contains(module)
}

pub fn filter_standard_library(names: &BTreeSet<String>) -> BTreeSet<String> {
    names
        .iter()
        .filter(|n| !is_standard_library(n))
        .cloned()
        .collect()
}

/// Maps import names to the distributions that provide them.
#[derive(Debug, Clone)]
pub struct AliasTable {
    aliases: BTreeMap<String, String>,
}

#[derive(Debug, thiserror::Error)]
pub enum AliasTableError {
    #[error("alias table line {line}: expected `module = distribution`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("reading alias table {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Default for AliasTable {
    fn default() -> Self {
        Self::bundled()
    }
}

impl AliasTable {
    pub fn bundled() -> Self {
        let mut table = Self {
            aliases: BTreeMap::new(),
        };
        table
            .extend_from_str(BUNDLED_ALIASES)
            .expect("bundled alias table is well-formed");
        table
    }

    pub fn empty() -> Self {
        Self {
            aliases: BTreeMap::new(),
        }
    }

    /// Adds `module = distribution` lines; later entries override earlier ones.
    pub fn extend_from_str(&mut self, text: &str) -> Result<(), AliasTableError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (module, dist) = line.split_once('=').ok_or_else(|| AliasTableError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            let unquote = |s: &str| s.trim().trim_matches(|c| c == '"' || c == '\'').trim().to_string();
            let (module, dist) = (unquote(module), unquote(dist));
            if module.is_empty() || dist.is_empty() {
                return Err(AliasTableError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            }
            self.aliases.insert(module, dist);
        }
        Ok(())
    }

    pub fn extend_from_file(&mut self, path: &Path) -> Result<(), AliasTableError> {
        let text = std::fs::read_to_string(path).map_err(|source| AliasTableError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.extend_from_str(&text)
    }

    pub fn len(&self) -> usize {
        self.aliases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aliases.is_empty()
    }

    /// Distribution for an import name; the name itself when no alias exists.
    pub fn map_import_to_distribution(&self, module: &str) -> String {
        self.aliases
            .get(module)
            .cloned()
            .unwrap_or_else(|| module.to_string())
    }
}
