//! Declared dependency manifests: `requirements.txt` and `setup.py`.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RequirementOrigin {
    DeclaredRequirements,
    DeclaredSetup,
    /// `!pip install` / `%pip install` lines inside notebook cells.
    DeclaredMagicInstall,
    InferredImport,
}

impl RequirementOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            RequirementOrigin::DeclaredRequirements => "DeclaredRequirements",
            RequirementOrigin::DeclaredSetup => "DeclaredSetup",
            RequirementOrigin::DeclaredMagicInstall => "DeclaredMagicInstall",
            RequirementOrigin::InferredImport => "InferredImport",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageRequirement {
    /// Lowercase, with runs of `-`, `_` and `.` collapsed to `-`.
    pub distribution_name: String,
    pub extras: Vec<String>,
    pub version_constraint: Option<String>,
    pub marker: Option<String>,
    /// Editable, VCS, URL and path requirements, kept verbatim.
    pub opaque: Option<String>,
    pub origin: RequirementOrigin,
}

impl PackageRequirement {
    pub fn named(name: &str, origin: RequirementOrigin) -> Self {
        Self {
            distribution_name: normalize_distribution_name(name),
            extras: Vec::new(),
            version_constraint: None,
            marker: None,
            opaque: None,
            origin,
        }
    }

    pub fn with_constraint(mut self, constraint: &str) -> Self {
        self.version_constraint = Some(constraint.to_string());
        self
    }

    /// The line written to the synthesized manifest.
    pub fn manifest_line(&self) -> String {
        if let Some(raw) = &self.opaque {
            return raw.clone();
        }
        let mut line = self.distribution_name.clone();
        if !self.extras.is_empty() {
            line.push('[');
            line.push_str(&self.extras.join(","));
            line.push(']');
        }
        if let Some(c) = &self.version_constraint {
            line.push_str(c);
        }
        if let Some(m) = &self.marker {
            line.push_str("; ");
            line.push_str(m);
        }
        line
    }
}

impl fmt::Display for PackageRequirement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.manifest_line())
    }
}

/// Package-index name normalization: lowercase, separator runs become `-`.
pub fn normalize_distribution_name(name: &str) -> String {
    static SEPARATORS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[-_.]+").unwrap());
    SEPARATORS.replace_all(name.trim(), "-").to_ascii_lowercase()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ManifestParse {
    pub requirements: Vec<PackageRequirement>,
    pub warnings: Vec<String>,
}

static NAME_AND_REST: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^([A-Za-z0-9](?:[A-Za-z0-9._-]*[A-Za-z0-9])?)\s*(?:\[([^\]]*)\])?\s*(.*)$").unwrap()
});
static SPECIFIER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(===|==|!=|<=|>=|~=|<|>)\s*([A-Za-z0-9.*+!_-]+)$").unwrap());
static EGG_FRAGMENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"#egg=([A-Za-z0-9._-]+)").unwrap());
static INLINE_COMMENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(^|\s)#.*$").unwrap());
static PER_REQUIREMENT_OPTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s--[a-z-]+.*$").unwrap());
static DIRECT_REFERENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([A-Za-z0-9][A-Za-z0-9._-]*)\s*(?:\[[^\]]*\])?\s*@\s*\S+").unwrap());

fn is_url_like(spec: &str) -> bool {
    spec.contains("://")
        || ["git+", "hg+", "svn+", "bzr+"].iter().any(|p| spec.starts_with(p))
        || spec.starts_with('.')
        || spec.starts_with('/')
        || [".whl", ".tar.gz", ".zip", ".tgz"].iter().any(|s| spec.ends_with(s))
}

/// Best name for a URL or path requirement: `#egg=`, `name @`, or the last path segment.
fn opaque_name(spec: &str) -> String {
    if let Some(c) = EGG_FRAGMENT.captures(spec) {
        return normalize_distribution_name(&c[1]);
    }
    if let Some(c) = DIRECT_REFERENCE.captures(spec) {
        return normalize_distribution_name(&c[1]);
    }
    let without_fragment = spec.split(['#', '?']).next().unwrap_or(spec);
    let segment = without_fragment
        .trim_end_matches('/')
        .rsplit('/')
        .next()
        .unwrap_or(without_fragment);
    // `repo.git@v1` names a revision of `repo`
    let segment = segment.split('@').next().unwrap_or(segment);
    let mut stem = segment.to_string();
    for suffix in [".git", ".zip", ".tar.gz", ".tgz"] {
        if let Some(s) = stem.strip_suffix(suffix) {
            stem = s.to_string();
        }
    }
    if let Some(s) = stem.strip_suffix(".whl") {
        stem = s.split('-').next().unwrap_or(s).to_string();
    }
    let name = normalize_distribution_name(&stem);
    if name.is_empty() {
        normalize_distribution_name(spec)
    } else {
        name
    }
}

/// Parses one requirement specifier (no options, no comments).
pub fn parse_requirement(spec: &str, origin: RequirementOrigin) -> Result<PackageRequirement, String> {
    let spec = spec.trim();
    if spec.is_empty() {
        return Err("empty requirement".into());
    }
    if let Some(rest) = spec.strip_prefix("-e").or_else(|| spec.strip_prefix("--editable")) {
        let rest = rest.trim_start_matches('=').trim();
        if rest.is_empty() {
            return Err(format!("editable requirement without a target: {spec:?}"));
        }
        return Ok(opaque(spec, origin));
    }
    if DIRECT_REFERENCE.is_match(spec) || is_url_like(spec) {
        return Ok(opaque(spec, origin));
    }

    let (body, marker) = match spec.split_once(';') {
        Some((b, m)) => (b.trim(), Some(m.trim().to_string()).filter(|m| !m.is_empty())),
        None => (spec, None),
    };
    let caps = NAME_AND_REST
        .captures(body)
        .ok_or_else(|| format!("unparseable requirement {spec:?}"))?;
    let extras: Vec<String> = caps
        .get(2)
        .map(|m| {
            m.as_str()
                .split(',')
                .map(|e| e.trim().to_ascii_lowercase())
                .filter(|e| !e.is_empty())
                .collect()
        })
        .unwrap_or_default();
    let rest = caps.get(3).map_or("", |m| m.as_str()).trim();
    let rest = rest
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .unwrap_or(rest)
        .trim();
    let version_constraint = if rest.is_empty() {
        None
    } else {
        let mut parts = Vec::new();
        for clause in rest.split(',') {
            let clause = clause.trim();
            let c = SPECIFIER
                .captures(clause)
                .ok_or_else(|| format!("unparseable version constraint {clause:?} in {spec:?}"))?;
            parts.push(format!("{}{}", &c[1], &c[2]));
        }
        Some(parts.join(","))
    };
    Ok(PackageRequirement {
        distribution_name: normalize_distribution_name(&caps[1]),
        extras,
        version_constraint,
        marker,
        opaque: None,
        origin,
    })
}

fn opaque(spec: &str, origin: RequirementOrigin) -> PackageRequirement {
    let target = spec
        .trim_start_matches("--editable")
        .trim_start_matches("-e")
        .trim_start_matches('=')
        .trim();
    PackageRequirement {
        distribution_name: opaque_name(target),
        extras: Vec::new(),
        version_constraint: None,
        marker: None,
        opaque: Some(spec.to_string()),
        origin,
    }
}

/// Joins `\` continuations into logical lines.
fn logical_lines(text: &str) -> Vec<String> {
    let mut lines = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if let Some(head) = line.trim_end().strip_suffix('\\') {
            current.push_str(head);
            current.push(' ');
        } else {
            current.push_str(line);
            lines.push(std::mem::take(&mut current));
        }
    }
    if !current.trim().is_empty() {
        lines.push(current);
    }
    lines
}

/// Parses requirements-file text. Option lines are skipped with a warning;
/// editable, VCS and URL lines are kept verbatim.
pub fn parse_requirements_manifest(text: &str) -> ManifestParse {
    let mut parse = ManifestParse::default();
    for (i, line) in logical_lines(text).iter().enumerate() {
        let line = INLINE_COMMENT.replace(line, "");
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let is_editable = line.starts_with("-e") || line.starts_with("--editable");
        if line.starts_with('-') && !is_editable {
            parse
                .warnings
                .push(format!("line {}: option line skipped: {line}", i + 1));
            continue;
        }
        let spec = if is_editable {
            line.to_string()
        } else {
            PER_REQUIREMENT_OPTION.replace(line, "").trim().to_string()
        };
        match parse_requirement(&spec, RequirementOrigin::DeclaredRequirements) {
            Ok(req) => parse.requirements.push(req),
            Err(reason) => parse.warnings.push(format!("line {}: {reason}", i + 1)),
        }
    }
    parse
}

static INSTALL_REQUIRES: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"["']?install_requires["']?\s*[=:]\s*"#).unwrap());

enum SetupToken {
    Str(String),
    Comma,
    Other,
}

/// Reads a Python string literal starting at `pos` (no prefixes beyond r/u).
fn read_literal(chars: &[char], pos: &mut usize) -> Option<String> {
    let quote = chars[*pos];
    let triple = chars.get(*pos + 1) == Some(&quote) && chars.get(*pos + 2) == Some(&quote);
    let qlen = if triple { 3 } else { 1 };
    *pos += qlen;
    let mut value = String::new();
    while *pos < chars.len() {
        let c = chars[*pos];
        if c == '\\' {
            if let Some(&n) = chars.get(*pos + 1) {
                value.push(n);
            }
            *pos += 2;
            continue;
        }
        if c == quote
            && (!triple || (chars.get(*pos + 1) == Some(&quote) && chars.get(*pos + 2) == Some(&quote)))
        {
            *pos += qlen;
            return Some(value);
        }
        value.push(c);
        *pos += 1;
    }
    None
}

/// Extracts `install_requires` entries from a setup script by static matching.
/// The script is never executed; lists built at runtime yield a warning.
pub fn parse_setup_manifest(text: &str) -> ManifestParse {
    let mut parse = ManifestParse::default();
    let Some(found) = INSTALL_REQUIRES.find(text) else {
        return parse;
    };
    let chars: Vec<char> = text[found.end()..].chars().collect();
    let dynamic = |mut p: ManifestParse| {
        p.warnings.push("dynamic setup manifest".to_string());
        p.requirements.clear();
        p
    };
    let close = match chars.first() {
        Some('[') => ']',
        Some('(') => ')',
        _ => return dynamic(parse),
    };
    let mut pos = 1;
    let mut tokens = Vec::new();
    let mut closed = false;
    while pos < chars.len() {
        let c = chars[pos];
        if c == close {
            pos += 1;
            closed = true;
            break;
        }
        match c {
            c if c.is_whitespace() => pos += 1,
            '#' => {
                while pos < chars.len() && chars[pos] != '\n' {
                    pos += 1;
                }
            }
            ',' => {
                tokens.push(SetupToken::Comma);
                pos += 1;
            }
            '\'' | '"' => match read_literal(&chars, &mut pos) {
                Some(s) => tokens.push(SetupToken::Str(s)),
                None => return dynamic(parse),
            },
            _ => {
                tokens.push(SetupToken::Other);
                pos += 1;
            }
        }
    }
    if !closed || tokens.iter().any(|t| matches!(t, SetupToken::Other)) {
        return dynamic(parse);
    }
    // `[...] + extra` or `[...] * n` is still computed at runtime
    let trailing = chars[pos..].iter().find(|c| !c.is_whitespace());
    if matches!(trailing, Some('+') | Some('*') | Some('.')) {
        return dynamic(parse);
    }
    for token in tokens {
        if let SetupToken::Str(spec) = token {
            match parse_requirement(&spec, RequirementOrigin::DeclaredSetup) {
                Ok(req) => parse.requirements.push(req),
                Err(reason) => parse.warnings.push(reason),
            }
        }
    }
    parse
}
