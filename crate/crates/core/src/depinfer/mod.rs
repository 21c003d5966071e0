//! Consolidated dependency specification from declared manifests and
//! static import analysis of notebook code.

mod imports;
mod requirements;
mod stdlib;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use imports::{extract_imports, extract_magic_installs, MagicInstalls};
pub use requirements::{
    normalize_distribution_name, parse_requirement, parse_requirements_manifest, parse_setup_manifest,
    ManifestParse, PackageRequirement, RequirementOrigin,
};
pub use stdlib::{filter_standard_library, is_standard_library, AliasTable, AliasTableError};

use crate::corpus::{NotebookDescriptor, Repository};
use crate::notebook::{code_cells, ParsedNotebook};

#[derive(Debug, Clone)]
pub struct InferenceOptions {
    pub aliases: AliasTable,
    pub scan_magic_installs: bool,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            aliases: AliasTable::bundled(),
            scan_magic_installs: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencySpec {
    pub repository_id: crate::ids::RepositoryId,
    /// Sorted by distribution name, one entry per name.
    pub requirements: Vec<PackageRequirement>,
    pub synthesized_manifest: String,
    /// Manifests read, repository-relative.
    pub manifests_used: Vec<String>,
    pub warnings: Vec<String>,
}

impl DependencySpec {
    pub fn is_empty(&self) -> bool {
        self.requirements.is_empty()
    }

    pub fn empty(repository_id: crate::ids::RepositoryId) -> Self {
        Self {
            repository_id,
            requirements: Vec::new(),
            synthesized_manifest: String::new(),
            manifests_used: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

/// Renders requirements as a requirements file: one LF-terminated line each,
/// sorted by distribution name.
pub fn render_manifest(requirements: &[PackageRequirement]) -> String {
    let mut sorted: Vec<&PackageRequirement> = requirements.iter().collect();
    sorted.sort_by(|a, b| a.distribution_name.cmp(&b.distribution_name));
    let mut text = String::new();
    for req in sorted {
        text.push_str(&req.manifest_line());
        text.push('\n');
    }
    text
}

/// Import names that resolve to code inside the repository: top-level
/// directories and modules, plus modules next to each notebook.
pub fn repository_modules(root: &Path, notebook_paths: &[&str]) -> BTreeSet<String> {
    let mut dirs: BTreeSet<std::path::PathBuf> = BTreeSet::new();
    dirs.insert(root.to_path_buf());
    for rel in notebook_paths {
        if let Some(parent) = Path::new(rel).parent() {
            dirs.insert(root.join(parent));
        }
    }
    let mut names = BTreeSet::new();
    for dir in dirs {
        let Ok(entries) = std::fs::read_dir(&dir) else {
            continue;
        };
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().to_string();
            if name.starts_with('.') {
                continue;
            }
            let path = entry.path();
            if path.is_dir() {
                names.insert(name);
            } else if let Some(stem) = name.strip_suffix(".py") {
                names.insert(stem.to_string());
            }
        }
    }
    names
}

/// Merges declared and inferred requirements for one repository.
///
/// Precedence on a name collision: requirements file, then setup script,
/// then notebook install commands, then imports. Standard-library names and
/// repository-internal modules never reach the manifest.
pub fn synthesize_dependency_spec(
    repo: &Repository,
    notebooks: &[(&NotebookDescriptor, &ParsedNotebook)],
    options: &InferenceOptions,
) -> DependencySpec {
    let root = repo.local_path.as_path();
    let mut warnings = Vec::new();
    let mut manifests_used = Vec::new();
    let mut merged: BTreeMap<String, PackageRequirement> = BTreeMap::new();

    let mut accept = |req: PackageRequirement, warnings: &mut Vec<String>| {
        if req.opaque.is_none() && is_standard_library(&req.distribution_name) {
            warnings.push(format!(
                "standard-library name {:?} dropped from {}",
                req.distribution_name,
                req.origin.as_str()
            ));
            return;
        }
        merged.entry(req.distribution_name.clone()).or_insert(req);
    };

    if repo.requirement_manifests.len() > 1 {
        warnings.push(format!(
            "several requirements manifests found, using {}; ignored: {}",
            repo.requirement_manifests[0],
            repo.requirement_manifests[1..].join(", ")
        ));
    }
    if let Some(rel) = repo.requirement_manifests.first() {
        match std::fs::read_to_string(root.join(rel)) {
            Ok(text) => {
                manifests_used.push(rel.clone());
                let parse = parse_requirements_manifest(&text);
                warnings.extend(parse.warnings.into_iter().map(|w| format!("{rel}: {w}")));
                for req in parse.requirements {
                    accept(req, &mut warnings);
                }
            }
            Err(e) => warnings.push(format!("{rel}: unreadable: {e}")),
        }
    }
    if let Some(rel) = repo.setup_manifests.first() {
        match std::fs::read_to_string(root.join(rel)) {
            Ok(text) => {
                manifests_used.push(rel.clone());
                let parse = parse_setup_manifest(&text);
                warnings.extend(parse.warnings.into_iter().map(|w| format!("{rel}: {w}")));
                for req in parse.requirements {
                    accept(req, &mut warnings);
                }
            }
            Err(e) => warnings.push(format!("{rel}: unreadable: {e}")),
        }
    }

    let mut ordered: Vec<&(&NotebookDescriptor, &ParsedNotebook)> = notebooks.iter().collect();
    ordered.sort_by(|a, b| a.0.relative_path.cmp(&b.0.relative_path));

    if options.scan_magic_installs {
        for (desc, nb) in &ordered {
            for cell in code_cells(nb) {
                let found = extract_magic_installs(&cell.source);
                warnings.extend(found.warnings.into_iter().map(|w| format!("{}: {w}", desc.relative_path)));
                for spec in found.specs {
                    match parse_requirement(&spec, RequirementOrigin::DeclaredMagicInstall) {
                        Ok(req) => accept(req, &mut warnings),
                        Err(reason) => warnings.push(format!("{}: {reason}", desc.relative_path)),
                    }
                }
            }
        }
    }

    let paths: Vec<&str> = ordered.iter().map(|(d, _)| d.relative_path.as_str()).collect();
    let internal = repository_modules(root, &paths);
    let mut imported = BTreeSet::new();
    for (_, nb) in &ordered {
        for cell in code_cells(nb) {
            imported.extend(extract_imports(&cell.source));
        }
    }
    for module in filter_standard_library(&imported) {
        if internal.contains(&module) {
            continue;
        }
        let dist = options.aliases.map_import_to_distribution(&module);
        accept(
            PackageRequirement::named(&dist, RequirementOrigin::InferredImport),
            &mut warnings,
        );
    }

    let requirements: Vec<PackageRequirement> = merged.into_values().collect();
    DependencySpec {
        repository_id: repo.repository_id.clone(),
        synthesized_manifest: render_manifest(&requirements),
        requirements,
        manifests_used,
        warnings,
    }
}
