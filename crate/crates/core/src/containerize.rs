//! Build recipe generation, clean-room cleanup and image builds.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::depinfer::{render_manifest, DependencySpec, PackageRequirement};
use crate::ids::{RepositoryId, RunId};
use crate::runtime::{BuildRequest, ContainerRuntime, RuntimeError, REPOSITORY_LABEL};

pub const DEFAULT_BASE_IMAGE: &str = "python:3.10-slim";
pub const DEFAULT_BUILD_TIMEOUT: Duration = Duration::from_secs(20 * 60);
/// Directory inside the build context holding generated files.
pub const RECIPE_DIR: &str = ".repro";
pub const IMAGE_REPOSITORY: &str = "repro";

const SYSTEM_PACKAGES: &[&str] = &[
    "build-essential",
    "gfortran",
    "git",
    "pkg-config",
    "libffi-dev",
    "libssl-dev",
    "zlib1g-dev",
    "libjpeg-dev",
    "libpng-dev",
    "libfreetype6-dev",
    "libxml2-dev",
    "libxslt1-dev",
    "libhdf5-dev",
    "libopenblas-dev",
];

pub const EXECUTION_TOOLCHAIN: &[&str] = &["nbconvert", "nbformat", "ipykernel", "jupyter_client"];

const MANIFEST_FILE: &str = "requirements.txt";
const LOCAL_MANIFEST_FILE: &str = "requirements-local.txt";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildRecipe {
    pub dockerfile_text: String,
    /// Requirements installed before the repository tree is copied in.
    pub manifest_text: String,
    /// Requirements that point into the repository tree itself.
    pub local_manifest_text: String,
    pub context_dir: PathBuf,
    pub image_tag: String,
}

pub fn image_tag(repository_id: &RepositoryId, run_id: &RunId) -> String {
    format!("{IMAGE_REPOSITORY}/{repository_id}:{run_id}")
}

fn is_local_reference(req: &PackageRequirement) -> bool {
    let Some(raw) = &req.opaque else {
        return false;
    };
    let target = raw
        .strip_prefix("-e")
        .or_else(|| raw.strip_prefix("--editable"))
        .map(|t| t.trim_start_matches('=').trim())
        .unwrap_or(raw.trim());
    target.starts_with('.') || target.starts_with('/') || target.starts_with("file:")
}

/// Dockerfile text: a pure function of the spec's requirements, the base
/// image and the pipeline version.
fn render_dockerfile(has_manifest: bool, has_local: bool, base_image: &str) -> String {
    let mut d = String::new();
    d.push_str(&format!("# generated by nbrepro {}\n", crate::PIPELINE_VERSION));
    d.push_str(&format!("FROM {base_image}\n"));
    d.push_str(
        "ENV DEBIAN_FRONTEND=noninteractive \\\n    PIP_NO_CACHE_DIR=1 \\\n    \
         PIP_DISABLE_PIP_VERSION_CHECK=1 \\\n    PYTHONDONTWRITEBYTECODE=1 \\\n    MPLBACKEND=Agg\n",
    );
    d.push_str("RUN apt-get update \\\n    && apt-get install -y --no-install-recommends");
    for pkg in SYSTEM_PACKAGES {
        d.push_str(" \\\n        ");
        d.push_str(pkg);
    }
    d.push_str(" \\\n    && rm -rf /var/lib/apt/lists/*\n");
    if has_manifest {
        d.push_str(&format!("COPY {RECIPE_DIR}/{MANIFEST_FILE} /opt/repro/{MANIFEST_FILE}\n"));
        d.push_str(&format!("RUN pip install -r /opt/repro/{MANIFEST_FILE}\n"));
    }
    d.push_str(&format!(
        "RUN pip install {} \\\n    && python -m ipykernel install --sys-prefix --name python3\n",
        EXECUTION_TOOLCHAIN.join(" ")
    ));
    d.push_str("COPY . /repo\n");
    d.push_str("WORKDIR /repo\n");
    if has_local {
        d.push_str(&format!("RUN pip install -r /repo/{RECIPE_DIR}/{LOCAL_MANIFEST_FILE}\n"));
    }
    d
}

/// Deterministic recipe for one repository run. Files are not written;
/// see [`write_build_context`].
pub fn generate_build_recipe(spec: &DependencySpec, context_dir: &Path, run_id: &RunId, base_image: &str) -> BuildRecipe {
    let (local, remote): (Vec<PackageRequirement>, Vec<PackageRequirement>) =
        spec.requirements.iter().cloned().partition(is_local_reference);
    let manifest_text = render_manifest(&remote);
    let local_manifest_text = render_manifest(&local);
    BuildRecipe {
        dockerfile_text: render_dockerfile(!remote.is_empty(), !local.is_empty(), base_image),
        manifest_text,
        local_manifest_text,
        context_dir: context_dir.to_path_buf(),
        image_tag: image_tag(&spec.repository_id, run_id),
    }
}

impl BuildRecipe {
    pub fn dockerfile_path(&self) -> PathBuf {
        self.context_dir.join(RECIPE_DIR).join("Dockerfile")
    }
}

/// Writes the Dockerfile and manifests under `<context>/.repro/`.
pub fn write_build_context(recipe: &BuildRecipe) -> std::io::Result<()> {
    let dir = recipe.context_dir.join(RECIPE_DIR);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("Dockerfile"), &recipe.dockerfile_text)?;
    std::fs::write(dir.join(MANIFEST_FILE), &recipe.manifest_text)?;
    std::fs::write(dir.join(LOCAL_MANIFEST_FILE), &recipe.local_manifest_text)?;
    Ok(())
}

/// Removes every container and image labelled with this repository.
/// Idempotent.
pub fn cleanup_previous(runtime: &dyn ContainerRuntime, repository_id: &RepositoryId) -> Result<(), RuntimeError> {
    let containers = runtime.containers_with_label(REPOSITORY_LABEL, repository_id.as_str())?;
    runtime.remove_containers(&containers)?;
    let images = runtime.images_with_label(REPOSITORY_LABEL, repository_id.as_str())?;
    runtime.remove_images(&images)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BuildPhase {
    BaseImage,
    SystemPackages,
    DependencyInstall,
    Toolchain,
    Timeout,
    /// The container engine itself failed or was unreachable.
    Runtime,
    Other,
}

impl BuildPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            BuildPhase::BaseImage => "BaseImage",
            BuildPhase::SystemPackages => "SystemPackages",
            BuildPhase::DependencyInstall => "DependencyInstall",
            BuildPhase::Toolchain => "Toolchain",
            BuildPhase::Timeout => "Timeout",
            BuildPhase::Runtime => "Runtime",
            BuildPhase::Other => "Other",
        }
    }
}

impl fmt::Display for BuildPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildFailure {
    pub phase: BuildPhase,
    pub log_excerpt: String,
}

impl fmt::Display for BuildFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "build failed in phase {}", self.phase)?;
        if let Some(last) = self.log_excerpt.lines().rev().find(|l| !l.trim().is_empty()) {
            write!(f, ": {}", last.trim())?;
        }
        Ok(())
    }
}

const EXCERPT_LINES: usize = 40;

fn excerpt(log: &str) -> String {
    let lines: Vec<&str> = log.lines().collect();
    lines[lines.len().saturating_sub(EXCERPT_LINES)..].join("\n")
}

const BASE_IMAGE_SIGNS: &[&str] = &[
    "pull access denied",
    "manifest unknown",
    "failed to resolve source metadata",
    "failed to fetch anonymous token",
    "error pulling image",
    "toomanyrequests",
    "no matching manifest",
];

/// Locates the failing step from the build log. Steps run in order, so the
/// last step signature mentioned is where the build stopped.
pub fn classify_build_failure(log: &str, timed_out: bool) -> BuildPhase {
    if timed_out {
        return BuildPhase::Timeout;
    }
    let mut phase = BuildPhase::Other;
    for line in log.lines() {
        let lower = line.to_ascii_lowercase();
        if BASE_IMAGE_SIGNS.iter().any(|s| lower.contains(s)) {
            phase = BuildPhase::BaseImage;
        } else if lower.contains(&format!("pip install -r /opt/repro/{MANIFEST_FILE}"))
            || lower.contains(LOCAL_MANIFEST_FILE)
        {
            phase = BuildPhase::DependencyInstall;
        } else if lower.contains("apt-get") {
            phase = BuildPhase::SystemPackages;
        } else if lower.contains("ipykernel install") || lower.contains("pip install nbconvert") {
            phase = BuildPhase::Toolchain;
        }
    }
    phase
}

/// Builds without cache and persists the full log to `log_path`.
pub fn build_image(
    runtime: &dyn ContainerRuntime,
    recipe: &BuildRecipe,
    repository_id: &RepositoryId,
    timeout: Duration,
    log_path: &Path,
) -> Result<String, BuildFailure> {
    let request = BuildRequest {
        context_dir: recipe.context_dir.clone(),
        dockerfile: recipe.dockerfile_path(),
        tag: recipe.image_tag.clone(),
        labels: vec![(REPOSITORY_LABEL.to_string(), repository_id.to_string())],
    };
    let result = runtime.build(&request, timeout);
    let (log, outcome) = match result {
        Err(e) => {
            let text = format!("{e}\n");
            (
                text.clone(),
                Err(BuildFailure {
                    phase: BuildPhase::Runtime,
                    log_excerpt: text.trim_end().to_string(),
                }),
            )
        }
        Ok(out) => {
            let mut log = out.combined();
            if out.timed_out {
                log.push_str(&format!("\nbuild timed out after {}s\n", timeout.as_secs()));
            }
            let outcome = if out.success() {
                Ok(recipe.image_tag.clone())
            } else {
                Err(BuildFailure {
                    phase: classify_build_failure(&log, out.timed_out),
                    log_excerpt: excerpt(&log),
                })
            };
            (log, outcome)
        }
    };
    if let Some(parent) = log_path.parent() {
        let _ = std::fs::create_dir_all(parent);
    }
    if let Err(e) = std::fs::write(log_path, &log) {
        log::warn!("could not write build log {}: {e}", log_path.display());
    }
    outcome
}
