//! Container runtime abstraction driven through a command-line client.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use thiserror::Error;

use crate::process::{run_with_timeout, CommandOutput};

/// Label attached to every image and container the pipeline creates.
pub const REPOSITORY_LABEL: &str = "repro.repository";

const HOUSEKEEPING_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("container runtime `{binary}` unreachable: {reason}")]
    Unreachable { binary: String, reason: String },
    #[error("`{command}` failed: {message}")]
    Command { command: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildRequest {
    pub context_dir: PathBuf,
    pub dockerfile: PathBuf,
    pub tag: String,
    pub labels: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceLimits {
    pub cpus: Option<String>,
    pub memory: Option<String>,
}

impl Default for ResourceLimits {
    fn default() -> Self {
        Self {
            cpus: Some("2".into()),
            memory: Some("4g".into()),
        }
    }
}

/// Operations the pipeline needs from a container engine. Implementations
/// must be usable from several worker threads.
pub trait ContainerRuntime: Send + Sync {
    fn name(&self) -> &str;
    fn ping(&self) -> Result<(), RuntimeError>;
    /// Image references carrying `label=value`.
    fn images_with_label(&self, label: &str, value: &str) -> Result<Vec<String>, RuntimeError>;
    /// Container ids (running or stopped) carrying `label=value`.
    fn containers_with_label(&self, label: &str, value: &str) -> Result<Vec<String>, RuntimeError>;
    fn remove_containers(&self, ids: &[String]) -> Result<(), RuntimeError>;
    fn remove_images(&self, ids: &[String]) -> Result<(), RuntimeError>;
    /// Uncached build. A non-zero exit is reported in the output, not as an error.
    fn build(&self, request: &BuildRequest, timeout: Duration) -> Result<CommandOutput, RuntimeError>;
    /// Starts a detached, idle container from `image`.
    fn start(&self, image: &str, name: &str, labels: &[(String, String)], limits: &ResourceLimits)
        -> Result<(), RuntimeError>;
    /// Runs `argv` inside a started container.
    fn exec(&self, container: &str, workdir: &str, argv: &[String], timeout: Duration)
        -> Result<CommandOutput, RuntimeError>;
    fn copy_out(&self, container: &str, path: &str, dest: &Path) -> Result<(), RuntimeError>;
}

/// Docker-compatible CLI (`docker`, `podman`, ...).
#[derive(Debug, Clone)]
pub struct DockerCli {
    binary: String,
}

impl DockerCli {
    pub fn new(binary: impl Into<String>) -> Self {
        Self { binary: binary.into() }
    }

    /// First of `docker`, `podman` that answers a version query.
    pub fn detect() -> Option<Self> {
        ["docker", "podman"]
            .into_iter()
            .map(DockerCli::new)
            .find(|cli| cli.ping().is_ok())
    }

    fn command<S: AsRef<std::ffi::OsStr>>(&self, args: &[S]) -> Command {
        let mut cmd = Command::new(&self.binary);
        cmd.args(args);
        cmd
    }

    fn run(&self, args: &[String], timeout: Duration) -> Result<CommandOutput, RuntimeError> {
        run_with_timeout(self.command(args), Some(timeout)).map_err(|e| RuntimeError::Unreachable {
            binary: self.binary.clone(),
            reason: e.to_string(),
        })
    }

    fn checked(&self, args: &[String], timeout: Duration) -> Result<CommandOutput, RuntimeError> {
        let out = self.run(args, timeout)?;
        if out.success() {
            Ok(out)
        } else {
            Err(RuntimeError::Command {
                command: format!("{} {}", self.binary, args.first().map(String::as_str).unwrap_or("")),
                message: if out.timed_out {
                    "timed out".into()
                } else {
                    out.stderr.trim().to_string()
                },
            })
        }
    }
}

fn strings<const N: usize>(items: [&str; N]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn lines(out: &CommandOutput) -> Vec<String> {
    let mut ids: Vec<String> = out
        .stdout
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.contains("<none>"))
        .map(String::from)
        .collect();
    ids.sort();
    ids.dedup();
    ids
}

impl ContainerRuntime for DockerCli {
    fn name(&self) -> &str {
        &self.binary
    }

    fn ping(&self) -> Result<(), RuntimeError> {
        let out = self.run(&strings(["version", "--format", "{{.Server.Version}}"]), Duration::from_secs(20))?;
        if out.success() {
            Ok(())
        } else {
            Err(RuntimeError::Unreachable {
                binary: self.binary.clone(),
                reason: out.stderr.trim().to_string(),
            })
        }
    }

    fn images_with_label(&self, label: &str, value: &str) -> Result<Vec<String>, RuntimeError> {
        let filter = format!("label={label}={value}");
        let mut args = strings(["images", "--filter"]);
        args.push(filter);
        args.extend(strings(["--format", "{{.Repository}}:{{.Tag}}"]));
        let named = lines(&self.checked(&args, HOUSEKEEPING_TIMEOUT)?);
        // dangling images keep the label but lose their name
        let mut args = strings(["images", "-q", "--filter"]);
        args.push(format!("label={label}={value}"));
        let mut all = lines(&self.checked(&args, HOUSEKEEPING_TIMEOUT)?);
        all.extend(named);
        all.sort();
        all.dedup();
        Ok(all)
    }

    fn containers_with_label(&self, label: &str, value: &str) -> Result<Vec<String>, RuntimeError> {
        let mut args = strings(["ps", "-aq", "--filter"]);
        args.push(format!("label={label}={value}"));
        Ok(lines(&self.checked(&args, HOUSEKEEPING_TIMEOUT)?))
    }

    fn remove_containers(&self, ids: &[String]) -> Result<(), RuntimeError> {
        if ids.is_empty() {
            return Ok(());
        }
        let mut args = strings(["rm", "-f", "-v"]);
        args.extend(ids.iter().cloned());
        self.checked(&args, HOUSEKEEPING_TIMEOUT).map(drop)
    }

    fn remove_images(&self, ids: &[String]) -> Result<(), RuntimeError> {
        if ids.is_empty() {
            return Ok(());
        }
        let mut args = strings(["rmi", "-f"]);
        args.extend(ids.iter().cloned());
        let out = self.run(&args, HOUSEKEEPING_TIMEOUT)?;
        if out.success() || out.stderr.contains("No such image") {
            Ok(())
        } else {
            Err(RuntimeError::Command {
                command: format!("{} rmi", self.binary),
                message: out.stderr.trim().to_string(),
            })
        }
    }

    fn build(&self, request: &BuildRequest, timeout: Duration) -> Result<CommandOutput, RuntimeError> {
        let mut args = strings(["build", "--no-cache", "--progress=plain", "-f"]);
        args.push(request.dockerfile.display().to_string());
        args.push("-t".into());
        args.push(request.tag.clone());
        for (k, v) in &request.labels {
            args.push("--label".into());
            args.push(format!("{k}={v}"));
        }
        args.push(request.context_dir.display().to_string());
        let mut cmd = self.command(&args);
        cmd.env("DOCKER_BUILDKIT", "1");
        run_with_timeout(cmd, Some(timeout)).map_err(|e| RuntimeError::Unreachable {
            binary: self.binary.clone(),
            reason: e.to_string(),
        })
    }

    fn start(&self, image: &str, name: &str, labels: &[(String, String)], limits: &ResourceLimits)
        -> Result<(), RuntimeError> {
        let mut args = strings(["run", "-d", "--name"]);
        args.push(name.into());
        for (k, v) in labels {
            args.push("--label".into());
            args.push(format!("{k}={v}"));
        }
        if let Some(cpus) = &limits.cpus {
            args.push(format!("--cpus={cpus}"));
        }
        if let Some(memory) = &limits.memory {
            args.push(format!("--memory={memory}"));
        }
        args.extend(strings(["--entrypoint", "sleep"]));
        args.push(image.into());
        args.push("infinity".into());
        self.checked(&args, HOUSEKEEPING_TIMEOUT).map(drop)
    }

    fn exec(&self, container: &str, workdir: &str, argv: &[String], timeout: Duration)
        -> Result<CommandOutput, RuntimeError> {
        let mut args = strings(["exec", "-w"]);
        args.push(workdir.into());
        args.push(container.into());
        args.extend(argv.iter().cloned());
        self.run(&args, timeout)
    }

    fn copy_out(&self, container: &str, path: &str, dest: &Path) -> Result<(), RuntimeError> {
        if let Some(parent) = dest.parent() {
            std::fs::create_dir_all(parent).map_err(|e| RuntimeError::Command {
                command: "create artifact directory".into(),
                message: e.to_string(),
            })?;
        }
        let args = vec!["cp".to_string(), format!("{container}:{path}"), dest.display().to_string()];
        self.checked(&args, HOUSEKEEPING_TIMEOUT).map(drop)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_binary_is_unreachable() {
        let cli = DockerCli::new("definitely-not-a-container-engine");
        assert!(matches!(cli.ping(), Err(RuntimeError::Unreachable { .. })));
        assert!(matches!(
            cli.containers_with_label(REPOSITORY_LABEL, "x"),
            Err(RuntimeError::Unreachable { .. })
        ));
    }

    #[test]
    fn empty_removals_are_noops() {
        let cli = DockerCli::new("definitely-not-a-container-engine");
        assert!(cli.remove_containers(&[]).is_ok());
        assert!(cli.remove_images(&[]).is_ok());
    }
}
