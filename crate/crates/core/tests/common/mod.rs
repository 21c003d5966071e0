//! Shared fixtures: synthetic repositories and an in-process container
//! runtime that executes notebooks with the host interpreter.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};

use nbrepro::process::{run_with_timeout, CommandOutput};
use nbrepro::runtime::{BuildRequest, ContainerRuntime, ResourceLimits, RuntimeError};

pub fn stream(text: &str) -> Value {
    json!({"output_type": "stream", "name": "stdout", "text": text})
}

/// nbformat 4 document with a python3 kernelspec. Each cell is
/// `(kind, source, outputs)`.
pub fn notebook(cells: &[(&str, &str, Vec<Value>)]) -> String {
    notebook_with_kernel(cells, "python3", "python")
}

pub fn notebook_with_kernel(cells: &[(&str, &str, Vec<Value>)], kernel: &str, language: &str) -> String {
    let cells: Vec<Value> = cells
        .iter()
        .enumerate()
        .map(|(i, (kind, source, outputs))| {
            if *kind == "code" {
                json!({"cell_type": "code", "execution_count": i + 1, "metadata": {},
                       "source": source, "outputs": outputs})
            } else {
                json!({"cell_type": *kind, "metadata": {}, "source": source})
            }
        })
        .collect();
    let doc = json!({
        "nbformat": 4, "nbformat_minor": 5,
        "metadata": {
            "kernelspec": {"name": kernel, "display_name": kernel, "language": language},
            "language_info": {"name": language}
        },
        "cells": cells
    });
    serde_json::to_string_pretty(&doc).unwrap()
}

pub fn write(root: &Path, rel: &str, text: &str) {
    let path = root.join(rel);
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, text).unwrap();
}

/// The six synthetic repositories, keyed F1..F6.
pub fn fixture_corpus(root: &Path) -> Vec<(&'static str, PathBuf)> {
    let mut out = Vec::new();
    let mut repo = |name: &'static str, files: Vec<(&str, String)>| {
        let dir = root.join(name);
        for (rel, text) in files {
            write(&dir, rel, &text);
        }
        out.push((name, dir));
    };
    repo(
        "F1",
        vec![
            ("requirements.txt", "six>=1.10\n".into()),
            (
                "analysis.ipynb",
                notebook(&[
                    ("markdown", "# Deterministic", vec![]),
                    ("code", "import six\nprint(six.PY3)", vec![stream("True\n")]),
                    ("code", "total = sum(range(10))\nprint(total)", vec![stream("45\n")]),
                ]),
            ),
        ],
    );
    repo(
        "F2",
        vec![
            ("requirements.txt", "six\n".into()),
            (
                "missing.ipynb",
                notebook(&[
                    ("code", "print('start')", vec![stream("start\n")]),
                    ("code", "import importlib\nplugin = importlib.import_module('notebook_private_plugin')", vec![]),
                    ("code", "print('end')", vec![stream("end\n")]),
                ]),
            ),
        ],
    );
    repo(
        "F3",
        vec![
            ("requirements.txt", "six\n".into()),
            (
                "paths.ipynb",
                notebook(&[(
                    "code",
                    "with open('/home/original_author/data/measurements.csv') as f:\n    rows = f.read()",
                    vec![],
                )]),
            ),
        ],
    );
    repo(
        "F4",
        vec![
            ("requirements.txt", "six\n".into()),
            (
                "random.ipynb",
                notebook(&[
                    ("code", "import random\nrandom.seed(7)\nprint(random.randint(0, 10**6))", vec![stream("339563\n")]),
                    ("code", "import uuid\nprint(uuid.uuid4())", vec![stream("c6b7f3b2-3f0e-4a41-9d2b-5b0c1e3f9a77\n")]),
                ]),
            ),
        ],
    );
    repo(
        "F5",
        vec![(
            "notebooks/explore.ipynb",
            notebook(&[
                ("code", "import six\nfrom six.moves import range as r\nprint(len(list(r(3))))", vec![stream("3\n")]),
            ]),
        )],
    );
    repo(
        "F6",
        vec![
            ("requirements.txt", "six\nzzq-fabricated-package-nbrepro==9.9.9\n".into()),
            ("broken.ipynb", notebook(&[("code", "print(1)", vec![stream("1\n")])])),
        ],
    );
    out
}

/// Executes a notebook cell by cell in one namespace, continuing after
/// errors, and writes an nbformat 4 result.
const FAKE_CONVERTER: &str = r#"
import contextlib, io, json, sys, traceback
src, dest = sys.argv[1], sys.argv[2]
nb = json.load(open(src))
ns = {"__name__": "__main__"}
count = 0
for cell in nb.get("cells", []):
    if cell.get("cell_type") != "code":
        continue
    source = cell.get("source", "")
    if isinstance(source, list):
        source = "".join(source)
    source = "\n".join(l for l in source.splitlines() if not l.lstrip().startswith(("%", "!")))
    count += 1
    buf = io.StringIO()
    outputs = []
    try:
        with contextlib.redirect_stdout(buf):
            exec(compile(source, "<cell>", "exec"), ns)
    except BaseException as e:
        if buf.getvalue():
            outputs.append({"output_type": "stream", "name": "stdout", "text": buf.getvalue()})
        outputs.append({"output_type": "error", "ename": type(e).__name__, "evalue": str(e),
                        "traceback": traceback.format_exception_only(type(e), e)})
    else:
        if buf.getvalue():
            outputs.append({"output_type": "stream", "name": "stdout", "text": buf.getvalue()})
    cell["outputs"] = outputs
    cell["execution_count"] = count
json.dump(nb, open(dest, "w"), indent=1)
"#;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Call {
    Build(String),
    Start(String),
    Exec(String),
    RemoveContainers(Vec<String>),
    RemoveImages(Vec<String>),
}

struct Container {
    context: PathBuf,
    outputs: PathBuf,
}

/// Container runtime double. Images are the build context directories;
/// `pip install` succeeds for names in `installable`.
pub struct FakeRuntime {
    pub installable: BTreeSet<String>,
    pub kernels: Vec<String>,
    scratch: tempfile::TempDir,
    converter: PathBuf,
    images: Mutex<HashMap<String, (PathBuf, Vec<(String, String)>)>>,
    containers: Mutex<HashMap<String, (Container, Vec<(String, String)>)>>,
    pub calls: Mutex<Vec<Call>>,
}

impl FakeRuntime {
    pub fn new(installable: &[&str]) -> Self {
        let scratch = tempfile::tempdir().unwrap();
        let converter = scratch.path().join("convert.py");
        std::fs::write(&converter, FAKE_CONVERTER).unwrap();
        Self {
            installable: installable.iter().map(|s| s.to_string()).collect(),
            kernels: vec!["python3".into()],
            scratch,
            converter,
            images: Mutex::new(HashMap::new()),
            containers: Mutex::new(HashMap::new()),
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Pre-existing image and container for a repository, as left by an
    /// earlier run.
    pub fn seed_stale(&self, repository_id: &str) {
        let labels = vec![(nbrepro::runtime::REPOSITORY_LABEL.to_string(), repository_id.to_string())];
        self.images
            .lock()
            .unwrap()
            .insert(format!("repro/{repository_id}:stale"), (PathBuf::new(), labels.clone()));
        self.containers.lock().unwrap().insert(
            format!("stale-{repository_id}"),
            (
                Container {
                    context: PathBuf::new(),
                    outputs: PathBuf::new(),
                },
                labels,
            ),
        );
    }

    pub fn image_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.images.lock().unwrap().keys().cloned().collect();
        v.sort();
        v
    }

    pub fn container_names(&self) -> Vec<String> {
        self.containers.lock().unwrap().keys().cloned().collect()
    }

    fn record(&self, call: Call) {
        self.calls.lock().unwrap().push(call);
    }

    fn output(code: i32, stdout: String, stderr: String) -> CommandOutput {
        CommandOutput {
            exit_code: Some(code),
            timed_out: false,
            stdout,
            stderr,
            elapsed: Duration::from_millis(5),
        }
    }
}

fn requirement_name(line: &str) -> Option<String> {
    let line = line.split('#').next()?.trim();
    if line.is_empty() || line.starts_with('-') {
        return None;
    }
    let end = line.find(|c: char| !(c.is_alphanumeric() || c == '-' || c == '_' || c == '.')).unwrap_or(line.len());
    Some(line[..end].to_ascii_lowercase())
}

impl ContainerRuntime for FakeRuntime {
    fn name(&self) -> &str {
        "fake"
    }

    fn ping(&self) -> Result<(), RuntimeError> {
        Ok(())
    }

    fn images_with_label(&self, label: &str, value: &str) -> Result<Vec<String>, RuntimeError> {
        let images = self.images.lock().unwrap();
        Ok(images
            .iter()
            .filter(|(_, (_, l))| l.iter().any(|(k, v)| k == label && v == value))
            .map(|(k, _)| k.clone())
            .collect())
    }

    fn containers_with_label(&self, label: &str, value: &str) -> Result<Vec<String>, RuntimeError> {
        let containers = self.containers.lock().unwrap();
        Ok(containers
            .iter()
            .filter(|(_, (_, l))| l.iter().any(|(k, v)| k == label && v == value))
            .map(|(k, _)| k.clone())
            .collect())
    }

    fn remove_containers(&self, ids: &[String]) -> Result<(), RuntimeError> {
        self.record(Call::RemoveContainers(ids.to_vec()));
        let mut containers = self.containers.lock().unwrap();
        for id in ids {
            containers.remove(id);
        }
        Ok(())
    }

    fn remove_images(&self, ids: &[String]) -> Result<(), RuntimeError> {
        self.record(Call::RemoveImages(ids.to_vec()));
        let mut images = self.images.lock().unwrap();
        for id in ids {
            images.remove(id);
        }
        Ok(())
    }

    fn build(&self, request: &BuildRequest, _timeout: Duration) -> Result<CommandOutput, RuntimeError> {
        self.record(Call::Build(request.tag.clone()));
        let dockerfile = std::fs::read_to_string(&request.dockerfile).map_err(|e| RuntimeError::Command {
            command: "build".into(),
            message: e.to_string(),
        })?;
        let mut log = String::new();
        let mut step = 0;
        for line in dockerfile.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')) {
            step += 1;
            log.push_str(&format!("STEP {step}: {line}\n"));
            if line.starts_with("RUN pip install") && line.contains("/opt/repro/requirements.txt") {
                let manifest = std::fs::read_to_string(request.context_dir.join(".repro/requirements.txt")).unwrap_or_default();
                for name in manifest.lines().filter_map(requirement_name) {
                    if !self.installable.contains(&name) {
                        log.push_str(&format!(
                            "ERROR: Could not find a version that satisfies the requirement {name} (from versions: none)\n\
                             ERROR: No matching distribution found for {name}\n"
                        ));
                        return Ok(Self::output(1, String::new(), log));
                    }
                    log.push_str(&format!("Successfully installed {name}\n"));
                }
            }
        }
        self.images
            .lock()
            .unwrap()
            .insert(request.tag.clone(), (request.context_dir.clone(), request.labels.clone()));
        Ok(Self::output(0, String::new(), log))
    }

    fn start(&self, image: &str, name: &str, labels: &[(String, String)], _limits: &ResourceLimits) -> Result<(), RuntimeError> {
        self.record(Call::Start(name.to_string()));
        let context = self
            .images
            .lock()
            .unwrap()
            .get(image)
            .map(|(c, _)| c.clone())
            .ok_or_else(|| RuntimeError::Command {
                command: "run".into(),
                message: format!("no such image {image}"),
            })?;
        let outputs = self.scratch.path().join(name);
        std::fs::create_dir_all(&outputs).unwrap();
        self.containers
            .lock()
            .unwrap()
            .insert(name.to_string(), (Container { context, outputs }, labels.to_vec()));
        Ok(())
    }

    fn exec(&self, container: &str, workdir: &str, argv: &[String], timeout: Duration) -> Result<CommandOutput, RuntimeError> {
        self.record(Call::Exec(argv.first().cloned().unwrap_or_default()));
        let (context, outputs) = {
            let containers = self.containers.lock().unwrap();
            let (c, _) = containers.get(container).ok_or_else(|| RuntimeError::Command {
                command: "exec".into(),
                message: format!("no such container {container}"),
            })?;
            (c.context.clone(), c.outputs.clone())
        };
        if argv.first().map(String::as_str) == Some("jupyter") {
            let specs: serde_json::Map<String, Value> =
                self.kernels.iter().map(|k| (k.clone(), json!({"spec": {"language": "python"}}))).collect();
            return Ok(Self::output(0, json!({"kernelspecs": specs}).to_string(), String::new()));
        }
        // sh -c <script> sh <file> <secs> <kernel> <output-name>
        let [_, _, _, _, file, secs, _kernel, name] = argv else {
            return Ok(Self::output(127, String::new(), format!("unsupported command {argv:?}")));
        };
        let rel = workdir.strip_prefix("/repo").unwrap_or(workdir).trim_start_matches('/');
        let cwd = context.join(rel);
        let src = cwd.join(file);
        if !src.is_file() {
            return Ok(Self::output(66, String::new(), format!("notebook not found: {file}")));
        }
        let limit = Duration::from_secs(secs.parse().unwrap_or(60)).min(timeout);
        let mut cmd = Command::new("python3");
        cmd.arg(&self.converter).arg(&src).arg(outputs.join(format!("{name}.ipynb"))).current_dir(&cwd);
        let mut out = run_with_timeout(cmd, Some(limit)).map_err(|e| RuntimeError::Command {
            command: "exec".into(),
            message: e.to_string(),
        })?;
        if out.timed_out {
            out.exit_code = Some(137);
        }
        Ok(out)
    }

    fn copy_out(&self, container: &str, path: &str, dest: &Path) -> Result<(), RuntimeError> {
        let outputs = {
            let containers = self.containers.lock().unwrap();
            containers.get(container).map(|(c, _)| c.outputs.clone())
        }
        .ok_or_else(|| RuntimeError::Command {
            command: "cp".into(),
            message: format!("no such container {container}"),
        })?;
        let file = Path::new(path).file_name().unwrap();
        std::fs::create_dir_all(dest.parent().unwrap()).unwrap();
        std::fs::copy(outputs.join(file), dest).map_err(|e| RuntimeError::Command {
            command: "cp".into(),
            message: e.to_string(),
        })?;
        Ok(())
    }
}

/// Runs infer, execute and compare over `inputs` and returns the invocation.
pub fn run_stages(
    store: &nbrepro::store::Store,
    config: &nbrepro::pipeline::PipelineConfig,
    runtime: Option<&dyn ContainerRuntime>,
) -> String {
    let events = nbrepro::events::EventLog::open(&config.logdir, &nbrepro::ids::RunId::generate().to_string()).unwrap();
    let pipeline = nbrepro::pipeline::Pipeline::new(config, store, &events).unwrap();
    let summary = pipeline.infer().unwrap();
    pipeline.execute(runtime, Some(&summary.invocation_id)).unwrap();
    pipeline.compare(Some(&summary.invocation_id), false).unwrap();
    summary.invocation_id
}

pub fn config_for(root: &Path, inputs: Vec<String>) -> nbrepro::pipeline::PipelineConfig {
    nbrepro::pipeline::PipelineConfig {
        inputs,
        store_path: root.join("store.sqlite"),
        logdir: root.join("logs"),
        artifacts: root.join("artifacts"),
        workdir: root.join("work"),
        report_dir: root.join("reports"),
        jobs: 3,
        exec_timeout: Duration::from_secs(120),
        ..Default::default()
    }
}

/// Checks the documented outcome of every fixture repository of one
/// invocation. Returns one `(fixture, verdict)` per fixture.
pub fn fixture_expectations(
    store: &nbrepro::store::Store,
    invocation: &str,
    fixtures: &[(&'static str, PathBuf)],
) -> Vec<(&'static str, Result<(), String>)> {
    use nbrepro::corpus::ProvisioningStatus as P;
    use nbrepro::executor::{ErrorCategory, ExecutionStatus as S};

    let runs = store.runs_for_invocation(invocation).unwrap();
    fixtures
        .iter()
        .map(|(name, path)| {
            let id = nbrepro::pipeline::repository_id_for_input(&path.to_string_lossy());
            let verdict = (|| -> Result<(), String> {
                let run = runs.iter().find(|r| r.repository_id == id).ok_or("no run recorded")?;
                let execs = store.executions(&run.run_id).map_err(|e| e.to_string())?;
                let metrics = store.metrics(&run.run_id).map_err(|e| e.to_string())?;
                let expect_built = || {
                    if run.provisioning_status == P::EnvironmentBuilt {
                        Ok(())
                    } else {
                        Err(format!("provisioning {:?}: {:?}", run.provisioning_status, run.status_reason))
                    }
                };
                let one_exec = || execs.first().cloned().ok_or_else(|| "no execution".to_string());
                let error_at = |ty: &str, cat: ErrorCategory, cell: Option<usize>| -> Result<(), String> {
                    let e = one_exec()?;
                    if e.status != S::ErroredButCompleted {
                        return Err(format!("status {:?}", e.status));
                    }
                    let hit = e.errors.iter().any(|x| {
                        x.error_type == ty && x.category == cat && cell.is_none_or(|c| x.cell_index == c)
                    });
                    if hit { Ok(()) } else { Err(format!("errors {:?}", e.errors)) }
                };
                match *name {
                    "F1" => {
                        expect_built()?;
                        let e = one_exec()?;
                        if e.status != S::Success {
                            return Err(format!("status {:?} {:?}", e.status, e.status_reason));
                        }
                        match metrics.first().and_then(|m| m.score) {
                            Some(s) if s == 1.0 => Ok(()),
                            other => Err(format!("score {other:?}")),
                        }
                    }
                    "F2" => {
                        expect_built()?;
                        error_at("ModuleNotFoundError", ErrorCategory::Dependency, Some(1))
                    }
                    "F3" => {
                        expect_built()?;
                        error_at("FileNotFoundError", ErrorCategory::Data, None)
                    }
                    "F4" => {
                        expect_built()?;
                        let m = metrics.first().ok_or("no metrics")?;
                        match m.score {
                            Some(s) if m.nondeterministic_count >= 1 && s < 1.0 => Ok(()),
                            _ => Err(format!("metrics {m:?}")),
                        }
                    }
                    "F5" => {
                        expect_built()?;
                        let (spec, _) = store.run_recipe(&run.run_id).map_err(|e| e.to_string())?.ok_or("no recipe")?;
                        if !spec.manifests_used.is_empty() || !spec.synthesized_manifest.lines().any(|l| l == "six") {
                            return Err(format!("spec {spec:?}"));
                        }
                        let e = one_exec()?;
                        if e.status == S::Success { Ok(()) } else { Err(format!("status {:?}", e.status)) }
                    }
                    "F6" => {
                        if run.provisioning_status == P::BuildFailed
                            && run.build_failure_phase.as_deref() == Some("DependencyInstall")
                        {
                            Ok(())
                        } else {
                            Err(format!("{:?} {:?}", run.provisioning_status, run.build_failure_phase))
                        }
                    }
                    other => Err(format!("unknown fixture {other}")),
                }
            })();
            (*name, verdict)
        })
        .collect()
}
