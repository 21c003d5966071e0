use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use nbrepro::events::EventLog;
use nbrepro::ids::RunId;
use nbrepro::pipeline::{Pipeline, PipelineConfig, PipelineError, StageSummary};
use nbrepro::runtime::{ContainerRuntime, DockerCli};
use nbrepro::store::Store;

const EXIT_PARTIAL: u8 = 2;
const EXIT_FATAL: u8 = 1;

#[derive(Parser, Debug)]
#[command(name = "nbrepro", version, about = "Containerized re-execution and reproducibility scoring for Jupyter notebooks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Every stage: infer, execute, compare, classify (with --baseline), report.
    Run(Opts),
    /// Validate, acquire, discover notebooks and synthesize build recipes.
    Infer(Opts),
    /// Build images and execute notebooks for the latest invocation.
    Execute(Opts),
    /// Compare executed notebooks with their committed outputs.
    Compare(Opts),
    /// Import a baseline and assign outcome classes.
    Classify(Opts),
    /// Aggregate the store into report files.
    Report(Opts),
}

#[derive(Args, Debug, Default)]
struct Opts {
    /// Repository URL, local directory, or file listing either (repeatable).
    #[arg(long = "input", short = 'i')]
    inputs: Vec<String>,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    logdir: Option<PathBuf>,
    #[arg(long)]
    artifacts: Option<PathBuf>,
    /// Where repositories are cloned or copied.
    #[arg(long)]
    workdir: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    /// e.g. `20m`, `1200s`.
    #[arg(long, value_parser = parse_duration)]
    build_timeout: Option<Duration>,
    #[arg(long, value_parser = parse_duration)]
    exec_timeout: Option<Duration>,
    #[arg(long, value_parser = parse_duration)]
    clone_timeout: Option<Duration>,
    #[arg(long)]
    base_image: Option<String>,
    /// Extra import-to-package aliases (TOML or `import = package` lines).
    #[arg(long)]
    alias_table: Option<PathBuf>,
    /// Baseline execution CSV.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    scan_magic_installs: Option<bool>,
    #[arg(long)]
    report_dir: Option<PathBuf>,
    #[arg(long)]
    cpus: Option<String>,
    #[arg(long)]
    memory: Option<String>,
    /// Container CLI binary; `none` disables execution.
    #[arg(long)]
    runtime: Option<String>,
    /// Invocation to execute or compare; defaults to the latest.
    #[arg(long)]
    invocation: Option<String>,
    /// TOML file with defaults for any of these flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_duration(s: &str) -> Result<Duration, String> {
    let d = match s.parse::<u64>() {
        Ok(secs) => Duration::from_secs(secs),
        Err(_) => humantime::parse_duration(s).map_err(|e| e.to_string())?,
    };
    if d.is_zero() {
        return Err("duration must be positive".into());
    }
    Ok(d)
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    #[serde(default)]
    inputs: Vec<String>,
    store: Option<PathBuf>,
    logdir: Option<PathBuf>,
    artifacts: Option<PathBuf>,
    workdir: Option<PathBuf>,
    jobs: Option<usize>,
    build_timeout: Option<String>,
    exec_timeout: Option<String>,
    clone_timeout: Option<String>,
    base_image: Option<String>,
    alias_table: Option<PathBuf>,
    baseline: Option<PathBuf>,
    scan_magic_installs: Option<bool>,
    report_dir: Option<PathBuf>,
    cpus: Option<String>,
    memory: Option<String>,
    runtime: Option<String>,
}

/// Paths in a config file are relative to the file.
fn rebase(base: &Path, p: Option<PathBuf>) -> Option<PathBuf> {
    p.map(|p| if p.is_absolute() { p } else { base.join(p) })
}

fn load_file_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut c: FileConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    c.store = rebase(base, c.store);
    c.logdir = rebase(base, c.logdir);
    c.artifacts = rebase(base, c.artifacts);
    c.workdir = rebase(base, c.workdir);
    c.alias_table = rebase(base, c.alias_table);
    c.baseline = rebase(base, c.baseline);
    c.report_dir = rebase(base, c.report_dir);
    Ok(c)
}

fn file_duration(name: &str, v: Option<String>) -> Result<Option<Duration>> {
    v.map(|s| parse_duration(&s).map_err(|e| anyhow::anyhow!("config `{name}`: {e}"))).transpose()
}

/// Flags override the config file, which overrides built-in defaults.
fn resolve(opts: &Opts) -> Result<(PipelineConfig, Option<String>)> {
    let file = match &opts.config {
        Some(p) => load_file_config(p)?,
        None => FileConfig::default(),
    };
    let mut c = PipelineConfig::default();
    c.inputs = if opts.inputs.is_empty() { file.inputs } else { opts.inputs.clone() };
    macro_rules! pick {
        ($field:ident, $flag:expr, $file:expr) => {
            if let Some(v) = $flag.clone().or($file) {
                c.$field = v;
            }
        };
    }
    pick!(store_path, opts.store, file.store);
    pick!(logdir, opts.logdir, file.logdir);
    pick!(artifacts, opts.artifacts, file.artifacts);
    pick!(workdir, opts.workdir, file.workdir);
    pick!(report_dir, opts.report_dir, file.report_dir);
    pick!(jobs, opts.jobs, file.jobs);
    pick!(base_image, opts.base_image, file.base_image);
    pick!(scan_magic_installs, opts.scan_magic_installs, file.scan_magic_installs);
    pick!(build_timeout, opts.build_timeout, file_duration("build-timeout", file.build_timeout)?);
    pick!(exec_timeout, opts.exec_timeout, file_duration("exec-timeout", file.exec_timeout)?);
    pick!(clone_timeout, opts.clone_timeout, file_duration("clone-timeout", file.clone_timeout)?);
    c.alias_table = opts.alias_table.clone().or(file.alias_table);
    c.baseline = opts.baseline.clone().or(file.baseline);
    if let Some(cpus) = opts.cpus.clone().or(file.cpus) {
        c.limits.cpus = Some(cpus);
    }
    if let Some(mem) = opts.memory.clone().or(file.memory) {
        c.limits.memory = Some(mem);
    }
    c.validate()?;
    Ok((c, opts.runtime.clone().or(file.runtime)))
}

fn runtime_for(choice: Option<&str>) -> Option<DockerCli> {
    match choice {
        Some("none") => None,
        Some(binary) => {
            let cli = DockerCli::new(binary);
            match cli.ping() {
                Ok(()) => Some(cli),
                Err(e) => {
                    log::warn!("container runtime `{binary}` unusable: {e}");
                    None
                }
            }
        }
        None => DockerCli::detect(),
    }
}

fn exit_for(summary: &StageSummary) -> ExitCode {
    for f in &summary.infrastructure_failures {
        eprintln!("incomplete: {f}");
    }
    if summary.total_failure() {
        ExitCode::from(EXIT_FATAL)
    } else if !summary.infrastructure_failures.is_empty() {
        ExitCode::from(EXIT_PARTIAL)
    } else {
        ExitCode::SUCCESS
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let (command, opts) = match &cli.command {
        Command::Run(o) => ("run", o),
        Command::Infer(o) => ("infer", o),
        Command::Execute(o) => ("execute", o),
        Command::Compare(o) => ("compare", o),
        Command::Classify(o) => ("classify", o),
        Command::Report(o) => ("report", o),
    };
    let (config, runtime_choice) = resolve(opts)?;
    if matches!(command, "run" | "infer") && config.inputs.is_empty() {
        bail!("no repositories given; pass --input <url|path|list-file>");
    }
    let baseline = match (command, &config.baseline) {
        ("classify", None) => bail!("`classify` requires a baseline file: pass --baseline <file>"),
        (_, Some(b)) if !b.is_file() => bail!("--baseline {}: file not found", b.display()),
        (_, b) => b.clone(),
    };
    let store = Store::open(&config.store_path)
        .with_context(|| format!("opening store {}", config.store_path.display()))?;
    let invocation = RunId::generate().to_string();
    let events = EventLog::open(&config.logdir, &invocation)
        .with_context(|| format!("opening event log under {}", config.logdir.display()))?;
    let pipeline = Pipeline::new(&config, &store, &events)?;
    let runtime = if matches!(command, "run" | "execute") {
        let rt = runtime_for(runtime_choice.as_deref());
        if rt.is_none() {
            eprintln!("warning: no container runtime available; build and execution are skipped");
        }
        rt
    } else {
        None
    };
    let runtime_ref = runtime.as_ref().map(|r| r as &dyn ContainerRuntime);

    let code = match command {
        "run" => {
            let summary = pipeline.run_all(runtime_ref)?;
            println!("invocation {}: {} repositories", summary.invocation_id, summary.repositories);
            println!("reports written to {}", config.report_dir.display());
            exit_for(&summary)
        }
        "infer" => {
            let summary = pipeline.infer()?;
            println!("invocation {}: {} repositories inferred", summary.invocation_id, summary.repositories);
            exit_for(&summary)
        }
        "execute" => {
            let summary = pipeline.execute(runtime_ref, opts.invocation.as_deref())?;
            println!("invocation {}: {} repositories", summary.invocation_id, summary.repositories);
            exit_for(&summary)
        }
        "compare" => {
            let n = pipeline.compare(opts.invocation.as_deref(), true)?;
            println!("{n} notebooks compared");
            ExitCode::SUCCESS
        }
        "classify" => {
            let baseline = baseline.expect("checked above");
            let (classified, unmatched) = pipeline.classify(&baseline)?;
            println!("{classified} notebooks classified; {unmatched} baseline rows matched no notebook");
            ExitCode::SUCCESS
        }
        "report" => {
            let summary = pipeline.report()?;
            println!(
                "{} repositories, {} notebooks; reports written to {}",
                summary.repositories.total,
                summary.notebooks.total,
                config.report_dir.display()
            );
            ExitCode::SUCCESS
        }
        _ => unreachable!(),
    };
    Ok(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            match e.downcast_ref::<PipelineError>() {
                Some(PipelineError::MissingPredecessor(msg)) => eprintln!("error: {msg}"),
                _ => eprintln!("error: {e:#}"),
            }
            ExitCode::from(EXIT_FATAL)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations_accept_seconds_and_units() {
        assert_eq!(parse_duration("90").unwrap(), Duration::from_secs(90));
        assert_eq!(parse_duration("20m").unwrap(), Duration::from_secs(1200));
        assert!(parse_duration("0").is_err());
        assert!(parse_duration("soon").is_err());
    }

    #[test]
    fn flags_win_over_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("nbrepro.toml");
        std::fs::write(&cfg, "jobs = 3\nbase-image = \"python:3.11\"\nstore = \"db.sqlite\"\nexec-timeout = \"5m\"\n").unwrap();
        let opts = Opts {
            config: Some(cfg),
            jobs: Some(8),
            ..Default::default()
        };
        let (c, _) = resolve(&opts).unwrap();
        assert_eq!(c.jobs, 8);
        assert_eq!(c.base_image, "python:3.11");
        assert_eq!(c.store_path, dir.path().join("db.sqlite"));
        assert_eq!(c.exec_timeout, Duration::from_secs(300));
    }

    #[test]
    fn zero_jobs_rejected() {
        let opts = Opts {
            jobs: Some(0),
            ..Default::default()
        };
        assert!(resolve(&opts).is_err());
    }
}
