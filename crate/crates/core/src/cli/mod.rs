//! Command-line front end: `train`, `analyze`, `selftest`, `ablate` and
//! `export-task`.

mod analyze;
mod manifest;
mod selftest;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::container::write_atomic;
use crate::error::{Error, Result};
use crate::harness::{self, ablation_table_csv, run_ablation_grid, ExperimentConfig, Variant, CONFIG_FILE};
use crate::plasticity::LearningMask;
use crate::tasks::{self, PeriodSchedule, TaskFamily};

pub use analyze::AnalysisKind;
pub use manifest::{verify_manifest, Artifact, RunManifest, MANIFEST_FILE};
pub use selftest::{run_selftest, CheckOutcome, Fault};

/// Overrides the root that relative output directories resolve against.
pub const OUTPUT_ROOT_ENV: &str = "IP2RSNN_OUTPUT_ROOT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ip2rsnn", version, about = "Spiking networks with learnable intrinsic properties")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a task family sequentially and write a run directory.
    Train(TrainArgs),
    /// Run an analysis over a finished run directory.
    Analyze {
        #[arg(value_enum)]
        kind: AnalysisKind,
        #[command(flatten)]
        args: analyze::AnalyzeArgs,
    },
    /// Gradient, oracle and generator checks.
    Selftest {
        /// Skip the Monte-Carlo checks.
        #[arg(long)]
        fast: bool,
        #[arg(long, value_enum)]
        inject_fault: Option<Fault>,
    },
    /// Train one run per learning mask and tabulate the results.
    Ablate(AblateArgs),
    /// Write one generated task to a tensor file.
    ExportTask(ExportArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    family: Option<TaskFamily>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tasks: Option<u64>,
    /// Run directory; defaults to `<output_dir>/<family>-<variant>-<seed>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Validate the config and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    family: Option<TaskFamily>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tasks: Option<u64>,
    /// Comma-separated masks such as `000,011`, or `all`.
    #[arg(long, default_value = "all")]
    masks: String,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    family: TaskFamily,
    #[arg(long, default_value_t = 0)]
    index: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10.0)]
    dt_ms: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Analyze { kind, args } => analyze::cmd_analyze(kind, &args),
        Command::Selftest { fast, inject_fault } => Ok(selftest::cmd_selftest(fast, inject_fault)),
        Command::Ablate(a) => cmd_ablate(a),
        Command::ExportTask(a) => cmd_export(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::UnknownFamily(_) | Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// Joins relative paths onto `$IP2RSNN_OUTPUT_ROOT` when it is set.
pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() && !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_toml(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn base_config(config: Option<&Path>, family: Option<TaskFamily>) -> Result<ExperimentConfig> {
    match (config, family) {
        (Some(p), f) => {
            let mut cfg = read_config(p)?;
            if let Some(f) = f {
                cfg.family = f;
            }
            Ok(cfg)
        }
        (None, Some(f)) => Ok(ExperimentConfig::for_family(f)),
        (None, None) => Err(Error::Config("either --config or --family is required".into())),
    }
}

pub fn default_run_name(cfg: &ExperimentConfig) -> String {
    let family = cfg.family.as_str().to_ascii_lowercase();
    match cfg.variant {
        Variant::Ip2 => format!("{family}-{}", cfg.seed),
        _ => format!("{family}-{}-{}", cfg.provenance(), cfg.seed),
    }
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let mut cfg = base_config(a.config.as_deref(), a.family)?;
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.tasks {
        cfg.n_tasks = n;
    }
    let run_dir = resolve_output(&a.out.unwrap_or_else(|| cfg.output_dir.join(default_run_name(&cfg))));
    cfg.output_dir = run_dir.clone();
    cfg.validate()?;
    if a.dry_run {
        println!("config ok: {} hash={}", cfg.provenance(), cfg.hash()?);
        return Ok(EXIT_OK);
    }
    let started = manifest::now();
    let summary = harness::run_family(&cfg)?;
    let m = RunManifest::collect(&run_dir, &cfg, "train", started)?;
    m.write(&run_dir)?;
    println!(
        "{}: {} tasks, {} failures{} -> {} (config {})",
        cfg.provenance(),
        summary.metrics.tasks_run,
        summary.metrics.failure_count,
        if summary.early_stopped { ", stopped early" } else { "" },
        run_dir.display(),
        m.config_hash
    );
    Ok(EXIT_OK)
}

fn parse_masks(spec: &str) -> Result<Vec<LearningMask>> {
    if spec.eq_ignore_ascii_case("all") {
        return Ok(LearningMask::all_masks());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<LearningMask>())
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Config(format!("--masks: {e}")))
}

fn cmd_ablate(a: AblateArgs) -> Result<i32> {
    let mut cfg = base_config(a.config.as_deref(), a.family)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.tasks {
        cfg.n_tasks = n;
    }
    let masks = parse_masks(&a.masks)?;
    let family = cfg.family.as_str().to_ascii_lowercase();
    let root = resolve_output(&a.out.unwrap_or_else(|| cfg.output_dir.join(format!("{family}-ablation-{}", cfg.seed))));
    cfg.output_dir = root.clone();
    cfg.validate()?;
    if a.dry_run {
        println!("config ok: {} masks, hash={}", masks.len(), cfg.hash()?);
        return Ok(EXIT_OK);
    }
    let started = manifest::now();
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    write_atomic(&root.join(CONFIG_FILE), cfg.to_toml()?.as_bytes())?;
    let rows = run_ablation_grid(&cfg, &masks, a.threads)?;
    let hash = cfg.hash()?;
    let table = format!("# config_hash={hash}\n{}", ablation_table_csv(&rows));
    write_atomic(&root.join("ablation.csv"), table.as_bytes())?;
    RunManifest::collect(&root, &cfg, "ablate", started)?.write(&root)?;
    print!("{table}");
    Ok(EXIT_OK)
}

fn cmd_export(a: ExportArgs) -> Result<i32> {
    let schedule = PeriodSchedule::from_dt(a.dt_ms)?;
    let task = tasks::generate(a.family, a.index, &schedule, a.seed)?;
    let out = resolve_output(&a.out);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    task.to_container()?.save(&out)?;
    println!("{} task {} ({} trials) -> {}", a.family, a.index, task.trials.len(), out.display());
    Ok(EXIT_OK)
}
