//! Sequential multi-task training: one mask for the whole run, then tasks
//! learned one after another by the same model.

mod ablation;
mod config;
mod convergence;
mod metrics;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub use ablation::{ablation_table_csv, run_ablation_grid, sort_ablation_rows, AblationRow};
pub use config::{hash_bytes, ExperimentConfig, LossConfig, TrainingConfig, Variant};
pub use convergence::{drive, ConvergenceRule, InnerLoop, LoopResult};
pub use metrics::{
    compute_metrics, final_efficiency, metrics_csv, metrics_csv_row, parse_metrics_csv, L2LMetrics, TaskOutcome,
    EFFICIENCY_WINDOWS, METRICS_HEADER,
};

use crate::container::{write_atomic, Container, Tensor};
use crate::error::{Error, Result};
use crate::gradients::{self, AdamState, DifferentiationMode, GradientSet, LossSpec, OptimizerConfig};
use crate::objective::{self, HomeostaticTarget};
use crate::plasticity::{configure, CandidateProperties, ConfiguredProperties, LearningMask};
use crate::seed::{self, Stream};
use crate::snn::{self, ForwardOptions, IntrinsicProperties, NetworkConfig, NetworkWeights, TrialRecording};
use crate::tasks::{self, TaskFamily, TaskInstance};
use crate::tensor::Matrix;

/// Everything that persists from one task to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub family: TaskFamily,
    pub network: NetworkConfig,
    pub weights: NetworkWeights,
    pub configured: ConfiguredProperties,
    pub optimizer: AdamState,
    pub target: HomeostaticTarget,
    pub tasks_completed: u64,
}

impl Model {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let network = cfg.effective_network();
        let spec = cfg.family.spec();
        let weights = NetworkWeights::init(&network, spec.input_dim(), spec.output_dim());
        let candidates = CandidateProperties::defaults(&network);
        Ok(Self {
            family: cfg.family,
            weights,
            configured: configure(&candidates, cfg.mask(), &cfg.provenance()),
            optimizer: AdamState::new(cfg.optimizer),
            target: HomeostaticTarget::default(),
            tasks_completed: 0,
            network,
        })
    }

    pub fn props(&self) -> &IntrinsicProperties {
        &self.configured.props
    }

    pub fn mask(&self) -> LearningMask {
        self.configured.mask
    }

    pub fn forward(&self, input: &Matrix, opts: &ForwardOptions) -> Result<TrialRecording> {
        snn::forward_trial_with(&self.weights, self.props(), &self.network, input, opts)
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.set_meta("kind", "checkpoint")?;
        c.set_meta("family", self.family.as_str())?;
        c.set_meta("mask", self.mask())?;
        c.set_meta("provenance", &self.configured.provenance)?;
        c.set_meta("tasks_completed", self.tasks_completed)?;
        c.set_meta("network", to_json(&self.network)?)?;
        c.set_meta("optimizer", to_json(&self.optimizer.config)?)?;
        c.push_matrix("w_in", &self.weights.w_in)?;
        c.push_matrix("w_rec", &self.weights.w_rec)?;
        c.push_matrix("w_out", &self.weights.w_out)?;
        c.push("branch_in", Tensor::vector(self.weights.branch_in.iter().map(|&b| f64::from(b)).collect()))?;
        c.push("branch_rec", Tensor::vector(self.weights.branch_rec.iter().map(|&b| f64::from(b)).collect()))?;
        let p = self.props();
        c.push("tau_d", Tensor::vector(p.tau_d.clone()))?;
        c.push("tau_s", Tensor::vector(p.tau_s.clone()))?;
        c.push("theta", Tensor::vector(p.theta.clone()))?;
        c.push("sigma_h_sq", Tensor::scalar(self.target.sigma_h_sq))?;
        self.optimizer.save_into(&mut c, "adam.")?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.meta("kind") != Some("checkpoint") {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let network: NetworkConfig = from_json(c.require_meta("network")?)?;
        let optimizer: OptimizerConfig = from_json(c.require_meta("optimizer")?)?;
        let branches = |name: &str| -> Result<Vec<u8>> {
            c.require(name)?
                .data
                .iter()
                .map(|&b| {
                    if b >= 0.0 && b < 256.0 && b.fract() == 0.0 {
                        Ok(b as u8)
                    } else {
                        Err(Error::Format(format!("bad branch index {b} in `{name}`")))
                    }
                })
                .collect()
        };
        let weights = NetworkWeights {
            w_in: c.matrix("w_in")?,
            w_rec: c.matrix("w_rec")?,
            w_out: c.matrix("w_out")?,
            branch_in: branches("branch_in")?,
            branch_rec: branches("branch_rec")?,
            n_dendrites: network.n_dendrites,
        };
        let props = IntrinsicProperties {
            n_dendrites: network.n_dendrites,
            tau_d: c.require("tau_d")?.data.clone(),
            tau_s: c.require("tau_s")?.data.clone(),
            theta: c.require("theta")?.data.clone(),
        };
        network.validate()?;
        weights.validate(&network)?;
        props.validate(&network)?;
        let sigma = c.require("sigma_h_sq")?;
        if sigma.data.len() != 1 {
            return Err(Error::Format("sigma_h_sq must be a scalar".into()));
        }
        Ok(Self {
            family: c.require_meta("family")?.parse()?,
            configured: ConfiguredProperties {
                props,
                mask: c.meta_parse("mask")?,
                provenance: c.require_meta("provenance")?.to_string(),
            },
            optimizer: AdamState::load_from(optimizer, c, "adam.")?,
            target: HomeostaticTarget {
                sigma_h_sq: sigma.data[0],
            },
            tasks_completed: c.meta_parse("tasks_completed")?,
            weights,
            network,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Format(e.to_string()))
}

fn from_json<T: serde::de::DeserializeOwned>(s: &str) -> Result<T> {
    serde_json::from_str(s).map_err(|e| Error::Format(format!("bad embedded config: {e}")))
}

/// Per-task settings shared by every task of a run.
#[derive(Debug, Clone)]
pub struct InnerSettings {
    pub rule: ConvergenceRule,
    pub loss: LossConfig,
    pub gradient: DifferentiationMode,
    /// Root seed of the noise streams.
    pub seed: u64,
    pub silenced: Option<Vec<bool>>,
}

impl InnerSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            rule: ConvergenceRule {
                threshold: cfg.training.threshold,
                min_iters: cfg.training.min_iters,
                max_iters: cfg.training.max_iters,
            },
            loss: cfg.loss,
            gradient: cfg.gradient,
            seed: cfg.seed,
            silenced: None,
        }
    }
}

pub fn loss_spec(model: &Model, task: &TaskInstance, loss: &LossConfig) -> LossSpec {
    LossSpec {
        kind: task.spec().loss,
        weights: loss.weights,
        schedule: task.schedule,
        reduction: loss.reduction,
        target: model.target,
    }
}

/// Noise stream seeds for one training iteration (0-based), one per trial.
pub fn noise_seeds(model: &Model, seed: u64, task_index: u64, iteration: u64, n_trials: usize) -> Vec<Option<u64>> {
    (0..n_trials as u64)
        .map(|k| {
            model
                .network
                .noise_enabled
                .then(|| seed::derive(seed, Stream::Noise, &[task_index, iteration, k]))
        })
        .collect()
}

struct ModelLoop<'a> {
    model: &'a mut Model,
    task: &'a TaskInstance,
    settings: &'a InnerSettings,
    spec: LossSpec,
    grads: Option<GradientSet>,
    mean_h2: f64,
    diagnostic: Option<String>,
}

impl InnerLoop for ModelLoop<'_> {
    fn evaluate(&mut self, iter: usize) -> Result<f64> {
        let m = &*self.model;
        let seeds = noise_seeds(m, self.settings.seed, self.task.task_index, iter as u64 - 1, self.task.trials.len());
        let result = gradients::loss_and_gradients(
            &m.weights,
            m.props(),
            m.mask(),
            &m.network,
            &self.task.trials,
            &self.spec,
            &self.settings.gradient,
            &seeds,
            self.settings.silenced.as_deref(),
        );
        match result {
            Ok((eval, grads)) => {
                self.mean_h2 = eval.mean_h2;
                self.grads = Some(grads);
                if !eval.breakdown.total.is_finite() {
                    self.diagnostic = Some(format!("non-finite loss {:?} at iteration {iter}", eval.breakdown));
                }
                Ok(eval.breakdown.total)
            }
            Err(Error::NonFiniteGradient(name)) => {
                self.grads = None;
                self.diagnostic = Some(format!("non-finite gradient for {name} at iteration {iter}"));
                Ok(f64::NAN)
            }
            Err(e) => Err(e),
        }
    }

    fn update(&mut self) -> Result<()> {
        let grads = self
            .grads
            .take()
            .ok_or_else(|| Error::InvalidArgument("update without a preceding evaluation".into()))?;
        let m = &mut *self.model;
        m.optimizer.step(&mut m.weights, &mut m.configured, &grads)
    }
}

/// Trains `model` on one task and moves the homeostatic target to the
/// activity level of the task's last iteration.
pub fn run_inner_task(model: &mut Model, task: &TaskInstance, settings: &InnerSettings) -> Result<(TaskOutcome, Option<String>)> {
    if task.family != model.family {
        return Err(Error::InvalidArgument(format!(
            "task family {} does not match model family {}",
            task.family, model.family
        )));
    }
    let start = Instant::now();
    let spec = loss_spec(model, task, &settings.loss);
    let mut inner = ModelLoop {
        model,
        task,
        settings,
        spec,
        grads: None,
        mean_h2: 0.0,
        diagnostic: None,
    };
    let r = drive(&mut inner, &settings.rule)?;
    let (mean_h2, diagnostic) = (inner.mean_h2, inner.diagnostic);
    model.target = objective::update_homeostatic_target(model.target, mean_h2);
    model.tasks_completed += 1;
    Ok((
        TaskOutcome {
            task_index: task.task_index,
            converged: r.converged,
            iterations_used: r.iterations_used,
            final_loss: r.final_loss,
            mean_h2,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        diagnostic,
    ))
}

/// Noiseless recordings of every trial of `task` under the current model.
pub fn record_task(model: &Model, task: &TaskInstance, silenced: Option<&[bool]>) -> Result<Vec<TrialRecording>> {
    let opts = ForwardOptions {
        silenced,
        ..ForwardOptions::noiseless()
    };
    task.trials
        .iter()
        .enumerate()
        .map(|(k, tr)| {
            let mut rec = model.forward(&tr.input, &opts)?;
            rec.task_index = task.task_index as usize;
            rec.trial_index = k;
            Ok(rec)
        })
        .collect()
}

pub fn save_recordings(path: &Path, family: TaskFamily, task_index: u64, recs: &[TrialRecording]) -> Result<()> {
    let mut c = Container::new();
    c.set_meta("kind", "recording")?;
    c.set_meta("family", family.as_str())?;
    c.set_meta("task_index", task_index)?;
    c.set_meta("n_trials", recs.len())?;
    for (k, r) in recs.iter().enumerate() {
        c.push_matrix(&format!("trial{k}.v"), &r.v)?;
        c.push_matrix(&format!("trial{k}.spikes"), &r.spikes)?;
        c.push_matrix(&format!("trial{k}.trace"), &r.trace)?;
        c.push_matrix(&format!("trial{k}.output"), &r.output)?;
    }
    c.save(path)
}

pub fn load_recordings(path: &Path) -> Result<Vec<TrialRecording>> {
    let c = Container::load(path)?;
    if c.meta("kind") != Some("recording") {
        return Err(Error::Format(format!("{} is not a recording file", path.display())));
    }
    let task_index: usize = c.meta_parse("task_index")?;
    let n: usize = c.meta_parse("n_trials")?;
    (0..n)
        .map(|k| {
            Ok(TrialRecording {
                task_index,
                trial_index: k,
                v: c.matrix(&format!("trial{k}.v"))?,
                spikes: c.matrix(&format!("trial{k}.spikes"))?,
                trace: c.matrix(&format!("trial{k}.trace"))?,
                output: c.matrix(&format!("trial{k}.output"))?,
            })
        })
        .collect()
}

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVENTS_FILE: &str = "events.log";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const RECORDING_DIR: &str = "recordings";

pub fn checkpoint_path(run_dir: &Path, task_index: u64) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(format!("task_{task_index:05}.ip2t"))
}

pub fn recording_path(run_dir: &Path, task_index: u64) -> PathBuf {
    run_dir.join(RECORDING_DIR).join(format!("task_{task_index:05}.ip2t"))
}

/// `(task_index, path)` of every `task_NNNNN.ip2t` in `dir`, sorted.
pub fn list_indexed(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(Error::io(dir, e)),
    };
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(idx) = name.strip_prefix("task_").and_then(|s| s.strip_suffix(".ip2t")) {
            if let Ok(i) = idx.parse() {
                out.push((i, path));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Loads the effective config written into a run directory.
pub fn load_run_config(run_dir: &Path) -> Result<ExperimentConfig> {
    let path = run_dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    ExperimentConfig::from_toml(&text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub outcomes: Vec<TaskOutcome>,
    pub metrics: L2LMetrics,
    pub early_stopped: bool,
}

fn keep(every: u64, task_index: u64) -> bool {
    every > 0 && (task_index + 1) % every == 0
}

struct EventLog {
    file: fs::File,
    path: PathBuf,
}

impl EventLog {
    fn create(path: PathBuf) -> Result<Self> {
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { file, path })
    }

    fn line(&mut self, msg: &str) -> Result<()> {
        log::info!("{msg}");
        writeln!(self.file, "{msg}")
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Runs a whole family: configures the mask once, then trains tasks in
/// order until `n_tasks` or the consecutive-failure limit.
///
/// Writes `config.toml`, `metrics.csv`, `events.log`, `summary.json`,
/// checkpoints and noiseless recordings under `cfg.output_dir`.
pub fn run_family(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let run_dir = cfg.output_dir.clone();
    for dir in [run_dir.clone(), run_dir.join(CHECKPOINT_DIR), run_dir.join(RECORDING_DIR)] {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    write_atomic(&run_dir.join(CONFIG_FILE), cfg.to_toml()?.as_bytes())?;
    let mut events = EventLog::create(run_dir.join(EVENTS_FILE))?;
    let metrics_path = run_dir.join(METRICS_FILE);
    let mut metrics_file = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    writeln!(metrics_file, "{METRICS_HEADER}").map_err(|e| Error::io(&metrics_path, e))?;

    let schedule = cfg.schedule()?;
    let settings = InnerSettings::from_config(cfg);
    let mut model = Model::new(cfg)?;
    events.line(&format!(
        "start family={} variant={} mask={} seed={} tasks={} neurons={} dendrites={}",
        cfg.family,
        cfg.provenance(),
        model.mask(),
        cfg.seed,
        cfg.n_tasks,
        model.network.n_neurons,
        model.network.n_dendrites
    ))?;

    let mut outcomes = Vec::new();
    let mut consecutive_failures = 0;
    let mut early_stopped = false;
    for i in 0..cfg.n_tasks {
        let task = tasks::generate(cfg.family, i, &schedule, cfg.seed)?;
        let (outcome, diagnostic) = run_inner_task(&mut model, &task, &settings)?;
        if let Some(d) = diagnostic {
            events.line(&format!("task {i} diagnostic: {d}"))?;
        }
        events.line(&format!(
            "task {i} converged={} iterations={} loss={:.6e} sigma_h_sq={:.6e} wall_time={:.3}s",
            outcome.converged, outcome.iterations_used, outcome.final_loss, model.target.sigma_h_sq, outcome.wall_time_s
        ))?;
        writeln!(metrics_file, "{}", metrics_csv_row(&outcome))
            .and_then(|_| metrics_file.flush())
            .map_err(|e| Error::io(&metrics_path, e))?;

        model.save(&checkpoint_path(&run_dir, i))?;
        let recs = record_task(&model, &task, None)?;
        save_recordings(&recording_path(&run_dir, i), cfg.family, i, &recs)?;
        if i >= 2 {
            let old = i - 2;
            if !keep(cfg.training.checkpoint_every, old) {
                remove_if_present(&checkpoint_path(&run_dir, old))?;
            }
            if !keep(cfg.training.record_every, old) {
                remove_if_present(&recording_path(&run_dir, old))?;
            }
        }

        consecutive_failures = if outcome.converged { 0 } else { consecutive_failures + 1 };
        outcomes.push(outcome);
        if consecutive_failures >= cfg.training.early_stop_failures {
            events.line(&format!("early stop after {consecutive_failures} consecutive failures at task {i}"))?;
            early_stopped = true;
            break;
        }
    }

    let metrics = compute_metrics(&outcomes)?;
    let summary = serde_json::json!({
        "family": cfg.family,
        "variant": cfg.provenance(),
        "mask": model.mask().to_string(),
        "seed": cfg.seed,
        "early_stopped": early_stopped,
        "metrics": metrics,
    });
    write_atomic(
        &run_dir.join(SUMMARY_FILE),
        serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::Format(e.to_string()))?
            .as_bytes(),
    )?;
    events.line(&format!(
        "done tasks={} failures={} early_stopped={early_stopped}",
        metrics.tasks_run, metrics.failure_count
    ))?;
    Ok(RunSummary {
        run_dir,
        outcomes,
        metrics,
        early_stopped,
    })
}

fn remove_if_present(path: &Path) -> Result<()> {
    match fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(Error::io(path, e)),
    }
}
