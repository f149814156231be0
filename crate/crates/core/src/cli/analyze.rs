use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};

use crate::analysis::{
    allegiance_matrix, bin_neurons, build_layers, community_count, lesion_eval, louvain_optimize, membrane_stats,
    modularity_q, pca_delay, stationarity, PropertyId,
};
use crate::container::{write_atomic, Container, Tensor};
use crate::error::{Error, Result};
use crate::harness::{
    hash_bytes, list_indexed, load_recordings, load_run_config, InnerSettings, Model, CHECKPOINT_DIR,
    CONFIG_FILE, RECORDING_DIR,
};
use crate::snn::TrialRecording;
use crate::tasks;

use super::{resolve_output, EXIT_OK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalysisKind {
    Lesion,
    Stats,
    Modularity,
    Pca,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Finished run directory.
    #[arg(long)]
    pub run: PathBuf,
    /// Output directory; defaults to `<run>/analysis`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Checkpoint to lesion; defaults to the latest one.
    #[arg(long)]
    pub task: Option<u64>,
    #[arg(long, default_value_t = 500.0)]
    pub window_ms: f64,
    #[arg(long, default_value_t = 500.0)]
    pub stride_ms: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub coupling: f64,
    /// Keep negative correlations instead of clipping them to zero.
    #[arg(long)]
    pub keep_negative: bool,
    #[arg(long, default_value_t = 2)]
    pub components: usize,
}

struct Ctx {
    run: PathBuf,
    out: PathBuf,
    hash: String,
}

impl Ctx {
    fn write_csv(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.out.join(name);
        write_atomic(&path, format!("# config_hash={}\n{body}", self.hash).as_bytes())?;
        Ok(path)
    }

    fn write_container(&self, name: &str, mut c: Container) -> Result<PathBuf> {
        c.set_meta("config_hash", &self.hash)?;
        let path = self.out.join(name);
        c.save(&path)?;
        Ok(path)
    }
}

fn missing(run: &Path, what: &str) -> Error {
    Error::Format(format!(
        "{} has no {what}; this analysis needs `{CONFIG_FILE}` and files under `{what}/` from a finished `train` run",
        run.display()
    ))
}

fn recordings(ctx: &Ctx) -> Result<Vec<(u64, Vec<TrialRecording>)>> {
    let files = list_indexed(&ctx.run.join(RECORDING_DIR))?;
    if files.is_empty() {
        return Err(missing(&ctx.run, RECORDING_DIR));
    }
    files.into_iter().map(|(i, p)| Ok((i, load_recordings(&p)?))).collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub(super) fn cmd_analyze(kind: AnalysisKind, a: &AnalyzeArgs) -> Result<i32> {
    let run = resolve_output(&a.run);
    let cfg_path = run.join(CONFIG_FILE);
    let cfg_bytes = fs::read(&cfg_path).map_err(|_| missing(&run, CONFIG_FILE))?;
    let ctx = Ctx {
        out: a.out.as_deref().map(resolve_output).unwrap_or_else(|| run.join("analysis")),
        hash: hash_bytes(&cfg_bytes),
        run,
    };
    fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    let written = match kind {
        AnalysisKind::Lesion => lesion(&ctx, a)?,
        AnalysisKind::Stats => stats(&ctx)?,
        AnalysisKind::Modularity => modularity(&ctx, a)?,
        AnalysisKind::Pca => pca(&ctx, a)?,
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(EXIT_OK)
}

fn lesion(ctx: &Ctx, a: &AnalyzeArgs) -> Result<Vec<PathBuf>> {
    let cfg = load_run_config(&ctx.run)?;
    let checkpoints = list_indexed(&ctx.run.join(CHECKPOINT_DIR))?;
    let (index, path) = match a.task {
        Some(t) => checkpoints
            .into_iter()
            .find(|(i, _)| *i == t)
            .ok_or_else(|| Error::InvalidArgument(format!("no checkpoint for task {t}")))?,
        None => checkpoints.into_iter().last().ok_or_else(|| missing(&ctx.run, CHECKPOINT_DIR))?,
    };
    let model = Model::load(&path)?;
    let schedule = cfg.schedule()?;
    let current = tasks::generate(cfg.family, index, &schedule, cfg.seed)?;
    let next = tasks::generate(cfg.family, index + 1, &schedule, cfg.seed)?;
    let bins = PropertyId::ALL
        .iter()
        .filter_map(|&p| bin_neurons(model.props(), p).ok())
        .collect::<Vec<_>>();
    let report = lesion_eval(&model, &bins, &current, &next, &InnerSettings::from_config(&cfg))?;
    let mut s = String::from("task_index,property,bin,n_silenced,current_task_loss,next_task_iterations,next_task_converged\n");
    let _ = writeln!(s, "{index},none,,0,{},,", report.baseline_loss);
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{index},{},{},{},{},{},{}",
            r.property.name(),
            r.bin,
            r.n_silenced,
            r.current_task_loss,
            r.next_task_iterations,
            r.next_task_converged
        );
    }
    Ok(vec![ctx.write_csv("lesion.csv", &s)?])
}

fn stats(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let mut s = String::from("task_index,mean_v,var_v,mean_corr,var_corr,n_pairs,excluded_pairs\n");
    for (i, recs) in recordings(ctx)? {
        let m = membrane_stats(&recs)?;
        let _ = writeln!(
            s,
            "{i},{},{},{},{},{},{}",
            m.mean_potential,
            m.potential_variance,
            fmt_opt(m.mean_correlation),
            fmt_opt(m.correlation_variance),
            m.n_pairs,
            m.excluded_pairs
        );
    }
    Ok(vec![ctx.write_csv("membrane_stats.csv", &s)?])
}

fn steps_for(ms: f64, dt: f64, what: &str) -> Result<usize> {
    let s = (ms / dt).round();
    if !(s >= 1.0) {
        return Err(Error::InvalidArgument(format!("{what} of {ms} ms is shorter than one step")));
    }
    Ok(s as usize)
}

fn modularity(ctx: &Ctx, a: &AnalyzeArgs) -> Result<Vec<PathBuf>> {
    let cfg = load_run_config(&ctx.run)?;
    let dt = cfg.network.dt_ms;
    let window = steps_for(a.window_ms, dt, "window")?;
    let stride = steps_for(a.stride_ms, dt, "stride")?;
    let mut s = String::from("task_index,trial,layers,q,mean_communities,stationarity\n");
    let mut allegiance = Container::new();
    allegiance.set_meta("kind", "allegiance")?;
    for (i, recs) in recordings(ctx)? {
        for r in &recs {
            let net = build_layers(&r.v, window, stride, !a.keep_negative, a.gamma, a.coupling)?;
            let asg = louvain_optimize(&net, cfg.seed)?;
            let q = modularity_q(&net, &asg)?;
            let (_, mean_count) = community_count(&asg);
            let st = stationarity(&asg);
            let _ = writeln!(
                s,
                "{i},{},{},{q},{mean_count},{}",
                r.trial_index,
                net.n_layers(),
                fmt_opt(st.mean)
            );
            allegiance.push_matrix(&format!("task{i}.trial{}", r.trial_index), &allegiance_matrix(&asg))?;
        }
    }
    Ok(vec![
        ctx.write_csv("modularity.csv", &s)?,
        ctx.write_container("allegiance.ip2t", allegiance)?,
    ])
}

fn pca(ctx: &Ctx, a: &AnalyzeArgs) -> Result<Vec<PathBuf>> {
    let cfg = load_run_config(&ctx.run)?;
    let recs = recordings(ctx)?;
    let e = pca_delay(&recs, &cfg.schedule()?, a.components)?;
    let mut s = String::from("task_index");
    for c in 0..a.components {
        let _ = write!(s, ",pc{}", c + 1);
    }
    s.push_str(",step_size\n");
    for (k, (i, coords)) in e.task_means.iter().enumerate() {
        let _ = write!(s, "{i}");
        for x in coords {
            let _ = write!(s, ",{x}");
        }
        let step = if k == 0 { None } else { Some(e.step_sizes[k - 1]) };
        let _ = writeln!(s, ",{}", fmt_opt(step));
    }
    let summary = serde_json::json!({
        "config_hash": ctx.hash,
        "median_step": e.median_step,
        "ensemble_variance": e.ensemble_variance,
        "explained_variance": e.explained_variance,
        "tasks": e.task_means.len(),
    });
    let summary_path = ctx.out.join("pca_summary.json");
    write_atomic(
        &summary_path,
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?.as_bytes(),
    )?;
    let mut basis = Container::new();
    basis.set_meta("kind", "pca_basis")?;
    basis.push_matrix("basis", &e.basis)?;
    basis.push("center", Tensor::vector(e.center.clone()))?;
    Ok(vec![
        ctx.write_csv("pca.csv", &s)?,
        summary_path,
        ctx.write_container("pca_basis.ip2t", basis)?,
    ])
}
