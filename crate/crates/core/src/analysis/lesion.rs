use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::{self, DifferentiationMode};
use crate::harness::{loss_spec, run_inner_task, InnerSettings, LossConfig, Model};
use crate::snn::IntrinsicProperties;
use crate::tasks::TaskInstance;

pub const N_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyId {
    TauD,
    TauS,
    Theta,
}

impl PropertyId {
    pub const ALL: [PropertyId; 3] = [PropertyId::TauD, PropertyId::TauS, PropertyId::Theta];

    pub fn name(self) -> &'static str {
        match self {
            PropertyId::TauD => "tau_d",
            PropertyId::TauS => "tau_s",
            PropertyId::Theta => "theta",
        }
    }

    /// One value per neuron; dendritic decays are averaged over branches.
    pub fn values(self, props: &IntrinsicProperties) -> Result<Vec<f64>> {
        match self {
            PropertyId::TauD if props.n_dendrites == 0 => {
                Err(Error::InvalidArgument("point neurons have no dendritic decays to bin".into()))
            }
            PropertyId::TauD => Ok(props.tau_d_per_neuron()),
            PropertyId::TauS => Ok(props.tau_s.clone()),
            PropertyId::Theta => Ok(props.theta.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyBins {
    pub property: PropertyId,
    pub normalized: Vec<f64>,
    /// Neuron indices per bin, `N_BINS` entries.
    pub bins: Vec<Vec<usize>>,
    /// Set when every neuron had the same value.
    pub degenerate: bool,
}

impl PropertyBins {
    pub fn mask(&self, bin: usize, n_neurons: usize) -> Vec<bool> {
        let mut m = vec![false; n_neurons];
        for &i in &self.bins[bin] {
            m[i] = true;
        }
        m
    }
}

/// Min-max normalizes `values` and splits `[0, 1]` into ten equal bins,
/// the last one closed on the right.
pub fn bin_values(property: PropertyId, values: &[f64]) -> Result<PropertyBins> {
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("binning needs finite values".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = hi == lo;
    let normalized: Vec<f64> = values
        .iter()
        .map(|&v| if degenerate { 0.0 } else { (v - lo) / (hi - lo) })
        .collect();
    let mut bins = vec![Vec::new(); N_BINS];
    for (i, &x) in normalized.iter().enumerate() {
        let b = ((x * N_BINS as f64).floor() as usize).min(N_BINS - 1);
        bins[b].push(i);
    }
    Ok(PropertyBins {
        property,
        normalized,
        bins,
        degenerate,
    })
}

pub fn bin_neurons(props: &IntrinsicProperties, property: PropertyId) -> Result<PropertyBins> {
    bin_values(property, &property.values(props)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionRow {
    pub property: PropertyId,
    pub bin: usize,
    pub n_silenced: usize,
    pub current_task_loss: f64,
    pub next_task_iterations: usize,
    pub next_task_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionReport {
    pub baseline_loss: f64,
    pub rows: Vec<LesionRow>,
}

/// Noise-free total training loss of `model` on `task` with the given
/// neurons' spikes clamped to zero.
pub fn current_task_loss(model: &Model, task: &TaskInstance, loss: &LossConfig, silenced: Option<&[bool]>) -> Result<f64> {
    let spec = loss_spec(model, task, loss);
    let seeds = vec![None; task.trials.len()];
    let eval = gradients::evaluate(
        &model.weights,
        model.props(),
        &model.network,
        &task.trials,
        &spec,
        &DifferentiationMode::default(),
        &seeds,
        silenced,
    )?;
    Ok(eval.breakdown.total)
}

/// Silences each bin in turn: loss on the current task, then iterations the
/// silenced model needs to learn the next task. Every bin starts from the
/// unlesioned `model`.
pub fn lesion_eval(
    model: &Model,
    bins: &[PropertyBins],
    current_task: &TaskInstance,
    next_task: &TaskInstance,
    settings: &InnerSettings,
) -> Result<LesionReport> {
    let n = model.network.n_neurons;
    let baseline_loss = current_task_loss(model, current_task, &settings.loss, None)?;
    let mut rows = Vec::new();
    for pb in bins {
        if pb.normalized.len() != n {
            return Err(Error::shape("property bins", n, pb.normalized.len()));
        }
        for (b, members) in pb.bins.iter().enumerate() {
            let mask = pb.mask(b, n);
            let current_task_loss = current_task_loss(model, current_task, &settings.loss, Some(&mask))?;
            let mut lesioned = model.clone();
            let s = InnerSettings {
                silenced: Some(mask),
                ..settings.clone()
            };
            let (outcome, _) = run_inner_task(&mut lesioned, next_task, &s)?;
            rows.push(LesionRow {
                property: pb.property,
                bin: b,
                n_silenced: members.len(),
                current_task_loss,
                next_task_iterations: outcome.iterations_used,
                next_task_converged: outcome.converged,
            });
        }
    }
    Ok(LesionReport { baseline_loss, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_binning() {
        let b = bin_values(PropertyId::TauS, &[0.05, 0.5, 0.95]).unwrap();
        assert!(b.normalized.iter().zip([0.0, 0.5, 1.0]).all(|(x, y)| (x - y).abs() < 1e-12));
        assert_eq!(b.bins[0], vec![0]);
        assert_eq!(b.bins[5], vec![1]);
        assert_eq!(b.bins[9], vec![2]);
        assert!(!b.degenerate);
        assert_eq!(b.bins.iter().map(Vec::len).sum::<usize>(), 3);
    }

    #[test]
    fn degenerate_binning() {
        let b = bin_values(PropertyId::Theta, &[1.0; 4]).unwrap();
        assert!(b.degenerate);
        assert_eq!(b.bins[0], vec![0, 1, 2, 3]);
        assert!(bin_values(PropertyId::Theta, &[]).is_err());
    }

    #[test]
    fn point_neurons_have_no_dendritic_bins() {
        let p = IntrinsicProperties::uniform(3, 0, 0.0, 0.9, 1.0);
        assert!(bin_neurons(&p, PropertyId::TauD).is_err());
        let p = IntrinsicProperties::uniform(3, 2, 0.5, 0.9, 1.0);
        assert_eq!(bin_neurons(&p, PropertyId::TauD).unwrap().bins.len(), N_BINS);
    }

    use crate::harness::ExperimentConfig;
    use crate::objective::weight_regularizer;
    use crate::tasks::{generate, TaskFamily};

    fn setup() -> (Model, TaskInstance, TaskInstance, InnerSettings) {
        let mut cfg = ExperimentConfig::for_family(TaskFamily::GngDr2);
        cfg.network.n_neurons = 12;
        cfg.network.dt_ms = 50.0;
        cfg.training.threshold = 1e-9;
        cfg.training.min_iters = 1;
        cfg.training.max_iters = 3;
        let mut model = Model::new(&cfg).unwrap();
        model.target.sigma_h_sq = 0.3;
        let sched = cfg.schedule().unwrap();
        let t0 = generate(cfg.family, 0, &sched, cfg.seed).unwrap();
        let t1 = generate(cfg.family, 1, &sched, cfg.seed).unwrap();
        (model, t0, t1, InnerSettings::from_config(&cfg))
    }

    #[test]
    fn empty_mask_is_bit_exact() {
        let (model, t0, _, s) = setup();
        let none = current_task_loss(&model, &t0, &s.loss, None).unwrap();
        let empty = vec![false; model.network.n_neurons];
        let masked = current_task_loss(&model, &t0, &s.loss, Some(&empty)).unwrap();
        assert_eq!(none.to_bits(), masked.to_bits());
    }

    #[test]
    fn all_silenced_matches_closed_form() {
        let (model, t0, _, s) = setup();
        let all = vec![true; model.network.n_neurons];
        let got = current_task_loss(&model, &t0, &s.loss, Some(&all)).unwrap();
        // zero output against each target, averaged over trials
        let base: f64 = t0
            .trials
            .iter()
            .map(|tr| tr.target.as_slice().iter().map(|y| y * y).sum::<f64>() / tr.target.len() as f64)
            .sum::<f64>()
            / t0.trials.len() as f64;
        let w = s.loss.weights;
        let expected = base
            + w.lambda_h * 0.3
            + w.lambda_in * weight_regularizer(&model.weights.w_in)
            + w.lambda_rec * weight_regularizer(&model.weights.w_rec)
            + w.lambda_out * weight_regularizer(&model.weights.w_out);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn lesion_rows_per_bin() {
        let (model, t0, t1, s) = setup();
        let bins = bin_neurons(model.props(), PropertyId::Theta).unwrap();
        let report = lesion_eval(&model, &[bins.clone()], &t0, &t1, &s).unwrap();
        assert_eq!(report.rows.len(), N_BINS);
        for (row, members) in report.rows.iter().zip(&bins.bins) {
            assert_eq!(row.n_silenced, members.len());
            assert!(row.current_task_loss.is_finite());
            if members.is_empty() {
                assert_eq!(row.current_task_loss.to_bits(), report.baseline_loss.to_bits());
            }
        }
    }
}
