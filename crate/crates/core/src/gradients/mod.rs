//! Reverse-mode differentiation through the unrolled network, a central
//! difference oracle, and the optimizer.

mod adam;
mod bptt;
mod finite_diff;

pub use adam::{AdamState, GroupLearningRates, OptimizerConfig, UpdateRule};
pub use bptt::{backward_trial, Upstream};
pub use finite_diff::{central_differences, finite_difference_oracle};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{
    self, HomeostaticTarget, LossBreakdown, LossKind, LossTerms, LossWeights, TrialReduction,
};
use crate::plasticity::LearningMask;
use crate::snn::{self, ForwardOptions, IntrinsicProperties, NetworkConfig, NetworkWeights, SpikeFn, TrialRecording};
use crate::tasks::{PeriodSchedule, Trial};
use crate::tensor::Matrix;

/// Trainable parameter groups, in flattening order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    WIn,
    WRec,
    WOut,
    TauD,
    TauS,
    Theta,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::WIn,
        ParamGroup::WRec,
        ParamGroup::WOut,
        ParamGroup::TauD,
        ParamGroup::TauS,
        ParamGroup::Theta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::WIn => "w_in",
            ParamGroup::WRec => "w_rec",
            ParamGroup::WOut => "w_out",
            ParamGroup::TauD => "tau_d",
            ParamGroup::TauS => "tau_s",
            ParamGroup::Theta => "theta",
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

/// Gradients laid out like the parameters they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub d_w_in: Matrix,
    pub d_w_rec: Matrix,
    pub d_w_out: Matrix,
    pub d_tau_d: Vec<f64>,
    pub d_tau_s: Vec<f64>,
    pub d_theta: Vec<f64>,
}

impl GradientSet {
    pub fn empty() -> Self {
        Self {
            d_w_in: Matrix::zeros(0, 0),
            d_w_rec: Matrix::zeros(0, 0),
            d_w_out: Matrix::zeros(0, 0),
            d_tau_d: Vec::new(),
            d_tau_s: Vec::new(),
            d_theta: Vec::new(),
        }
    }

    pub fn zeros_like(weights: &NetworkWeights, props: &IntrinsicProperties) -> Self {
        Self {
            d_w_in: Matrix::zeros(weights.w_in.rows(), weights.w_in.cols()),
            d_w_rec: Matrix::zeros(weights.w_rec.rows(), weights.w_rec.cols()),
            d_w_out: Matrix::zeros(weights.w_out.rows(), weights.w_out.cols()),
            d_tau_d: vec![0.0; props.tau_d.len()],
            d_tau_s: vec![0.0; props.tau_s.len()],
            d_theta: vec![0.0; props.theta.len()],
        }
    }

    pub fn group(&self, g: ParamGroup) -> &[f64] {
        match g {
            ParamGroup::WIn => self.d_w_in.as_slice(),
            ParamGroup::WRec => self.d_w_rec.as_slice(),
            ParamGroup::WOut => self.d_w_out.as_slice(),
            ParamGroup::TauD => &self.d_tau_d,
            ParamGroup::TauS => &self.d_tau_s,
            ParamGroup::Theta => &self.d_theta,
        }
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut [f64] {
        match g {
            ParamGroup::WIn => self.d_w_in.as_mut_slice(),
            ParamGroup::WRec => self.d_w_rec.as_mut_slice(),
            ParamGroup::WOut => self.d_w_out.as_mut_slice(),
            ParamGroup::TauD => &mut self.d_tau_d,
            ParamGroup::TauS => &mut self.d_tau_s,
            ParamGroup::Theta => &mut self.d_theta,
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        for g in ParamGroup::ALL {
            let src = other.group(g);
            let dst = self.group_mut(g);
            if src.len() != dst.len() {
                return Err(Error::shape("gradient accumulation", dst.len(), src.len()));
            }
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for g in ParamGroup::ALL {
            self.group_mut(g).iter_mut().for_each(|v| *v *= c);
        }
    }

    /// Zeroes the property groups the mask marks as fixed.
    pub fn apply_mask(&mut self, mask: LearningMask) {
        for g in [ParamGroup::TauD, ParamGroup::TauS, ParamGroup::Theta] {
            if !mask.allows(g) {
                self.group_mut(g).fill(0.0);
            }
        }
    }

    /// Errors with the first group holding a non-finite entry.
    pub fn check_finite(&self) -> Result<()> {
        for g in ParamGroup::ALL {
            if self.group(g).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(g.name()));
            }
        }
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        ParamGroup::ALL.iter().flat_map(|&g| self.group(g).iter().copied()).collect()
    }
}

/// Flattens weights and properties in [`ParamGroup::ALL`] order.
pub fn flatten_params(weights: &NetworkWeights, props: &IntrinsicProperties) -> Vec<f64> {
    let mut out = Vec::new();
    out.extend_from_slice(weights.w_in.as_slice());
    out.extend_from_slice(weights.w_rec.as_slice());
    out.extend_from_slice(weights.w_out.as_slice());
    out.extend_from_slice(&props.tau_d);
    out.extend_from_slice(&props.tau_s);
    out.extend_from_slice(&props.theta);
    out
}

/// Inverse of [`flatten_params`], writing into existing containers.
pub fn unflatten_params(flat: &[f64], weights: &mut NetworkWeights, props: &mut IntrinsicProperties) -> Result<()> {
    let total = weights.w_in.len()
        + weights.w_rec.len()
        + weights.w_out.len()
        + props.tau_d.len()
        + props.tau_s.len()
        + props.theta.len();
    if flat.len() != total {
        return Err(Error::shape("flat parameter vector", total, flat.len()));
    }
    let mut rest = flat;
    let mut take = |dst: &mut [f64]| {
        let (head, tail) = rest.split_at(dst.len());
        dst.copy_from_slice(head);
        rest = tail;
    };
    take(weights.w_in.as_mut_slice());
    take(weights.w_rec.as_mut_slice());
    take(weights.w_out.as_mut_slice());
    take(&mut props.tau_d);
    take(&mut props.tau_s);
    take(&mut props.theta);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GradientEstimator {
    /// Hard spikes forward, triangular pseudo-derivative backward.
    #[default]
    Surrogate,
    /// Sigmoid spikes forward and backward: exact gradients of a smoothed net.
    Smooth,
}

/// How the reset `V <- V (1 - S) + V_reset S` is differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ResetGradient {
    /// `S` is treated as a constant in the reset.
    #[default]
    Detach,
    /// Gradient also flows through `S` into the reset.
    PassThrough,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DifferentiationMode {
    pub estimator: GradientEstimator,
    pub surrogate_width: f64,
    pub reset: ResetGradient,
}

impl Default for DifferentiationMode {
    fn default() -> Self {
        Self {
            estimator: GradientEstimator::Surrogate,
            surrogate_width: 1.0,
            reset: ResetGradient::Detach,
        }
    }
}

impl DifferentiationMode {
    /// Exact-gradient verification mode.
    pub fn smooth(width: f64) -> Self {
        Self {
            estimator: GradientEstimator::Smooth,
            surrogate_width: width,
            reset: ResetGradient::PassThrough,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.surrogate_width > 0.0 && self.surrogate_width.is_finite()) {
            return Err(Error::Config(format!(
                "gradient.surrogate_width must be > 0, got {}",
                self.surrogate_width
            )));
        }
        Ok(())
    }

    pub fn spike_fn(&self) -> SpikeFn {
        match self.estimator {
            GradientEstimator::Surrogate => SpikeFn::Hard,
            GradientEstimator::Smooth => SpikeFn::Sigmoid {
                width: self.surrogate_width,
            },
        }
    }

    /// `dS/dv` at `(v, theta)` as seen by the backward pass.
    #[inline]
    pub fn spike_derivative(&self, v: f64, theta: f64) -> f64 {
        match self.estimator {
            GradientEstimator::Surrogate => surrogate_spike_derivative(v, theta, self.surrogate_width),
            GradientEstimator::Smooth => {
                let w = self.surrogate_width;
                let s = snn::sigmoid((v - theta) / w);
                s * (1.0 - s) / w
            }
        }
    }
}

/// Triangular pseudo-derivative `max(0, 1 - |v - theta| / width) / width`.
#[inline]
pub fn surrogate_spike_derivative(v: f64, theta: f64, width: f64) -> f64 {
    (1.0 - (v - theta).abs() / width).max(0.0) / width
}

/// Everything besides parameters that the task loss depends on.
#[derive(Debug, Clone)]
pub struct LossSpec {
    pub kind: LossKind,
    pub weights: LossWeights,
    pub schedule: PeriodSchedule,
    pub reduction: TrialReduction,
    pub target: HomeostaticTarget,
}

/// Forward results for one task evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub breakdown: LossBreakdown,
    pub mean_h2: f64,
    pub recordings: Vec<TrialRecording>,
}

fn trial_options<'a>(
    mode: &DifferentiationMode,
    noise_seed: Option<u64>,
    silenced: Option<&'a [bool]>,
) -> ForwardOptions<'a> {
    ForwardOptions {
        spike_fn: mode.spike_fn(),
        noise_seed,
        silenced,
    }
}

fn check_seeds(trials: &[Trial], noise_seeds: &[Option<u64>]) -> Result<()> {
    if trials.is_empty() {
        return Err(Error::InvalidArgument("task has no trials".into()));
    }
    if trials.len() != noise_seeds.len() {
        return Err(Error::shape("noise seeds per trial", trials.len(), noise_seeds.len()));
    }
    Ok(())
}

fn reduction_factor(reduction: TrialReduction, n_trials: usize) -> f64 {
    match reduction {
        TrialReduction::Mean => 1.0 / n_trials as f64,
        TrialReduction::Sum => 1.0,
    }
}

/// Forward pass over every trial and the composite loss.
pub fn evaluate(
    weights: &NetworkWeights,
    props: &IntrinsicProperties,
    cfg: &NetworkConfig,
    trials: &[Trial],
    spec: &LossSpec,
    mode: &DifferentiationMode,
    noise_seeds: &[Option<u64>],
    silenced: Option<&[bool]>,
) -> Result<Evaluation> {
    check_seeds(trials, noise_seeds)?;
    let factor = reduction_factor(spec.reduction, trials.len());
    let mut base = 0.0;
    let mut recordings = Vec::with_capacity(trials.len());
    for (k, (trial, seed)) in trials.iter().zip(noise_seeds).enumerate() {
        let opts = trial_options(mode, *seed, silenced);
        let mut rec = snn::forward_trial_with(weights, props, cfg, &trial.input, &opts)?;
        rec.trial_index = k;
        base += factor * objective::trial_base_loss(&rec.output, &trial.target, spec.kind, &spec.schedule)?.0;
        recordings.push(rec);
    }
    let mean_h2 = objective::mean_square_activity(&recordings);
    let terms = LossTerms::from_weights(base, objective::homeostatic_loss(mean_h2, spec.target), weights);
    Ok(Evaluation {
        breakdown: objective::total_loss(terms, &spec.weights),
        mean_h2,
        recordings,
    })
}

/// Loss and gradients of the composite loss for one task. Gradients of
/// property groups masked out by `mask` are zero.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_gradients(
    weights: &NetworkWeights,
    props: &IntrinsicProperties,
    mask: LearningMask,
    cfg: &NetworkConfig,
    trials: &[Trial],
    spec: &LossSpec,
    mode: &DifferentiationMode,
    noise_seeds: &[Option<u64>],
    silenced: Option<&[bool]>,
) -> Result<(Evaluation, GradientSet)> {
    check_seeds(trials, noise_seeds)?;
    mode.validate()?;
    let factor = reduction_factor(spec.reduction, trials.len());
    let mut recordings = Vec::with_capacity(trials.len());
    let mut tapes = Vec::with_capacity(trials.len());
    let mut base = 0.0;
    for (k, (trial, seed)) in trials.iter().zip(noise_seeds).enumerate() {
        let opts = trial_options(mode, *seed, silenced);
        let (mut rec, tape) = snn::forward_trial_taped(weights, props, cfg, &trial.input, &opts)?;
        rec.trial_index = k;
        let (l, mut d_out) = objective::trial_base_loss(&rec.output, &trial.target, spec.kind, &spec.schedule)?;
        base += factor * l;
        d_out.as_mut_slice().iter_mut().for_each(|g| *g *= factor);
        recordings.push(rec);
        tapes.push((tape, d_out));
    }

    let mean_h2 = objective::mean_square_activity(&recordings);
    let homeostatic = objective::homeostatic_loss(mean_h2, spec.target);
    let count: usize = recordings.iter().map(|r| r.trace.len()).sum();
    // d|m - s|/dM = sign(m - s) * 2M / count
    let sign = match (mean_h2 - spec.target.sigma_h_sq).partial_cmp(&0.0) {
        Some(std::cmp::Ordering::Greater) => 1.0,
        Some(std::cmp::Ordering::Less) => -1.0,
        _ => 0.0,
    };
    let trace_coef = spec.weights.lambda_h * sign * 2.0 / count.max(1) as f64;

    let mut grads = GradientSet::zeros_like(weights, props);
    for ((rec, (tape, d_out)), trial) in recordings.iter().zip(tapes).zip(trials) {
        let up = Upstream {
            d_output: d_out,
            trace_coef,
        };
        let g = backward_trial(weights, props, cfg, &trial.input, rec, &tape, &up, mode)?;
        grads.add_assign(&g)?;
    }

    // regularizers: d mean(W^2) = 2W / |W|
    for (dw, w, lam) in [
        (&mut grads.d_w_in, &weights.w_in, spec.weights.lambda_in),
        (&mut grads.d_w_rec, &weights.w_rec, spec.weights.lambda_rec),
        (&mut grads.d_w_out, &weights.w_out, spec.weights.lambda_out),
    ] {
        if w.is_empty() {
            continue;
        }
        let c = lam * 2.0 / w.len() as f64;
        dw.as_mut_slice()
            .iter_mut()
            .zip(w.as_slice())
            .for_each(|(g, x)| *g += c * x);
    }
    grads.apply_mask(mask);
    grads.check_finite()?;

    let terms = LossTerms::from_weights(base, homeostatic, weights);
    Ok((
        Evaluation {
            breakdown: objective::total_loss(terms, &spec.weights),
            mean_h2,
            recordings,
        },
        grads,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_values() {
        assert_eq!(surrogate_spike_derivative(1.0, 1.0, 0.5), 2.0);
        assert_eq!(surrogate_spike_derivative(2.0, 1.0, 1.0), 0.0);
        assert_eq!(surrogate_spike_derivative(-0.5, 1.0, 1.0), 0.0);
        assert_eq!(surrogate_spike_derivative(1.5, 1.0, 1.0), 0.5);
    }

    #[test]
    fn triangle_has_unit_integral() {
        for width in [0.3, 1.0, 2.5] {
            let n = 200_000;
            let (lo, hi) = (-3.0, 5.0);
            let h = (hi - lo) / n as f64;
            let integral: f64 = (0..n)
                .map(|k| surrogate_spike_derivative(lo + (k as f64 + 0.5) * h, 1.0, width) * h)
                .sum();
            assert!((integral - 1.0).abs() < 1e-6, "width {width}: {integral}");
        }
    }

    #[test]
    fn mask_and_finite_checks() {
        let p = IntrinsicProperties::uniform(2, 2, 0.5, 0.5, 1.0);
        let mut g = GradientSet {
            d_tau_d: vec![1.0; 4],
            d_tau_s: vec![1.0; 2],
            d_theta: vec![1.0; 2],
            ..GradientSet::empty()
        };
        g.apply_mask(LearningMask::new(true, false, false));
        assert_eq!(g.d_tau_s, vec![0.0; 2]);
        assert_eq!(g.d_theta, vec![0.0; 2]);
        assert_eq!(g.d_tau_d, vec![1.0; 4]);
        g.d_theta[1] = f64::NAN;
        assert!(matches!(g.check_finite(), Err(Error::NonFiniteGradient("theta"))));
        let _ = p;
    }
}
