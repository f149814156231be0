//! Discrete-time recurrent spiking network with optional dendritic branches.
//!
//! One step of the state machine, in this order:
//!
//! 1. noise:    `N(t) = (1 - a_n) N(t-1) + sqrt(2 a_n) A z`
//! 2. branches: `V_d(t) = tau_d V_d(t-1) + (1 - tau_d) (W_in,d x(t) + W_rec,d S_mem(t-1))`
//! 3. soma:     `V(t) = tau_s V(t-1) + (1 - tau_s) sum_d V_d(t) + N(t)`
//! 4. spike:    `S(t) = [V(t) >= theta]`, reset `V(t) = V_reset` where `S(t) = 1`
//! 5. trace:    `S_mem(t) = alpha S_mem(t-1) + (1 - alpha) S(t-1)`
//! 6. readout:  `y(t) = W_out S_mem(t)`
//!
//! With `n_dendrites = 0` step 2 is skipped and the soma integrates
//! `W_in x(t) + W_rec S_mem(t-1)` directly.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Stream};
use crate::tensor::Matrix;

/// Where the noise term enters the somatic update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseForm {
    /// `... + (1 - tau_s) drive + N`
    #[default]
    Additive,
    /// `... + (1 - tau_s) (drive + N)`
    Scaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub n_neurons: usize,
    /// Branches per neuron; 0 selects the point-soma update.
    pub n_dendrites: usize,
    pub dt_ms: f64,
    /// Trace smoothing factor.
    pub alpha: f64,
    pub alpha_noise: f64,
    pub a_noise: f64,
    pub v_reset: f64,
    pub noise_enabled: bool,
    pub noise_form: NoiseForm,
    pub rng_seed: u64,
    /// Weight initialization gains; each matrix is drawn from
    /// `N(0, gain^2 / fan_in)`.
    pub init_input_gain: f64,
    pub init_recurrent_gain: f64,
    pub init_output_gain: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            n_neurons: 256,
            n_dendrites: 2,
            dt_ms: 10.0,
            alpha: 0.01,
            alpha_noise: 0.5,
            a_noise: 0.05,
            v_reset: 0.0,
            noise_enabled: true,
            noise_form: NoiseForm::Additive,
            rng_seed: 0,
            init_input_gain: 3.0,
            init_recurrent_gain: 1.0,
            init_output_gain: 0.5,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_neurons == 0 {
            return bad("network.n_neurons must be > 0".into());
        }
        if !(self.dt_ms > 0.0 && self.dt_ms.is_finite()) {
            return bad(format!("network.dt_ms must be > 0, got {}", self.dt_ms));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("network.alpha must lie in (0, 1], got {}", self.alpha));
        }
        if !(self.alpha_noise > 0.0 && self.alpha_noise <= 1.0) {
            return bad(format!("network.alpha_noise must lie in (0, 1], got {}", self.alpha_noise));
        }
        if !(self.a_noise >= 0.0 && self.a_noise.is_finite()) {
            return bad(format!("network.a_noise must be >= 0, got {}", self.a_noise));
        }
        if !self.v_reset.is_finite() {
            return bad("network.v_reset must be finite".into());
        }
        if self.n_dendrites > u8::MAX as usize {
            return bad(format!("network.n_dendrites too large: {}", self.n_dendrites));
        }
        Ok(())
    }
}

/// Synaptic weights. Dendritic connectivity is branch-exclusive: each
/// afferent `(i, j)` carries one weight and a branch index saying which of
/// neuron `i`'s branches it lands on.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    /// `n_neurons x n_inputs`
    pub w_in: Matrix,
    /// `n_neurons x n_neurons`
    pub w_rec: Matrix,
    /// `n_outputs x n_neurons`
    pub w_out: Matrix,
    /// Branch index per input afferent (row-major like `w_in`); empty in point mode.
    pub branch_in: Vec<u8>,
    /// Branch index per recurrent afferent; empty in point mode.
    pub branch_rec: Vec<u8>,
    pub n_dendrites: usize,
}

impl NetworkWeights {
    /// Seeded initialization with uniform random branch assignment.
    pub fn init(cfg: &NetworkConfig, n_inputs: usize, n_outputs: usize) -> Self {
        let n = cfg.n_neurons;
        let draw = |rows: usize, cols: usize, gain: f64, stream: Stream| {
            let mut rng = seed::rng(cfg.rng_seed, stream, &[]);
            let sd = if cols == 0 { 0.0 } else { gain / (cols as f64).sqrt() };
            let normal = Normal::new(0.0, sd).expect("finite standard deviation");
            Matrix::from_fn(rows, cols, |_, _| normal.sample(&mut rng))
        };
        let w_in = draw(n, n_inputs, cfg.init_input_gain, Stream::InputWeights);
        let w_rec = draw(n, n, cfg.init_recurrent_gain, Stream::RecurrentWeights);
        let w_out = draw(n_outputs, n, cfg.init_output_gain, Stream::OutputWeights);
        let (branch_in, branch_rec) = if cfg.n_dendrites == 0 {
            (Vec::new(), Vec::new())
        } else {
            let mut rng = seed::rng(cfg.rng_seed, Stream::DendriteBranches, &[]);
            let pick = Uniform::new(0, cfg.n_dendrites as u8).expect("non-empty branch range");
            let bi = (0..n * n_inputs).map(|_| pick.sample(&mut rng)).collect();
            let br = (0..n * n).map(|_| pick.sample(&mut rng)).collect();
            (bi, br)
        };
        Self {
            w_in,
            w_rec,
            w_out,
            branch_in,
            branch_rec,
            n_dendrites: cfg.n_dendrites,
        }
    }

    pub fn n_neurons(&self) -> usize {
        self.w_rec.rows()
    }

    pub fn n_inputs(&self) -> usize {
        self.w_in.cols()
    }

    pub fn n_outputs(&self) -> usize {
        self.w_out.rows()
    }

    pub fn validate(&self, cfg: &NetworkConfig) -> Result<()> {
        let n = cfg.n_neurons;
        if self.n_dendrites != cfg.n_dendrites {
            return Err(Error::shape("weights.n_dendrites", cfg.n_dendrites, self.n_dendrites));
        }
        if self.w_in.rows() != n {
            return Err(Error::shape("w_in rows", n, self.w_in.rows()));
        }
        if self.w_rec.shape() != (n, n) {
            return Err(Error::shape("w_rec", format!("{n}x{n}"), format!("{:?}", self.w_rec.shape())));
        }
        if self.w_out.cols() != n {
            return Err(Error::shape("w_out cols", n, self.w_out.cols()));
        }
        let (want_in, want_rec) = if cfg.n_dendrites == 0 {
            (0, 0)
        } else {
            (self.w_in.len(), self.w_rec.len())
        };
        if self.branch_in.len() != want_in {
            return Err(Error::shape("branch_in", want_in, self.branch_in.len()));
        }
        if self.branch_rec.len() != want_rec {
            return Err(Error::shape("branch_rec", want_rec, self.branch_rec.len()));
        }
        let d = cfg.n_dendrites as u8;
        if self.branch_in.iter().chain(&self.branch_rec).any(|&b| b >= d) {
            return Err(Error::InvalidArgument("branch index out of range".into()));
        }
        Ok(())
    }

    /// Dense per-branch view of the input weights (`W_in,d`), zero where the
    /// afferent belongs to another branch.
    pub fn branch_input_matrix(&self, branch: usize) -> Matrix {
        branch_view(&self.w_in, &self.branch_in, branch)
    }

    pub fn branch_recurrent_matrix(&self, branch: usize) -> Matrix {
        branch_view(&self.w_rec, &self.branch_rec, branch)
    }
}

fn branch_view(w: &Matrix, branches: &[u8], branch: usize) -> Matrix {
    let cols = w.cols();
    Matrix::from_fn(w.rows(), cols, |r, c| {
        if branches[r * cols + c] as usize == branch {
            w.get(r, c)
        } else {
            0.0
        }
    })
}

/// Per-neuron intrinsic property banks.
#[derive(Debug, Clone, PartialEq)]
pub struct IntrinsicProperties {
    pub n_dendrites: usize,
    /// Dendritic decay factors, index `neuron * n_dendrites + branch`.
    pub tau_d: Vec<f64>,
    /// Somatic decay factors.
    pub tau_s: Vec<f64>,
    /// Firing thresholds.
    pub theta: Vec<f64>,
}

impl IntrinsicProperties {
    pub fn uniform(n_neurons: usize, n_dendrites: usize, tau_d: f64, tau_s: f64, theta: f64) -> Self {
        Self {
            n_dendrites,
            tau_d: vec![tau_d; n_neurons * n_dendrites],
            tau_s: vec![tau_s; n_neurons],
            theta: vec![theta; n_neurons],
        }
    }

    pub fn n_neurons(&self) -> usize {
        self.tau_s.len()
    }

    pub fn validate(&self, cfg: &NetworkConfig) -> Result<()> {
        let n = cfg.n_neurons;
        if self.n_dendrites != cfg.n_dendrites {
            return Err(Error::shape("props.n_dendrites", cfg.n_dendrites, self.n_dendrites));
        }
        if self.tau_s.len() != n || self.theta.len() != n {
            return Err(Error::shape("props per-neuron banks", n, self.tau_s.len().max(self.theta.len())));
        }
        if self.tau_d.len() != n * cfg.n_dendrites {
            return Err(Error::shape("props.tau_d", n * cfg.n_dendrites, self.tau_d.len()));
        }
        Ok(())
    }

    /// Per-neuron dendritic decay, averaged over branches.
    pub fn tau_d_per_neuron(&self) -> Vec<f64> {
        if self.n_dendrites == 0 {
            return Vec::new();
        }
        self.tau_d
            .chunks(self.n_dendrites)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronState {
    pub v: Vec<f64>,
    /// Branch potentials, index `neuron * n_dendrites + branch`.
    pub v_d: Vec<f64>,
    pub noise: Vec<f64>,
    pub spikes: Vec<f64>,
    pub trace: Vec<f64>,
}

pub fn init_state(cfg: &NetworkConfig) -> NeuronState {
    let n = cfg.n_neurons;
    NeuronState {
        v: vec![cfg.v_reset; n],
        v_d: vec![0.0; n * cfg.n_dendrites],
        noise: vec![0.0; n],
        spikes: vec![0.0; n],
        trace: vec![0.0; n],
    }
}

pub fn noise_step(noise: &[f64], z: &[f64], cfg: &NetworkConfig) -> Vec<f64> {
    let gain = (2.0 * cfg.alpha_noise).sqrt() * cfg.a_noise;
    noise
        .iter()
        .zip(z)
        .map(|(n, z)| (1.0 - cfg.alpha_noise) * n + gain * z)
        .collect()
}

/// Accumulates the per-branch synaptic drive `W_in,d x + W_rec,d trace` into
/// `drive` (length `n * max(n_dendrites, 1)`).
fn accumulate_drive(weights: &NetworkWeights, x_in: &[f64], trace_prev: &[f64], drive: &mut [f64]) {
    let n = weights.n_neurons();
    let n_in = weights.n_inputs();
    let d = weights.n_dendrites;
    drive.fill(0.0);
    if d == 0 {
        for i in 0..n {
            let mut acc = 0.0;
            let wi = weights.w_in.row(i);
            for j in 0..n_in {
                acc += wi[j] * x_in[j];
            }
            let wr = weights.w_rec.row(i);
            for k in 0..n {
                acc += wr[k] * trace_prev[k];
            }
            drive[i] = acc;
        }
    } else {
        for i in 0..n {
            let out = &mut drive[i * d..(i + 1) * d];
            let wi = weights.w_in.row(i);
            let bi = &weights.branch_in[i * n_in..(i + 1) * n_in];
            for j in 0..n_in {
                out[bi[j] as usize] += wi[j] * x_in[j];
            }
            let wr = weights.w_rec.row(i);
            let br = &weights.branch_rec[i * n..(i + 1) * n];
            for k in 0..n {
                out[br[k] as usize] += wr[k] * trace_prev[k];
            }
        }
    }
}

fn check_step_shapes(weights: &NetworkWeights, x_in: &[f64], trace_prev: &[f64]) -> Result<()> {
    if x_in.len() != weights.n_inputs() {
        return Err(Error::shape("input vector", weights.n_inputs(), x_in.len()));
    }
    if trace_prev.len() != weights.n_neurons() {
        return Err(Error::shape("trace vector", weights.n_neurons(), trace_prev.len()));
    }
    Ok(())
}

/// Branch update. The result is both the new branch state and the soma's
/// dendritic input (summed over branches).
pub fn dendrite_step(
    v_d: &[f64],
    x_in: &[f64],
    trace_prev: &[f64],
    weights: &NetworkWeights,
    props: &IntrinsicProperties,
) -> Result<Vec<f64>> {
    if weights.n_dendrites == 0 {
        return Err(Error::InvalidArgument("dendrite_step requires n_dendrites > 0".into()));
    }
    check_step_shapes(weights, x_in, trace_prev)?;
    if v_d.len() != props.tau_d.len() || v_d.len() != weights.n_neurons() * weights.n_dendrites {
        return Err(Error::shape("dendritic state", props.tau_d.len(), v_d.len()));
    }
    let mut drive = vec![0.0; v_d.len()];
    accumulate_drive(weights, x_in, trace_prev, &mut drive);
    Ok(v_d
        .iter()
        .zip(&drive)
        .zip(&props.tau_d)
        .map(|((vd, u), tau)| tau * vd + (1.0 - tau) * u)
        .collect())
}

/// Point-mode synaptic drive `W_in x + W_rec trace`.
pub fn direct_drive(weights: &NetworkWeights, x_in: &[f64], trace_prev: &[f64]) -> Result<Vec<f64>> {
    if weights.n_dendrites != 0 {
        return Err(Error::InvalidArgument("direct_drive requires point mode".into()));
    }
    check_step_shapes(weights, x_in, trace_prev)?;
    let mut drive = vec![0.0; weights.n_neurons()];
    accumulate_drive(weights, x_in, trace_prev, &mut drive);
    Ok(drive)
}

/// Sums branch potentials into per-neuron dendritic drive.
pub fn sum_branches(v_d: &[f64], n_dendrites: usize) -> Vec<f64> {
    v_d.chunks(n_dendrites).map(|c| c.iter().sum()).collect()
}

#[inline]
fn soma_update(form: NoiseForm, tau_s: f64, v_prev: f64, drive: f64, noise: f64) -> f64 {
    match form {
        NoiseForm::Additive => tau_s * v_prev + (1.0 - tau_s) * drive + noise,
        NoiseForm::Scaled => tau_s * v_prev + (1.0 - tau_s) * (drive + noise),
    }
}

pub fn soma_step(v: &[f64], drive: &[f64], noise: &[f64], props: &IntrinsicProperties, cfg: &NetworkConfig) -> Vec<f64> {
    (0..v.len())
        .map(|i| soma_update(cfg.noise_form, props.tau_s[i], v[i], drive[i], noise[i]))
        .collect()
}

/// Hard threshold (`v >= theta` inclusive) followed by reset.
pub fn spike_and_reset(v: &[f64], props: &IntrinsicProperties, cfg: &NetworkConfig) -> (Vec<f64>, Vec<f64>) {
    let mut spikes = vec![0.0; v.len()];
    let mut after = v.to_vec();
    for i in 0..v.len() {
        if v[i] >= props.theta[i] {
            spikes[i] = 1.0;
            after[i] = cfg.v_reset;
        }
    }
    (spikes, after)
}

pub fn trace_step(trace: &[f64], spikes_prev: &[f64], cfg: &NetworkConfig) -> Vec<f64> {
    trace
        .iter()
        .zip(spikes_prev)
        .map(|(m, s)| cfg.alpha * m + (1.0 - cfg.alpha) * s)
        .collect()
}

pub fn readout(trace: &[f64], weights: &NetworkWeights) -> Vec<f64> {
    weights.w_out.matvec(trace)
}

/// Spike nonlinearity used in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpikeFn {
    /// Heaviside step, inclusive at threshold.
    Hard,
    /// `sigmoid((v - theta) / width)`; differentiable verification mode.
    Sigmoid { width: f64 },
}

impl SpikeFn {
    #[inline]
    pub fn eval(self, v: f64, theta: f64) -> f64 {
        match self {
            SpikeFn::Hard => {
                if v >= theta {
                    1.0
                } else {
                    0.0
                }
            }
            SpikeFn::Sigmoid { width } => sigmoid((v - theta) / width),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-call forward options.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions<'a> {
    pub spike_fn: SpikeFn,
    /// Seed of the noise stream; `None` forces `z = 0`.
    pub noise_seed: Option<u64>,
    /// Neurons whose spike output is clamped to zero.
    pub silenced: Option<&'a [bool]>,
}

impl ForwardOptions<'_> {
    /// Hard spikes, noise from `cfg.rng_seed` when `cfg.noise_enabled`.
    pub fn from_config(cfg: &NetworkConfig) -> Self {
        Self {
            spike_fn: SpikeFn::Hard,
            noise_seed: cfg.noise_enabled.then_some(cfg.rng_seed),
            silenced: None,
        }
    }

    pub fn noiseless() -> Self {
        Self {
            spike_fn: SpikeFn::Hard,
            noise_seed: None,
            silenced: None,
        }
    }
}

/// Per-timestep history of one trial. Row `t` of each matrix is the state
/// after step `t`; `v` is the post-reset potential.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecording {
    pub task_index: usize,
    pub trial_index: usize,
    pub v: Matrix,
    pub spikes: Matrix,
    pub trace: Matrix,
    pub output: Matrix,
}

impl TrialRecording {
    pub fn steps(&self) -> usize {
        self.v.rows()
    }
}

/// Intermediates kept for reverse-mode differentiation.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Pre-reset potential per step (`T x n`).
    pub v_pre: Matrix,
    /// Somatic input `sum_d V_d` (or the direct drive in point mode).
    pub soma_input: Matrix,
    /// Synaptic drive per branch, `T x (n * max(D, 1))`.
    pub syn_drive: Matrix,
    /// Branch potentials, `T x (n * D)`.
    pub v_d: Matrix,
    pub noise: Matrix,
    pub silenced: Option<Vec<bool>>,
}

fn check_forward(
    weights: &NetworkWeights,
    props: &IntrinsicProperties,
    cfg: &NetworkConfig,
    input: &Matrix,
    opts: &ForwardOptions,
) -> Result<()> {
    cfg.validate()?;
    weights.validate(cfg)?;
    props.validate(cfg)?;
    if input.cols() != weights.n_inputs() {
        return Err(Error::shape("input trial columns", weights.n_inputs(), input.cols()));
    }
    if let Some(mask) = opts.silenced {
        if mask.len() != cfg.n_neurons {
            return Err(Error::shape("silencing mask", cfg.n_neurons, mask.len()));
        }
    }
    if let SpikeFn::Sigmoid { width } = opts.spike_fn {
        if !(width > 0.0) {
            return Err(Error::InvalidArgument("sigmoid width must be > 0".into()));
        }
    }
    Ok(())
}

pub fn forward_trial(
    weights: &NetworkWeights,
    props: &IntrinsicProperties,
    cfg: &NetworkConfig,
    input: &Matrix,
) -> Result<TrialRecording> {
    forward_trial_with(weights, props, cfg, input, &ForwardOptions::from_config(cfg))
}

pub fn forward_trial_with(
    weights: &NetworkWeights,
    props: &IntrinsicProperties,
    cfg: &NetworkConfig,
    input: &Matrix,
    opts: &ForwardOptions,
) -> Result<TrialRecording> {
    Ok(run(weights, props, cfg, input, opts, false)?.0)
}

pub fn forward_trial_taped(
    weights: &NetworkWeights,
    props: &IntrinsicProperties,
    cfg: &NetworkConfig,
    input: &Matrix,
    opts: &ForwardOptions,
) -> Result<(TrialRecording, Tape)> {
    let (rec, tape) = run(weights, props, cfg, input, opts, true)?;
    Ok((rec, tape.expect("tape requested")))
}

fn run(
    weights: &NetworkWeights,
    props: &IntrinsicProperties,
    cfg: &NetworkConfig,
    input: &Matrix,
    opts: &ForwardOptions,
    keep_tape: bool,
) -> Result<(TrialRecording, Option<Tape>)> {
    check_forward(weights, props, cfg, input, opts)?;
    let n = cfg.n_neurons;
    let d = cfg.n_dendrites;
    let dd = d.max(1);
    let steps = input.rows();
    let n_out = weights.n_outputs();

    let mut state = init_state(cfg);
    let mut noise_rng = opts.noise_seed.map(|s| seed::rng(s, Stream::Noise, &[]));
    let noise_gain = (2.0 * cfg.alpha_noise).sqrt() * cfg.a_noise;

    let mut rec_v = Matrix::zeros(steps, n);
    let mut rec_s = Matrix::zeros(steps, n);
    let mut rec_m = Matrix::zeros(steps, n);
    let mut rec_y = Matrix::zeros(steps, n_out);
    let mut tape = keep_tape.then(|| Tape {
        v_pre: Matrix::zeros(steps, n),
        soma_input: Matrix::zeros(steps, n),
        syn_drive: Matrix::zeros(steps, n * dd),
        v_d: Matrix::zeros(steps, n * d),
        noise: Matrix::zeros(steps, n),
        silenced: opts.silenced.map(<[bool]>::to_vec),
    });

    let mut drive = vec![0.0; n * dd];
    let mut soma_in = vec![0.0; n];
    let mut prev_spikes = vec![0.0; n];

    for t in 0..steps {
        // 1. noise
        if let Some(rng) = noise_rng.as_mut() {
            for nz in state.noise.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *nz = (1.0 - cfg.alpha_noise) * *nz + noise_gain * z;
            }
        }
        // 2. synaptic drive from x(t) and S_mem(t-1), then branches
        accumulate_drive(weights, input.row(t), &state.trace, &mut drive);
        if d == 0 {
            soma_in.copy_from_slice(&drive);
        } else {
            for i in 0..n {
                let mut acc = 0.0;
                for b in 0..d {
                    let k = i * d + b;
                    let tau = props.tau_d[k];
                    state.v_d[k] = tau * state.v_d[k] + (1.0 - tau) * drive[k];
                    acc += state.v_d[k];
                }
                soma_in[i] = acc;
            }
        }
        // 3-4. soma, spike, reset
        for i in 0..n {
            let v_pre = soma_update(cfg.noise_form, props.tau_s[i], state.v[i], soma_in[i], state.noise[i]);
            let silenced = opts.silenced.is_some_and(|m| m[i]);
            let s = if silenced { 0.0 } else { opts.spike_fn.eval(v_pre, props.theta[i]) };
            state.v[i] = match opts.spike_fn {
                SpikeFn::Hard if s == 1.0 => cfg.v_reset,
                SpikeFn::Hard => v_pre,
                SpikeFn::Sigmoid { .. } => v_pre * (1.0 - s) + cfg.v_reset * s,
            };
            state.spikes[i] = s;
            if let Some(tp) = tape.as_mut() {
                tp.v_pre.set(t, i, v_pre);
            }
        }
        // 5. trace from the previous step's spikes
        for i in 0..n {
            state.trace[i] = cfg.alpha * state.trace[i] + (1.0 - cfg.alpha) * prev_spikes[i];
        }
        prev_spikes.copy_from_slice(&state.spikes);
        // 6. readout
        weights.w_out.matvec_into(&state.trace, rec_y.row_mut(t));

        rec_v.row_mut(t).copy_from_slice(&state.v);
        rec_s.row_mut(t).copy_from_slice(&state.spikes);
        rec_m.row_mut(t).copy_from_slice(&state.trace);
        if let Some(tp) = tape.as_mut() {
            tp.soma_input.row_mut(t).copy_from_slice(&soma_in);
            tp.syn_drive.row_mut(t).copy_from_slice(&drive);
            tp.v_d.row_mut(t).copy_from_slice(&state.v_d);
            tp.noise.row_mut(t).copy_from_slice(&state.noise);
        }
    }

    Ok((
        TrialRecording {
            task_index: 0,
            trial_index: 0,
            v: rec_v,
            spikes: rec_s,
            trace: rec_m,
            output: rec_y,
        },
        tape,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(n: usize, d: usize) -> NetworkConfig {
        NetworkConfig {
            n_neurons: n,
            n_dendrites: d,
            noise_enabled: false,
            ..NetworkConfig::default()
        }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn init_state_zero_and_reset_value() {
        let s = init_state(&cfg(4, 2));
        assert!(s.v.iter().chain(&s.v_d).chain(&s.noise).chain(&s.spikes).chain(&s.trace).all(|&x| x == 0.0));
        let c = NetworkConfig { v_reset: -0.2, ..cfg(1, 0) };
        assert_eq!(init_state(&c).v, vec![-0.2]);
        assert_eq!(init_state(&c), init_state(&c));
    }

    #[test]
    fn noise_step_hand_values() {
        let c = NetworkConfig::default();
        assert!(close(noise_step(&[0.2], &[1.0], &c)[0], 0.15));
        let silent = NetworkConfig { a_noise: 0.0, ..c };
        assert_eq!(noise_step(&[0.7], &[3.0], &silent), vec![0.5 * 0.7]);
    }

    fn one_neuron_weights(d: usize, w_in: f64) -> NetworkWeights {
        NetworkWeights {
            w_in: Matrix::from_vec(1, 1, vec![w_in]).unwrap(),
            w_rec: Matrix::zeros(1, 1),
            w_out: Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            branch_in: vec![0; if d > 0 { 1 } else { 0 }],
            branch_rec: vec![0; if d > 0 { 1 } else { 0 }],
            n_dendrites: d,
        }
    }

    #[test]
    fn dendrite_step_identities() {
        let w = one_neuron_weights(1, 2.0);
        let hold = IntrinsicProperties::uniform(1, 1, 1.0, 0.5, 1.0);
        assert_eq!(dendrite_step(&[0.3], &[1.0], &[0.0], &w, &hold).unwrap(), vec![0.3]);
        let memoryless = IntrinsicProperties::uniform(1, 1, 0.0, 0.5, 1.0);
        assert_eq!(dendrite_step(&[0.3], &[0.0], &[0.0], &w, &memoryless).unwrap(), vec![0.0]);
        let half = IntrinsicProperties::uniform(1, 1, 0.5, 0.5, 1.0);
        assert!(close(dendrite_step(&[1.0], &[1.0], &[0.0], &w, &half).unwrap()[0], 1.5));
        assert!(dendrite_step(&[1.0], &[1.0, 2.0], &[0.0], &w, &half).is_err());
    }

    #[test]
    fn soma_step_identities() {
        let c = cfg(1, 0);
        let p = |tau| IntrinsicProperties::uniform(1, 0, 0.0, tau, 1.0);
        assert_eq!(soma_step(&[0.4], &[9.0], &[0.0], &p(1.0), &c), vec![0.4]);
        assert_eq!(soma_step(&[0.4], &[9.0], &[0.0], &p(0.0), &c), vec![9.0]);
        assert!(close(soma_step(&[0.4], &[1.0], &[0.1], &p(0.5), &c)[0], 0.8));
        let scaled = NetworkConfig { noise_form: NoiseForm::Scaled, ..c };
        assert!(close(soma_step(&[0.4], &[1.0], &[0.1], &p(0.5), &scaled)[0], 0.75));
    }

    #[test]
    fn threshold_is_inclusive() {
        let c = cfg(3, 0);
        let p = IntrinsicProperties::uniform(3, 0, 0.0, 0.5, 0.5);
        let (s, v) = spike_and_reset(&[0.6, 0.5, 0.49], &p, &c);
        assert_eq!(s, vec![1.0, 1.0, 0.0]);
        assert_eq!(v, vec![0.0, 0.0, 0.49]);
    }

    #[test]
    fn trace_and_readout() {
        let c = cfg(1, 0);
        assert!(close(trace_step(&[0.0], &[1.0], &c)[0], 0.99));
        assert!(close(trace_step(&[0.4], &[0.0], &c)[0], 0.004));
        assert_eq!(trace_step(&[1.0], &[1.0], &c), vec![1.0]);
        let w = NetworkWeights {
            w_in: Matrix::zeros(2, 1),
            w_rec: Matrix::zeros(2, 2),
            w_out: Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap(),
            branch_in: vec![],
            branch_rec: vec![],
            n_dendrites: 0,
        };
        assert_eq!(readout(&[0.5, 0.25], &w), vec![1.0]);
        assert_eq!(readout(&[0.0, 0.0], &w), vec![0.0]);
    }

    #[test]
    fn dead_network_is_silent() {
        let c = cfg(5, 2);
        let mut w = NetworkWeights::init(&c, 3, 2);
        w.w_in.as_mut_slice().fill(0.0);
        w.w_rec.as_mut_slice().fill(0.0);
        let p = IntrinsicProperties::uniform(5, 2, 0.9, 0.9, 0.5);
        let x = Matrix::from_fn(20, 3, |t, j| (t + j) as f64);
        let rec = forward_trial(&w, &p, &c, &x).unwrap();
        assert!(rec.spikes.as_slice().iter().all(|&s| s == 0.0));
        assert!(rec.output.as_slice().iter().all(|&y| y == 0.0));
    }

    #[test]
    fn constant_suprathreshold_drive_fires_every_step() {
        let c = cfg(1, 0);
        let w = one_neuron_weights(0, 1.0);
        let p = IntrinsicProperties::uniform(1, 0, 0.0, 0.0, 0.5);
        let x = Matrix::from_vec(6, 1, vec![1.0; 6]).unwrap();
        let rec = forward_trial(&w, &p, &c, &x).unwrap();
        assert!(rec.spikes.as_slice().iter().all(|&s| s == 1.0));
        assert!(rec.v.as_slice().iter().all(|&v| v == c.v_reset));
        // trace lags spikes by one step
        assert_eq!(rec.trace.get(0, 0), 0.0);
        assert!(close(rec.trace.get(1, 0), 0.99));
        assert!(close(rec.trace.get(2, 0), 0.01 * 0.99 + 0.99));
    }

    #[test]
    fn noisy_forward_is_deterministic() {
        let c = NetworkConfig { noise_enabled: true, rng_seed: 11, ..cfg(6, 2) };
        let w = NetworkWeights::init(&c, 3, 2);
        let p = IntrinsicProperties::uniform(6, 2, 0.9, 0.9, 0.3);
        let x = Matrix::from_fn(30, 3, |t, j| ((t * 7 + j) % 5) as f64 * 0.3);
        let a = forward_trial(&w, &p, &c, &x).unwrap();
        let b = forward_trial(&w, &p, &c, &x).unwrap();
        assert_eq!(a, b);
        let other = NetworkConfig { rng_seed: 12, ..c.clone() };
        assert_ne!(a, forward_trial(&w, &p, &other, &x).unwrap());
    }

    #[test]
    fn shape_errors() {
        let c = cfg(3, 2);
        let w = NetworkWeights::init(&c, 2, 1);
        let p = IntrinsicProperties::uniform(3, 2, 0.5, 0.5, 1.0);
        assert!(forward_trial(&w, &p, &c, &Matrix::zeros(4, 5)).is_err());
        let bad_props = IntrinsicProperties::uniform(3, 1, 0.5, 0.5, 1.0);
        assert!(forward_trial(&w, &bad_props, &c, &Matrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn branch_views_partition_weights() {
        let c = cfg(4, 2);
        let w = NetworkWeights::init(&c, 3, 1);
        let a = w.branch_input_matrix(0);
        let b = w.branch_input_matrix(1);
        for k in 0..w.w_in.len() {
            let (x, y) = (a.as_slice()[k], b.as_slice()[k]);
            assert!(x == 0.0 || y == 0.0);
            assert_eq!(x + y, w.w_in.as_slice()[k]);
        }
    }

    #[test]
    fn ar1_noise_variance() {
        let c = NetworkConfig::default();
        let mut rng = seed::rng(3, Stream::Noise, &[]);
        let mut state = vec![0.0];
        let steps = 200_000;
        let mut acc = Vec::with_capacity(steps);
        for _ in 0..steps {
            let z: f64 = StandardNormal.sample(&mut rng);
            state = noise_step(&state, &[z], &c);
            acc.push(state[0]);
        }
        let var = crate::tensor::variance(&acc[100..]);
        let expected = 2.0 * 0.5 * 0.05f64.powi(2) / (1.0 - 0.25);
        assert!((var / expected - 1.0).abs() < 0.03, "var {var} vs {expected}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn invariants_hold(seed in 0u64..1000, d in 0usize..3, tau in 0.0f64..=1.0, theta in 0.1f64..2.0) {
            let c = NetworkConfig { noise_enabled: true, rng_seed: seed, ..cfg(7, d) };
            let w = NetworkWeights::init(&c, 3, 2);
            let p = IntrinsicProperties::uniform(7, d, tau, tau, theta);
            let x = Matrix::from_fn(25, 3, |t, j| ((t + seed as usize * j) % 3) as f64);
            let rec = forward_trial(&w, &p, &c, &x).unwrap();
            prop_assert_eq!(rec.steps(), 25);
            for (s, v) in rec.spikes.as_slice().iter().zip(rec.v.as_slice()) {
                prop_assert!(*s == 0.0 || *s == 1.0);
                if *s == 1.0 { prop_assert_eq!(*v, c.v_reset); }
            }
            prop_assert!(rec.trace.as_slice().iter().all(|m| (0.0..=1.0).contains(m)));
        }

        #[test]
        fn point_mode_equals_single_branch_with_zero_decay(seed in 0u64..1000) {
            let point = NetworkConfig { noise_enabled: true, rng_seed: seed, ..cfg(6, 0) };
            let branched = NetworkConfig { n_dendrites: 1, ..point.clone() };
            let w0 = NetworkWeights::init(&point, 3, 2);
            let w1 = NetworkWeights {
                branch_in: vec![0; w0.w_in.len()],
                branch_rec: vec![0; w0.w_rec.len()],
                n_dendrites: 1,
                ..w0.clone()
            };
            let mut p0 = IntrinsicProperties::uniform(6, 0, 0.0, 0.8, 0.4);
            p0.tau_s.iter_mut().enumerate().for_each(|(i, t)| *t = 0.5 + 0.05 * i as f64);
            let p1 = IntrinsicProperties { n_dendrites: 1, tau_d: vec![0.0; 6], ..p0.clone() };
            let x = Matrix::from_fn(30, 3, |t, j| ((t * 3 + j) % 4) as f64 * 0.5);
            let a = forward_trial(&w0, &p0, &point, &x).unwrap();
            let b = forward_trial(&w1, &p1, &branched, &x).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn unit_decays_freeze_state(v0 in -1.0f64..1.0, drive in -5.0f64..5.0) {
            let c = cfg(1, 0);
            let p = IntrinsicProperties::uniform(1, 0, 0.0, 1.0, 1.0);
            prop_assert_eq!(soma_step(&[v0], &[drive], &[0.0], &p, &c), vec![v0]);
            let w = one_neuron_weights(1, drive);
            let hold = IntrinsicProperties::uniform(1, 1, 1.0, 0.5, 1.0);
            prop_assert_eq!(dendrite_step(&[v0], &[1.0], &[0.5], &w, &hold).unwrap(), vec![v0]);
        }
    }
}
