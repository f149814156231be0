use crate::error::{Error, Result};
use crate::snn::{IntrinsicProperties, NetworkConfig, NetworkWeights, NoiseForm, Tape, TrialRecording};
use crate::tensor::Matrix;

use super::{DifferentiationMode, GradientSet, ResetGradient};

/// Loss sensitivities entering the network from outside.
#[derive(Debug, Clone)]
pub struct Upstream {
    /// `dL/dy(t)`, shaped like the recorded output.
    pub d_output: Matrix,
    /// Extra `dL/dS_mem(t) = trace_coef * S_mem(t)` (homeostatic term).
    pub trace_coef: f64,
}

/// Backpropagation through time for one trial.
///
/// Walks the recorded trajectory backwards, carrying the adjoints of the
/// four recurrent quantities (trace, last spikes, post-reset potential and
/// branch potentials) from step `t + 1` into step `t`.
#[allow(clippy::too_many_arguments)]
pub fn backward_trial(
    weights: &NetworkWeights,
    props: &IntrinsicProperties,
    cfg: &NetworkConfig,
    input: &Matrix,
    rec: &TrialRecording,
    tape: &Tape,
    upstream: &Upstream,
    mode: &DifferentiationMode,
) -> Result<GradientSet> {
    let n = cfg.n_neurons;
    let d = cfg.n_dendrites;
    let dd = d.max(1);
    let n_in = weights.n_inputs();
    let n_out = weights.n_outputs();
    let steps = rec.steps();
    if upstream.d_output.shape() != (steps, n_out) {
        return Err(Error::shape(
            "upstream output gradient",
            format!("{steps}x{n_out}"),
            format!("{:?}", upstream.d_output.shape()),
        ));
    }
    if input.shape() != (steps, n_in) {
        return Err(Error::shape("backward input", format!("{steps}x{n_in}"), format!("{:?}", input.shape())));
    }

    let alpha = cfg.alpha;
    let mut g = GradientSet::zeros_like(weights, props);

    let mut carry_m = vec![0.0; n];
    let mut carry_s = vec![0.0; n];
    let mut carry_vr = vec![0.0; n];
    let mut carry_vd = vec![0.0; n * d];

    let mut g_m = vec![0.0; n];
    let mut g_u = vec![0.0; n * dd];
    let mut next_m = vec![0.0; n];
    let zeros = vec![0.0; n * dd];
    let reset_vec = vec![cfg.v_reset; n];

    for t in (0..steps).rev() {
        let m_t = rec.trace.row(t);
        let s_t = rec.spikes.row(t);
        let v_pre = tape.v_pre.row(t);
        let soma_in = tape.soma_input.row(t);
        let noise = tape.noise.row(t);
        let u_t = tape.syn_drive.row(t);
        let (vr_prev, m_prev, vd_prev) = if t > 0 {
            (rec.v.row(t - 1), rec.trace.row(t - 1), tape.v_d.row(t - 1))
        } else {
            (&reset_vec[..], &zeros[..n], &zeros[..n * d])
        };

        // readout and homeostatic term
        let dy = upstream.d_output.row(t);
        for i in 0..n {
            g_m[i] = carry_m[i] + upstream.trace_coef * m_t[i];
        }
        for o in 0..n_out {
            let dyo = dy[o];
            if dyo == 0.0 {
                continue;
            }
            let w_row = weights.w_out.row(o);
            let gw_row = g.d_w_out.row_mut(o);
            for i in 0..n {
                g_m[i] += w_row[i] * dyo;
                gw_row[i] += dyo * m_t[i];
            }
        }

        // trace recursion: M(t) = a M(t-1) + (1 - a) S(t-1)
        for i in 0..n {
            next_m[i] = alpha * g_m[i];
        }

        for i in 0..n {
            let s = s_t[i];
            let silenced = tape.silenced.as_ref().is_some_and(|m| m[i]);
            let g_vr = carry_vr[i];
            let mut g_s = carry_s[i];
            let mut g_v = g_vr * (1.0 - s);
            if mode.reset == ResetGradient::PassThrough {
                g_s += g_vr * (cfg.v_reset - v_pre[i]);
            }
            if !silenced {
                let fp = mode.spike_derivative(v_pre[i], props.theta[i]);
                g_v += g_s * fp;
                g.d_theta[i] -= g_s * fp;
            }

            let tau_s = props.tau_s[i];
            let leak_ref = match cfg.noise_form {
                NoiseForm::Additive => soma_in[i],
                NoiseForm::Scaled => soma_in[i] + noise[i],
            };
            g.d_tau_s[i] += g_v * (vr_prev[i] - leak_ref);
            carry_vr[i] = tau_s * g_v;
            let g_in = (1.0 - tau_s) * g_v;

            if d == 0 {
                g_u[i] = g_in;
            } else {
                for b in 0..d {
                    let k = i * d + b;
                    let tau = props.tau_d[k];
                    let g_vd = carry_vd[k] + g_in;
                    g.d_tau_d[k] += g_vd * (vd_prev[k] - u_t[k]);
                    carry_vd[k] = tau * g_vd;
                    g_u[k] = (1.0 - tau) * g_vd;
                }
            }
            carry_s[i] = (1.0 - alpha) * g_m[i];
        }

        // synapses: u_d(t) = W_in,d x(t) + W_rec,d M(t-1)
        let x = input.row(t);
        for i in 0..n {
            let gw_in = g.d_w_in.row_mut(i);
            if d == 0 {
                let gu = g_u[i];
                if gu != 0.0 {
                    for j in 0..n_in {
                        gw_in[j] += gu * x[j];
                    }
                }
            } else {
                let bi = &weights.branch_in[i * n_in..(i + 1) * n_in];
                for j in 0..n_in {
                    gw_in[j] += g_u[i * d + bi[j] as usize] * x[j];
                }
            }
        }
        for i in 0..n {
            let w_row = weights.w_rec.row(i);
            let gw_row = g.d_w_rec.row_mut(i);
            if d == 0 {
                let gu = g_u[i];
                if gu == 0.0 {
                    continue;
                }
                for k in 0..n {
                    gw_row[k] += gu * m_prev[k];
                    next_m[k] += gu * w_row[k];
                }
            } else {
                let br = &weights.branch_rec[i * n..(i + 1) * n];
                let gu = &g_u[i * d..(i + 1) * d];
                for k in 0..n {
                    let gk = gu[br[k] as usize];
                    gw_row[k] += gk * m_prev[k];
                    next_m[k] += gk * w_row[k];
                }
            }
        }
        std::mem::swap(&mut carry_m, &mut next_m);
    }
    Ok(g)
}
