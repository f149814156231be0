//! Composite training loss: base term, homeostatic term and weight
//! regularizers, plus the derivative of the base term with respect to the
//! network output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::snn::{NetworkWeights, TrialRecording};
use crate::tasks::PeriodSchedule;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Softmax cross-entropy on the response channels during the response
    /// period plus squared error on the fixation channel before it.
    Ce,
    /// Mean squared error over every step and channel.
    Mse,
}

/// How per-trial base losses combine into the task loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TrialReduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_h: f64,
    pub lambda_in: f64,
    pub lambda_rec: f64,
    pub lambda_out: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_h: 0.0005,
            lambda_in: 0.001,
            lambda_rec: 0.0001,
            lambda_out: 0.1,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            lambda_h: 0.0,
            lambda_in: 0.0,
            lambda_rec: 0.0,
            lambda_out: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_h", self.lambda_h),
            ("lambda_in", self.lambda_in),
            ("lambda_rec", self.lambda_rec),
            ("lambda_out", self.lambda_out),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss.{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Target mean squared hidden activity; zero until the first task finishes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HomeostaticTarget {
    pub sigma_h_sq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub base: f64,
    pub homeostatic: f64,
    pub reg_in: f64,
    pub reg_rec: f64,
    pub reg_out: f64,
    pub total: f64,
}

fn check_output(output: &Matrix, target: &Matrix) -> Result<()> {
    if output.shape() != target.shape() {
        return Err(Error::shape(
            "output vs target",
            format!("{:?}", target.shape()),
            format!("{:?}", output.shape()),
        ));
    }
    Ok(())
}

fn check_schedule(target: &Matrix, schedule: &PeriodSchedule, kind: LossKind) -> Result<()> {
    if kind == LossKind::Ce {
        if target.rows() != schedule.total() {
            return Err(Error::shape("trial length vs schedule", schedule.total(), target.rows()));
        }
        if target.cols() < 2 {
            return Err(Error::shape("CE output channels", ">= 2", target.cols()));
        }
    }
    Ok(())
}

/// Base loss of a single trial and its derivative with respect to the output.
pub fn trial_base_loss(
    output: &Matrix,
    target: &Matrix,
    kind: LossKind,
    schedule: &PeriodSchedule,
) -> Result<(f64, Matrix)> {
    check_output(output, target)?;
    check_schedule(target, schedule, kind)?;
    let (steps, ch) = output.shape();
    let mut grad = Matrix::zeros(steps, ch);
    match kind {
        LossKind::Mse => {
            let denom = (steps * ch) as f64;
            let mut acc = 0.0;
            for t in 0..steps {
                for c in 0..ch {
                    let e = output.get(t, c) - target.get(t, c);
                    acc += e * e;
                    grad.set(t, c, 2.0 * e / denom);
                }
            }
            Ok((acc / denom, grad))
        }
        LossKind::Ce => {
            let n_resp = ch - 1;
            let fix = ch - 1;
            let resp = schedule.response_range();
            let pre = 0..schedule.response_start();
            let mut ce = 0.0;
            let rn = resp.len() as f64;
            for t in resp.clone() {
                let y = &output.row(t)[..n_resp];
                let label = argmax(&target.row(t)[..n_resp]);
                let mx = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = y.iter().map(|v| (v - mx).exp()).sum();
                ce += mx + z.ln() - y[label];
                for (c, v) in y.iter().enumerate() {
                    let p = (v - mx).exp() / z;
                    let onehot = if c == label { 1.0 } else { 0.0 };
                    grad.set(t, c, (p - onehot) / rn);
                }
            }
            let mut fix_err = 0.0;
            let pn = pre.len() as f64;
            for t in pre {
                let e = output.get(t, fix) - target.get(t, fix);
                fix_err += e * e;
                grad.set(t, fix, 2.0 * e / pn);
            }
            Ok((ce / rn + fix_err / pn, grad))
        }
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Base loss over all trials of a task.
pub fn base_loss(
    recordings: &[TrialRecording],
    targets: &[Matrix],
    kind: LossKind,
    schedule: &PeriodSchedule,
    reduction: TrialReduction,
) -> Result<f64> {
    if recordings.len() != targets.len() || recordings.is_empty() {
        return Err(Error::shape("trial count", targets.len(), recordings.len()));
    }
    let mut total = 0.0;
    for (r, y) in recordings.iter().zip(targets) {
        total += trial_base_loss(&r.output, y, kind, schedule)?.0;
    }
    Ok(match reduction {
        TrialReduction::Mean => total / recordings.len() as f64,
        TrialReduction::Sum => total,
    })
}

/// Mean of `h^2` pooled over units, timesteps and trials, where `h` is the
/// spike trace.
pub fn mean_square_activity(recordings: &[TrialRecording]) -> f64 {
    let (sum, count) = recordings.iter().fold((0.0, 0usize), |(s, c), r| {
        (s + r.trace.as_slice().iter().map(|h| h * h).sum::<f64>(), c + r.trace.len())
    });
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

pub fn homeostatic_loss(mean_h2: f64, target: HomeostaticTarget) -> f64 {
    (mean_h2 - target.sigma_h_sq).abs()
}

pub fn weight_regularizer(w: &Matrix) -> f64 {
    w.mean_square()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub base: f64,
    pub homeostatic: f64,
    pub reg_in: f64,
    pub reg_rec: f64,
    pub reg_out: f64,
}

impl LossTerms {
    pub fn from_weights(base: f64, homeostatic: f64, weights: &NetworkWeights) -> Self {
        Self {
            base,
            homeostatic,
            reg_in: weight_regularizer(&weights.w_in),
            reg_rec: weight_regularizer(&weights.w_rec),
            reg_out: weight_regularizer(&weights.w_out),
        }
    }
}

pub fn total_loss(terms: LossTerms, w: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        base: terms.base,
        homeostatic: terms.homeostatic,
        reg_in: terms.reg_in,
        reg_rec: terms.reg_rec,
        reg_out: terms.reg_out,
        total: terms.base
            + w.lambda_h * terms.homeostatic
            + w.lambda_in * terms.reg_in
            + w.lambda_rec * terms.reg_rec
            + w.lambda_out * terms.reg_out,
    }
}

/// Next task's target: the mean squared activity observed on the previous
/// task's last training iteration.
pub fn update_homeostatic_target(_previous: HomeostaticTarget, last_task_mean_h2: f64) -> HomeostaticTarget {
    HomeostaticTarget {
        sigma_h_sq: last_task_mean_h2.max(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sched() -> PeriodSchedule {
        PeriodSchedule::new(2, 3, 2).unwrap()
    }

    #[test]
    fn mse_values() {
        let s = sched();
        let y = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let t = Matrix::zeros(1, 2);
        assert_eq!(trial_base_loss(&y, &t, LossKind::Mse, &s).unwrap().0, 0.5);
        assert_eq!(trial_base_loss(&y, &y, LossKind::Mse, &s).unwrap().0, 0.0);
    }

    #[test]
    fn ce_uniform_logits_give_ln2() {
        let s = sched();
        // 3 channels: 2 response + fixation; fixation already correct
        let mut target = Matrix::zeros(7, 3);
        let mut out = Matrix::zeros(7, 3);
        for t in 0..5 {
            target.set(t, 2, 1.0);
            out.set(t, 2, 1.0);
        }
        for t in 5..7 {
            target.set(t, 0, 1.0);
        }
        let (l, _) = trial_base_loss(&out, &target, LossKind::Ce, &s).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn ce_decreases_with_correct_logit() {
        let s = sched();
        let mut target = Matrix::zeros(7, 3);
        for t in 5..7 {
            target.set(t, 1, 1.0);
        }
        let mut last = f64::INFINITY;
        for k in 0..30 {
            let mut out = Matrix::zeros(7, 3);
            for t in 5..7 {
                out.set(t, 1, k as f64);
            }
            // fixation channel is off-target by 1 before the response
            let (l, _) = trial_base_loss(&out, &target, LossKind::Ce, &s).unwrap();
            assert!(l < last);
            last = l;
        }
        assert!(last < 1e-11);
    }

    #[test]
    fn shape_mismatch() {
        let s = sched();
        let e = trial_base_loss(&Matrix::zeros(7, 3), &Matrix::zeros(7, 2), LossKind::Mse, &s);
        assert!(e.is_err());
        let e = trial_base_loss(&Matrix::zeros(6, 3), &Matrix::zeros(6, 3), LossKind::Ce, &s);
        assert!(e.is_err());
    }

    #[test]
    fn homeostatic_and_regularizers() {
        let t0 = HomeostaticTarget::default();
        assert_eq!(homeostatic_loss(0.0, t0), 0.0);
        assert_eq!(homeostatic_loss(1.0, t0), 1.0);
        assert_eq!(homeostatic_loss(0.3, HomeostaticTarget { sigma_h_sq: 0.3 }), 0.0);
        assert_eq!(weight_regularizer(&Matrix::zeros(2, 3)), 0.0);
        let w = Matrix::from_rows(&[vec![1.0, -1.0], vec![1.0, -1.0]]).unwrap();
        assert_eq!(weight_regularizer(&w), 1.0);
    }

    #[test]
    fn totals() {
        let unit = LossTerms {
            base: 1.0,
            homeostatic: 1.0,
            reg_in: 1.0,
            reg_rec: 1.0,
            reg_out: 1.0,
        };
        assert_eq!(total_loss(LossTerms { base: 0.7, ..unit }, &LossWeights::zero()).total, 0.7);
        let w = LossWeights {
            lambda_h: 0.1,
            lambda_in: 0.2,
            lambda_rec: 0.3,
            lambda_out: 0.4,
        };
        assert!((total_loss(unit, &w).total - 2.0).abs() < 1e-15);
        let table = total_loss(unit, &LossWeights::default()).total;
        assert!((table - (1.0 + 0.0005 + 0.001 + 0.0001 + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn homeostatic_target_updates() {
        let t = HomeostaticTarget::default();
        assert_eq!(t.sigma_h_sq, 0.0);
        let t1 = update_homeostatic_target(t, 0.04);
        assert_eq!(t1.sigma_h_sq, 0.04);
        assert_eq!(update_homeostatic_target(t1, 0.04), t1);
    }

    proptest! {
        #[test]
        fn total_is_affine_in_each_term(base in 0.0f64..2.0, x in 0.0f64..3.0, dx in 0.0f64..1.0, lam in 0.0f64..1.0) {
            let w = LossWeights { lambda_h: lam, lambda_in: lam, lambda_rec: lam, lambda_out: lam };
            let terms = LossTerms { base, homeostatic: x, reg_in: x, reg_rec: x, reg_out: x };
            let t0 = total_loss(terms, &w).total;
            let t1 = total_loss(LossTerms { reg_rec: x + dx, ..terms }, &w).total;
            prop_assert!((t1 - t0 - lam * dx).abs() < 1e-12);
        }

        #[test]
        fn homeostatic_is_nonnegative(m in 0.0f64..5.0, s in 0.0f64..5.0) {
            let target = HomeostaticTarget { sigma_h_sq: s };
            prop_assert!(homeostatic_loss(m, target) >= 0.0);
        }

        #[test]
        fn regularizer_is_quadratic(c in -5.0f64..5.0) {
            let w = Matrix::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.1]]).unwrap();
            let scaled = Matrix::from_fn(2, 2, |r, k| c * w.get(r, k));
            prop_assert!((weight_regularizer(&scaled) - c * c * weight_regularizer(&w)).abs() < 1e-12);
        }
    }
}
