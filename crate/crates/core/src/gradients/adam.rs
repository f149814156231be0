use serde::{Deserialize, Serialize};

use crate::container::{Container, Tensor};
use crate::error::{Error, Result};
use crate::plasticity::{self, ConfiguredProperties};
use crate::snn::NetworkWeights;

use super::{GradientSet, ParamGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UpdateRule {
    /// Adam with bias correction.
    #[default]
    Adam,
    /// `p <- p - lr * g`.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupLearningRates {
    pub w_in: f64,
    pub w_rec: f64,
    pub w_out: f64,
    pub tau_d: f64,
    pub tau_s: f64,
    pub theta: f64,
}

impl GroupLearningRates {
    pub fn uniform(lr: f64) -> Self {
        Self {
            w_in: lr,
            w_rec: lr,
            w_out: lr,
            tau_d: lr,
            tau_s: lr,
            theta: lr,
        }
    }

    pub fn get(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::WIn => self.w_in,
            ParamGroup::WRec => self.w_rec,
            ParamGroup::WOut => self.w_out,
            ParamGroup::TauD => self.tau_d,
            ParamGroup::TauS => self.tau_s,
            ParamGroup::Theta => self.theta,
        }
    }
}

impl Default for GroupLearningRates {
    fn default() -> Self {
        Self::uniform(0.01)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub rule: UpdateRule,
    pub lr: GroupLearningRates,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            rule: UpdateRule::Adam,
            lr: GroupLearningRates::default(),
            beta1: 0.1,
            beta2: 0.3,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr: GroupLearningRates::uniform(lr),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "optimizer betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("optimizer.eps must be > 0".into()));
        }
        for g in ParamGroup::ALL {
            let lr = self.lr.get(g);
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("optimizer.lr.{} must be >= 0, got {lr}", g.name())));
            }
        }
        Ok(())
    }
}

/// Optimizer state with one moment pair per parameter group; moment buffers
/// are allocated on first use.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: OptimizerConfig,
    pub step_count: u64,
    first: [Vec<f64>; 6],
    second: [Vec<f64>; 6],
}

impl AdamState {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step_count: 0,
            first: Default::default(),
            second: Default::default(),
        }
    }

    /// Starts a new optimizer step (bias correction uses the new count).
    pub fn advance(&mut self) {
        self.step_count += 1;
    }

    /// Updates one group in place using the current step count.
    pub fn update_group(&mut self, group: ParamGroup, values: &mut [f64], grads: &[f64]) -> Result<()> {
        if values.len() != grads.len() {
            return Err(Error::shape("optimizer group", values.len(), grads.len()));
        }
        let lr = self.config.lr.get(group);
        match self.config.rule {
            UpdateRule::Plain => {
                for (p, g) in values.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            UpdateRule::Adam => {
                if self.step_count == 0 {
                    return Err(Error::InvalidArgument("Adam update before advance()".into()));
                }
                let k = group.index();
                if self.first[k].len() != values.len() {
                    self.first[k] = vec![0.0; values.len()];
                    self.second[k] = vec![0.0; values.len()];
                }
                let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.eps);
                let t = self.step_count.min(i32::MAX as u64) as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                let (m, v) = (&mut self.first[k], &mut self.second[k]);
                for i in 0..values.len() {
                    let gi = grads[i];
                    m[i] = b1 * m[i] + (1.0 - b1) * gi;
                    v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }

    /// One optimizer step over weights and the learnable property groups.
    pub fn step(
        &mut self,
        weights: &mut NetworkWeights,
        configured: &mut ConfiguredProperties,
        grads: &GradientSet,
    ) -> Result<()> {
        self.advance();
        self.update_group(ParamGroup::WIn, weights.w_in.as_mut_slice(), grads.d_w_in.as_slice())?;
        self.update_group(ParamGroup::WRec, weights.w_rec.as_mut_slice(), grads.d_w_rec.as_slice())?;
        self.update_group(ParamGroup::WOut, weights.w_out.as_mut_slice(), grads.d_w_out.as_slice())?;
        plasticity::apply_update(configured, grads, self)
    }

    pub(crate) fn save_into(&self, c: &mut Container, prefix: &str) -> Result<()> {
        c.set_meta(&format!("{prefix}step_count"), self.step_count)?;
        for g in ParamGroup::ALL {
            let k = g.index();
            c.push(&format!("{prefix}m_{}", g.name()), Tensor::vector(self.first[k].clone()))?;
            c.push(&format!("{prefix}v_{}", g.name()), Tensor::vector(self.second[k].clone()))?;
        }
        Ok(())
    }

    pub(crate) fn load_from(config: OptimizerConfig, c: &Container, prefix: &str) -> Result<Self> {
        let mut s = Self::new(config);
        s.step_count = c.meta_parse(&format!("{prefix}step_count"))?;
        for g in ParamGroup::ALL {
            let k = g.index();
            s.first[k] = c.require(&format!("{prefix}m_{}", g.name()))?.data.clone();
            s.second[k] = c.require(&format!("{prefix}v_{}", g.name()))?.data.clone();
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut opt = AdamState::new(OptimizerConfig::with_lr(0.01));
        opt.advance();
        let mut p = vec![0.5];
        opt.update_group(ParamGroup::WIn, &mut p, &[1.0]).unwrap();
        // m_hat = v_hat = 1 after bias correction
        assert!((0.5 - p[0] - 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut opt = AdamState::new(OptimizerConfig::default());
        let mut p = vec![0.3, -0.7];
        for _ in 0..5 {
            opt.advance();
            opt.update_group(ParamGroup::WRec, &mut p, &[0.0, 0.0]).unwrap();
        }
        assert_eq!(p, vec![0.3, -0.7]);
    }

    #[test]
    fn per_group_learning_rates() {
        let mut cfg = OptimizerConfig::default();
        cfg.lr.w_in = 0.1;
        cfg.lr.w_out = 0.001;
        let mut opt = AdamState::new(cfg);
        opt.advance();
        let (mut a, mut b) = (vec![0.0], vec![0.0]);
        opt.update_group(ParamGroup::WIn, &mut a, &[2.0]).unwrap();
        opt.update_group(ParamGroup::WOut, &mut b, &[2.0]).unwrap();
        assert!((a[0] + 0.1).abs() < 1e-9);
        assert!((b[0] + 0.001).abs() < 1e-9);
    }

    #[test]
    fn hand_evaluated_second_step() {
        let mut opt = AdamState::new(OptimizerConfig::with_lr(0.01));
        let mut p = vec![0.0];
        opt.advance();
        opt.update_group(ParamGroup::Theta, &mut p, &[1.0]).unwrap();
        opt.advance();
        opt.update_group(ParamGroup::Theta, &mut p, &[-2.0]).unwrap();
        // m2 = 0.1*0.9 + 0.9*(-2) = -1.71, v2 = 0.3*0.7 + 0.7*4 = 3.01
        let m_hat = -1.71 / (1.0 - 0.01);
        let v_hat = 3.01 / (1.0 - 0.09);
        let expected = -0.01 / (1.0 + 1e-8) - 0.01 * m_hat / (f64::sqrt(v_hat) + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        let bad = OptimizerConfig {
            beta1: 1.0,
            ..OptimizerConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
