use crate::error::{Error, Result};

/// When a task counts as learned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRule {
    pub threshold: f64,
    pub min_iters: usize,
    pub max_iters: usize,
}

impl ConvergenceRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) || self.max_iters == 0 || self.min_iters > self.max_iters {
            return Err(Error::InvalidArgument(format!("invalid convergence rule {self:?}")));
        }
        Ok(())
    }

    /// Iteration `iter` (1-based) with loss `loss` ends the task.
    pub fn declares(&self, iter: usize, loss: f64) -> bool {
        loss < self.threshold && iter >= self.min_iters
    }
}

/// One task's optimization, seen as a sequence of evaluate/update rounds.
pub trait InnerLoop {
    /// Loss at the current parameters for 1-based iteration `iter`.
    fn evaluate(&mut self, iter: usize) -> Result<f64>;
    /// Applies the update computed by the last `evaluate`.
    fn update(&mut self) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopResult {
    pub converged: bool,
    pub iterations_used: usize,
    pub final_loss: f64,
    /// Set when the loss became non-finite.
    pub diverged: bool,
}

/// Evaluates, stops if the rule declares convergence, else updates.
/// Parameters that achieved the declaring loss are left untouched.
pub fn drive(inner: &mut impl InnerLoop, rule: &ConvergenceRule) -> Result<LoopResult> {
    rule.validate()?;
    let mut last = f64::NAN;
    for iter in 1..=rule.max_iters {
        last = inner.evaluate(iter)?;
        if !last.is_finite() {
            return Ok(LoopResult {
                converged: false,
                iterations_used: rule.max_iters,
                final_loss: last,
                diverged: true,
            });
        }
        if rule.declares(iter, last) {
            return Ok(LoopResult {
                converged: true,
                iterations_used: iter,
                final_loss: last,
                diverged: false,
            });
        }
        if iter < rule.max_iters {
            inner.update()?;
        }
    }
    Ok(LoopResult {
        converged: false,
        iterations_used: rule.max_iters,
        final_loss: last,
        diverged: false,
    })
}
