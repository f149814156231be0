use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Result of training on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_index: u64,
    pub converged: bool,
    pub iterations_used: usize,
    pub final_loss: f64,
    /// Mean squared trace activity of the last iteration.
    pub mean_h2: f64,
    pub wall_time_s: f64,
}

pub const EFFICIENCY_WINDOWS: [usize; 4] = [50, 100, 150, 200];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2LMetrics {
    pub tasks_run: usize,
    pub failure_count: usize,
    /// `(task_index, iterations)` for converged tasks.
    pub adaptation_speed: Vec<(u64, usize)>,
    /// Mean iterations over the last `k` tasks, failures counted at their
    /// full budget; `None` when fewer than `k` tasks ran.
    pub final_efficiency: BTreeMap<usize, Option<f64>>,
}

impl L2LMetrics {
    pub fn final_efficiency(&self, k: usize) -> Option<f64> {
        self.final_efficiency.get(&k).copied().flatten()
    }
}

pub fn final_efficiency(outcomes: &[TaskOutcome], k: usize) -> Option<f64> {
    if k == 0 || outcomes.len() < k {
        return None;
    }
    let tail = &outcomes[outcomes.len() - k..];
    Some(tail.iter().map(|o| o.iterations_used as f64).sum::<f64>() / k as f64)
}

pub fn compute_metrics(outcomes: &[TaskOutcome]) -> Result<L2LMetrics> {
    if outcomes.is_empty() {
        return Err(Error::InvalidArgument("no task outcomes to summarize".into()));
    }
    Ok(L2LMetrics {
        tasks_run: outcomes.len(),
        failure_count: outcomes.iter().filter(|o| !o.converged).count(),
        adaptation_speed: outcomes
            .iter()
            .filter(|o| o.converged)
            .map(|o| (o.task_index, o.iterations_used))
            .collect(),
        final_efficiency: EFFICIENCY_WINDOWS
            .iter()
            .map(|&k| (k, final_efficiency(outcomes, k)))
            .collect(),
    })
}

pub const METRICS_HEADER: &str = "task_index,converged,iterations,final_loss,mean_h2";

pub fn metrics_csv_row(o: &TaskOutcome) -> String {
    format!(
        "{},{},{},{},{}",
        o.task_index, o.converged as u8, o.iterations_used, o.final_loss, o.mean_h2
    )
}

pub fn metrics_csv(outcomes: &[TaskOutcome]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for o in outcomes {
        let _ = writeln!(s, "{}", metrics_csv_row(o));
    }
    s
}

/// Parses a `metrics.csv` written by [`metrics_csv`]; wall time is not stored.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<TaskOutcome>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == METRICS_HEADER => {}
        other => return Err(Error::Format(format!("unexpected metrics header {other:?}"))),
    }
    let bad = |line: &str| Error::Format(format!("bad metrics row `{line}`"));
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(line));
            }
            Ok(TaskOutcome {
                task_index: f[0].parse().map_err(|_| bad(line))?,
                converged: match f[1] {
                    "1" => true,
                    "0" => false,
                    _ => return Err(bad(line)),
                },
                iterations_used: f[2].parse().map_err(|_| bad(line))?,
                final_loss: f[3].parse().map_err(|_| bad(line))?,
                mean_h2: f[4].parse().map_err(|_| bad(line))?,
                wall_time_s: 0.0,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(i: u64, converged: bool, iters: usize) -> TaskOutcome {
        TaskOutcome {
            task_index: i,
            converged,
            iterations_used: iters,
            final_loss: 0.001 * i as f64,
            mean_h2: 0.25,
            wall_time_s: 1.5,
        }
    }

    #[test]
    fn all_converged_at_floor() {
        let outs: Vec<_> = (0..200).map(|i| outcome(i, true, 50)).collect();
        let m = compute_metrics(&outs).unwrap();
        assert_eq!(m.failure_count, 0);
        for k in EFFICIENCY_WINDOWS {
            assert_eq!(m.final_efficiency(k), Some(50.0));
        }
        assert_eq!(m.adaptation_speed.len(), 200);
    }

    #[test]
    fn failure_then_two_successes() {
        let outs = vec![outcome(0, false, 5000), outcome(1, true, 100), outcome(2, true, 200)];
        let m = compute_metrics(&outs).unwrap();
        assert_eq!(m.failure_count, 1);
        assert_eq!(final_efficiency(&outs, 2), Some(150.0));
        assert_eq!(m.final_efficiency(50), None);
        assert_eq!(m.adaptation_speed, vec![(1, 100), (2, 200)]);
    }

    #[test]
    fn empty_outcomes_are_an_error() {
        assert!(compute_metrics(&[]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let outs = vec![outcome(0, false, 5000), outcome(1, true, 73)];
        let back = parse_metrics_csv(&metrics_csv(&outs)).unwrap();
        for (a, b) in outs.iter().zip(&back) {
            assert_eq!(a.task_index, b.task_index);
            assert_eq!(a.converged, b.converged);
            assert_eq!(a.iterations_used, b.iterations_used);
            assert_eq!(a.final_loss.to_bits(), b.final_loss.to_bits());
        }
        assert!(parse_metrics_csv("nope\n").is_err());
    }
}
