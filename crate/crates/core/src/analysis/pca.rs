use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::snn::TrialRecording;
use crate::tasks::PeriodSchedule;
use crate::tensor::{median, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaEmbedding {
    /// `n_features x k`, orthonormal columns by decreasing variance.
    pub basis: Matrix,
    pub explained_variance: Vec<f64>,
    pub center: Vec<f64>,
    /// `(task_index, coordinates)` of each task's delay-period mean.
    pub task_means: Vec<(u64, Vec<f64>)>,
    /// Distance between consecutive task means in the leading two components.
    pub step_sizes: Vec<f64>,
    pub median_step: Option<f64>,
    /// Summed variance of the task means across tasks.
    pub ensemble_variance: f64,
}

fn delay_rows<'a>(recs: &'a [TrialRecording], schedule: &PeriodSchedule) -> impl Iterator<Item = &'a [f64]> + 'a {
    let range = schedule.delay_range();
    recs.iter().flat_map(move |r| range.clone().map(move |t| r.trace.row(t)))
}

/// PCA of delay-period trace activity pooled over every task and trial.
pub fn pca_delay(
    tasks: &[(u64, Vec<TrialRecording>)],
    schedule: &PeriodSchedule,
    n_components: usize,
) -> Result<PcaEmbedding> {
    let n = tasks
        .iter()
        .flat_map(|(_, r)| r.first())
        .map(|r| r.trace.cols())
        .next()
        .ok_or_else(|| Error::InvalidArgument("PCA needs at least one recording".into()))?;
    if n_components == 0 || n_components > n {
        return Err(Error::InvalidArgument(format!("cannot take {n_components} components of {n} features")));
    }
    for (_, recs) in tasks {
        for r in recs {
            if r.trace.cols() != n || r.steps() < schedule.response_start() {
                return Err(Error::shape(
                    "recording for PCA",
                    format!(">={}x{n}", schedule.response_start()),
                    format!("{:?}", r.trace.shape()),
                ));
            }
        }
    }

    let mut center = vec![0.0; n];
    let mut count = 0usize;
    for (_, recs) in tasks {
        for row in delay_rows(recs, schedule) {
            center.iter_mut().zip(row).for_each(|(c, x)| *c += x);
            count += 1;
        }
    }
    if count < 2 {
        return Err(Error::InvalidArgument("PCA needs at least two samples".into()));
    }
    center.iter_mut().for_each(|c| *c /= count as f64);

    let mut cov = DMatrix::<f64>::zeros(n, n);
    let mut centered = vec![0.0; n];
    for (_, recs) in tasks {
        for row in delay_rows(recs, schedule) {
            for i in 0..n {
                centered[i] = row[i] - center[i];
            }
            for i in 0..n {
                let ci = centered[i];
                if ci == 0.0 {
                    continue;
                }
                for j in i..n {
                    cov[(i, j)] += ci * centered[j];
                }
            }
        }
    }
    for i in 0..n {
        for j in i..n {
            let v = cov[(i, j)] / (count - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let k = n_components;
    let mut basis = Matrix::zeros(n, k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let col = eig.eigenvectors.column(idx);
        // sign convention: largest-magnitude entry positive
        let pivot = (0..n).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs())).unwrap_or(0);
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            basis.set(i, c, sign * col[i]);
        }
    }
    let explained_variance = order.iter().take(k).map(|&i| eig.eigenvalues[i].max(0.0)).collect();

    let project = |x: &[f64]| -> Vec<f64> {
        (0..k)
            .map(|c| (0..n).map(|i| (x[i] - center[i]) * basis.get(i, c)).sum())
            .collect()
    };
    let mut task_means = Vec::with_capacity(tasks.len());
    for (idx, recs) in tasks {
        let mut mean = vec![0.0; n];
        let mut m = 0usize;
        for row in delay_rows(recs, schedule) {
            mean.iter_mut().zip(row).for_each(|(a, x)| *a += x);
            m += 1;
        }
        if m == 0 {
            return Err(Error::InvalidArgument(format!("task {idx} has no recordings")));
        }
        mean.iter_mut().for_each(|a| *a /= m as f64);
        task_means.push((*idx, project(&mean)));
    }
    let plane = k.min(2);
    let step_sizes: Vec<f64> = task_means
        .windows(2)
        .map(|w| {
            (0..plane)
                .map(|c| (w[1].1[c] - w[0].1[c]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let ensemble_variance = (0..k)
        .map(|c| {
            let xs: Vec<f64> = task_means.iter().map(|(_, m)| m[c]).collect();
            crate::tensor::variance(&xs)
        })
        .sum();
    Ok(PcaEmbedding {
        basis,
        explained_variance,
        center,
        median_step: median(&step_sizes),
        task_means,
        step_sizes,
        ensemble_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(trace: Matrix) -> TrialRecording {
        let (t, n) = trace.shape();
        TrialRecording {
            task_index: 0,
            trial_index: 0,
            v: Matrix::zeros(t, n),
            spikes: Matrix::zeros(t, n),
            output: Matrix::zeros(t, 1),
            trace,
        }
    }

    fn schedule() -> PeriodSchedule {
        PeriodSchedule::new(2, 6, 2).unwrap()
    }

    #[test]
    fn identical_tasks_have_zero_steps() {
        let trace = Matrix::from_fn(10, 4, |t, i| ((t * 3 + i) % 5) as f64);
        let tasks: Vec<_> = (0..3).map(|i| (i, vec![rec(trace.clone())])).collect();
        let e = pca_delay(&tasks, &schedule(), 2).unwrap();
        assert!(e.step_sizes.iter().all(|&s| s.abs() < 1e-12));
        assert_eq!(e.step_sizes.len(), 2);
    }

    #[test]
    fn basis_is_orthonormal() {
        let tasks: Vec<_> = (0..4)
            .map(|k| (k, vec![rec(Matrix::from_fn(10, 5, |t, i| ((t + 1) as f64 * (i + k as usize + 1) as f64).sin()))]))
            .collect();
        let e = pca_delay(&tasks, &schedule(), 3).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..5).map(|i| e.basis.get(i, a) * e.basis.get(i, b)).sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-10);
            }
        }
        assert!(e.explained_variance.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn two_task_distance() {
        // delay rows at (0, 0) for task 0 and (3, 4) for task 1
        let a = Matrix::zeros(10, 2);
        let b = Matrix::from_fn(10, 2, |_, i| if i == 0 { 3.0 } else { 4.0 });
        let e = pca_delay(&[(0, vec![rec(a)]), (1, vec![rec(b)])], &schedule(), 2).unwrap();
        assert!((e.step_sizes[0] - 5.0).abs() < 1e-9);
        assert_eq!(e.median_step.map(|m| (m - 5.0).abs() < 1e-9), Some(true));
    }

    #[test]
    fn rejects_bad_requests() {
        assert!(pca_delay(&[], &schedule(), 1).is_err());
        let tasks = vec![(0, vec![rec(Matrix::zeros(10, 2))])];
        assert!(pca_delay(&tasks, &schedule(), 3).is_err());
    }
}
