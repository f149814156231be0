use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::plasticity::LearningMask;

use super::{run_family, ExperimentConfig, L2LMetrics, Variant};

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub mask: LearningMask,
    pub metrics: L2LMetrics,
}

/// Runs one family per mask under the base config's seeds, each in its own
/// `mask_XYZ` subdirectory, on at most `threads` workers. Rows come back in
/// table order.
pub fn run_ablation_grid(base: &ExperimentConfig, masks: &[LearningMask], threads: usize) -> Result<Vec<AblationRow>> {
    if masks.is_empty() {
        return Err(Error::InvalidArgument("empty mask set".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    let rows: Vec<Result<AblationRow>> = pool.install(|| {
        masks
            .par_iter()
            .map(|&mask| {
                let mut cfg = base.clone();
                cfg.variant = Variant::RandomMask;
                cfg.mask = Some(mask);
                cfg.output_dir = base.output_dir.join(format!("mask_{mask}"));
                let summary = run_family(&cfg)?;
                Ok(AblationRow {
                    mask,
                    metrics: summary.metrics,
                })
            })
            .collect()
    });
    let mut rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    sort_ablation_rows(&mut rows);
    Ok(rows)
}

/// Fewest failures first, then lowest 200-task final efficiency; rows
/// without that value go last.
pub fn sort_ablation_rows(rows: &mut [AblationRow]) {
    rows.sort_by(|a, b| {
        a.metrics
            .failure_count
            .cmp(&b.metrics.failure_count)
            .then_with(|| match (a.metrics.final_efficiency(200), b.metrics.final_efficiency(200)) {
                (Some(x), Some(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal),
                (Some(_), None) => Ordering::Less,
                (None, Some(_)) => Ordering::Greater,
                (None, None) => Ordering::Equal,
            })
            .then_with(|| a.mask.bits().cmp(&b.mask.bits()))
    });
}

pub fn ablation_table_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("mask,tasks_run,failure_count,fe50,fe100,fe150,fe200\n");
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.mask,
            m.tasks_run,
            m.failure_count,
            fmt(m.final_efficiency(50)),
            fmt(m.final_efficiency(100)),
            fmt(m.final_efficiency(150)),
            fmt(m.final_efficiency(200))
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn row(bits: [u8; 3], failures: usize, fe200: Option<f64>) -> AblationRow {
        AblationRow {
            mask: LearningMask::from_bits(&bits).unwrap(),
            metrics: L2LMetrics {
                tasks_run: 200,
                failure_count: failures,
                adaptation_speed: vec![],
                final_efficiency: BTreeMap::from([(200, fe200)]),
            },
        }
    }

    #[test]
    fn ordering_rule() {
        let mut rows = vec![
            row([0, 0, 0], 2, Some(10.0)),
            row([1, 1, 0], 0, None),
            row([0, 1, 1], 0, Some(300.0)),
            row([1, 0, 0], 0, Some(100.0)),
        ];
        sort_ablation_rows(&mut rows);
        let order: Vec<String> = rows.iter().map(|r| r.mask.to_string()).collect();
        assert_eq!(order, ["100", "011", "110", "000"]);
        let csv = ablation_table_csv(&rows);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().nth(3).unwrap().ends_with(','));
    }
}
