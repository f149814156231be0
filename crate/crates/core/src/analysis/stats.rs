use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::snn::TrialRecording;
use crate::tensor::{mean, pearson, variance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembraneStats {
    pub mean_potential: f64,
    pub potential_variance: f64,
    /// Mean and variance of pairwise Pearson correlations between neurons.
    pub mean_correlation: Option<f64>,
    pub correlation_variance: Option<f64>,
    pub n_pairs: usize,
    /// Pairs skipped because one trace was constant.
    pub excluded_pairs: usize,
}

/// Membrane potential statistics pooled over trials. Correlations are taken
/// per trial over time, then pooled.
pub fn membrane_stats(recs: &[TrialRecording]) -> Result<MembraneStats> {
    let first = recs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no recordings".into()))?;
    let n = first.v.cols();
    let mut all = Vec::new();
    let mut corr = Vec::new();
    let mut excluded = 0;
    for r in recs {
        if r.v.cols() != n {
            return Err(Error::shape("membrane recording", n, r.v.cols()));
        }
        all.extend_from_slice(r.v.as_slice());
        let cols: Vec<Vec<f64>> = (0..n).map(|i| (0..r.steps()).map(|t| r.v.get(t, i)).collect()).collect();
        for i in 0..n {
            for j in i + 1..n {
                match pearson(&cols[i], &cols[j]) {
                    Some(c) => corr.push(c),
                    None => excluded += 1,
                }
            }
        }
    }
    if all.is_empty() {
        return Err(Error::InvalidArgument("empty recordings".into()));
    }
    let has = !corr.is_empty();
    Ok(MembraneStats {
        mean_potential: mean(&all),
        potential_variance: variance(&all),
        mean_correlation: has.then(|| mean(&corr)),
        correlation_variance: has.then(|| variance(&corr)),
        n_pairs: corr.len(),
        excluded_pairs: excluded,
    })
}
