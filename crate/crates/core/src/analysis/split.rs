use crate::error::{Error, Result};
use crate::tensor::median;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSummary {
    pub threshold: f64,
    pub low: Vec<usize>,
    pub high: Vec<usize>,
    pub low_median_speed: Option<f64>,
    pub high_median_speed: Option<f64>,
}

/// Splits tasks at the median of `metric` and compares adaptation speed.
/// Ties with the median go to the lower group.
pub fn split_by_metric(metric: &[f64], speed: &[f64]) -> Result<SplitSummary> {
    if metric.len() != speed.len() {
        return Err(Error::shape("split speeds", metric.len(), speed.len()));
    }
    if metric.iter().any(|m| !m.is_finite()) {
        return Err(Error::InvalidArgument("split metric must be finite".into()));
    }
    let mut sorted = metric.to_vec();
    sorted.sort_by(f64::total_cmp);
    let threshold = match sorted.len() {
        0 => return Err(Error::InvalidArgument("nothing to split".into())),
        n if n % 2 == 1 => sorted[n / 2],
        n => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
    };
    let (low, high): (Vec<usize>, Vec<usize>) = (0..metric.len()).partition(|&i| metric[i] <= threshold);
    let pick = |idx: &[usize]| median(&idx.iter().map(|&i| speed[i]).collect::<Vec<_>>());
    Ok(SplitSummary {
        threshold,
        low_median_speed: pick(&low),
        high_median_speed: pick(&high),
        low,
        high,
    })
}
