use crate::error::Result;
use crate::snn::{IntrinsicProperties, NetworkWeights};

use super::{flatten_params, unflatten_params, GradientSet, ParamGroup};

/// `(f(x + h e_k) - f(x - h e_k)) / 2h` for every coordinate `k`.
pub fn central_differences(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let x0 = probe[k];
            probe[k] = x0 + h;
            let up = f(&probe);
            probe[k] = x0 - h;
            let down = f(&probe);
            probe[k] = x0;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference gradient of `loss` over every weight and property.
///
/// `loss` must be a deterministic function of the parameters; callers pin
/// noise seeds so both probes of a coordinate see the same noise.
pub fn finite_difference_oracle(
    mut loss: impl FnMut(&NetworkWeights, &IntrinsicProperties) -> f64,
    weights: &NetworkWeights,
    props: &IntrinsicProperties,
    h: f64,
) -> Result<GradientSet> {
    let x = flatten_params(weights, props);
    let mut w = weights.clone();
    let mut p = props.clone();
    let mut failure = None;
    let flat = central_differences(
        |probe| match unflatten_params(probe, &mut w, &mut p) {
            Ok(()) => loss(&w, &p),
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        &x,
        h,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let mut out = GradientSet::zeros_like(weights, props);
    let mut rest = &flat[..];
    for g in ParamGroup::ALL {
        let dst = out.group_mut(g);
        let (head, tail) = rest.split_at(dst.len());
        dst.copy_from_slice(head);
        rest = tail;
    }
    Ok(out)
}
