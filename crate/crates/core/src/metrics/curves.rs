//! Threshold-sweep precision and recall areas against a ground-truth mask.

use crate::datagen::TruthMask;
use crate::error::{shape_err, Error, Result};
use crate::gradcore::Tensor;
use crate::scalar::Scalar;

/// `0.01, 0.02, …, 0.99`.
pub fn thresholds() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

/// Trapezoid area over the given `(θ, value)` points divided by the θ span
/// they cover. A single point returns its value; none returns 0.
fn normalized_area(points: &[(f64, f64)]) -> f64 {
    match points {
        [] => 0.0,
        [(_, v)] => *v,
        _ => {
            let area: f64 = points.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum();
            area / (points[points.len() - 1].0 - points[0].0)
        }
    }
}

/// Precision and recall of `mask > θ` at every grid threshold. Precision is
/// `None` where nothing is predicted.
pub fn precision_recall<S: Scalar>(mask: &Tensor<S>, truth: &TruthMask) -> Result<Vec<(f64, Option<f64>, f64)>> {
    if mask.shape() != truth.shape() {
        return Err(shape_err!("mask {:?} vs truth {:?}", mask.shape(), truth.shape()));
    }
    let positives = truth.count();
    if positives == 0 {
        return Err(Error::Metric("ground truth has no salient cells".into()));
    }
    let values: Vec<f64> = mask.to_f64_vec();
    Ok(thresholds()
        .into_iter()
        .map(|th| {
            let (mut predicted, mut hit) = (0usize, 0usize);
            for (&v, &t) in values.iter().zip(truth.cells()) {
                if v > th {
                    predicted += 1;
                    hit += usize::from(t);
                }
            }
            let precision = (predicted > 0).then(|| hit as f64 / predicted as f64);
            (th, precision, hit as f64 / positives as f64)
        })
        .collect())
}

/// Areas under the precision and recall curves over the threshold grid,
/// pooled over every cell of the batch.
pub fn aup_aur<S: Scalar>(mask: &Tensor<S>, truth: &TruthMask) -> Result<(f64, f64)> {
    let curve = precision_recall(mask, truth)?;
    let precision: Vec<(f64, f64)> = curve.iter().filter_map(|&(th, p, _)| p.map(|p| (th, p))).collect();
    let recall: Vec<(f64, f64)> = curve.iter().map(|&(th, _, r)| (th, r)).collect();
    Ok((normalized_area(&precision), normalized_area(&recall)))
}
