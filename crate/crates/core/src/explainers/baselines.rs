//! Occlusion and path-gradient attributions used as reference points.

use rand::Rng as _;

use super::SaliencyMap;
use crate::error::{shape_err, Result};
use crate::gradcore::{Graph, Tensor};
use crate::models::PredictModel;
use crate::rng::{derive_named, rng};
use crate::scalar::Scalar;

pub const AFO_DRAWS: usize = 10;
pub const IG_STEPS: usize = 50;

fn dims<S: Scalar>(x: &Tensor<S>) -> Result<(usize, usize, usize)> {
    match x.shape() {
        &[n, t, d] => Ok((n, t, d)),
        other => Err(shape_err!("expected [N,T,D], got {other:?}")),
    }
}

/// `Σ_t |a[i,t] − b[i,t]|` per sample.
fn output_change<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, n: usize) -> Vec<S> {
    let steps = a.numel() / n.max(1);
    (0..n)
        .map(|i| {
            a.data()[i * steps..(i + 1) * steps]
                .iter()
                .zip(&b.data()[i * steps..(i + 1) * steps])
                .fold(S::zero(), |acc, (&p, &q)| acc + (p - q).abs())
        })
        .collect()
}

/// Shared occlusion loop: for every cell, `fill(i, t, d)` supplies the
/// replacement value and the absolute output change is averaged over draws.
fn occlusion<S: Scalar>(
    model: &dyn PredictModel<S>,
    x: &Tensor<S>,
    draws: usize,
    mut fill: impl FnMut(usize, usize, usize) -> S,
) -> Result<SaliencyMap<S>> {
    let (n, t, d) = dims(x)?;
    let base = model.predict(x)?;
    let mut scores = Tensor::zeros(&[n, t, d]);
    let inv = S::one() / S::lit(draws as f64);
    let mut occluded = x.clone();
    for s in 0..t {
        for f in 0..d {
            for _ in 0..draws {
                for i in 0..n {
                    occluded.set(&[i, s, f], fill(i, s, f));
                }
                let out = model.predict(&occluded)?;
                for (i, delta) in output_change(&base, &out, n).into_iter().enumerate() {
                    let cur = scores.at(&[i, s, f]);
                    scores.set(&[i, s, f], cur + delta * inv);
                }
            }
            for i in 0..n {
                occluded.set(&[i, s, f], x.at(&[i, s, f]));
            }
        }
    }
    SaliencyMap::new(scores).map(|m| m.normalized())
}

/// Feature occlusion: importance of a cell is the summed absolute change of
/// the outputs when that cell alone is set to zero.
pub fn baseline_fo<S: Scalar>(model: &dyn PredictModel<S>, x: &Tensor<S>) -> Result<SaliencyMap<S>> {
    occlusion(model, x, 1, |_, _, _| S::zero())
}

/// Augmented occlusion: the cell is replaced by the value another sample
/// holds at the same position, averaged over [`AFO_DRAWS`] draws.
pub fn baseline_afo<S: Scalar>(model: &dyn PredictModel<S>, x: &Tensor<S>, seed: u64) -> Result<SaliencyMap<S>> {
    let (n, _, _) = dims(x)?;
    let mut r = rng(derive_named(seed, "afo"));
    occlusion(model, x, AFO_DRAWS, |i, s, f| {
        let j = if n < 2 {
            i
        } else {
            let k = r.gen_range(0..n - 1);
            if k >= i {
                k + 1
            } else {
                k
            }
        };
        x.at(&[j, s, f])
    })
}

/// Raw integrated gradients from the zero baseline for the summed output,
/// midpoint rule with `steps` points. Signed; `Σ attr ≈ F(x) − F(0)`.
pub fn integrated_gradients<S: Scalar>(model: &dyn PredictModel<S>, x: &Tensor<S>, steps: usize) -> Result<Tensor<S>> {
    dims(x)?;
    if steps == 0 {
        return Err(crate::error::Error::Config("integrated gradients need at least one step".into()));
    }
    let mut total = Tensor::<S>::zeros(x.shape());
    for k in 0..steps {
        let a = S::lit((k as f64 + 0.5) / steps as f64);
        let mut g = Graph::new();
        let xv = g.param(x.map(|v| v * a));
        let raw = model.forward(&mut g, xv)?;
        let out = match model.output() {
            crate::models::OutputKind::Regression => raw,
            crate::models::OutputKind::Probability => g.sigmoid(raw)?,
        };
        let root = g.sum(out)?;
        let grads = g.backward(root)?;
        let gx = grads.get_or_zeros(xv, x.shape());
        for (acc, &gv) in total.data_mut().iter_mut().zip(gx.data()) {
            *acc = *acc + gv;
        }
    }
    let scale = S::one() / S::lit(steps as f64);
    Tensor::new(
        x.shape().to_vec(),
        total.data().iter().zip(x.data()).map(|(&gsum, &xv)| gsum * scale * xv).collect(),
    )
}

/// Integrated-gradient saliency: `|attr|`, normalised per sample.
pub fn baseline_ig<S: Scalar>(model: &dyn PredictModel<S>, x: &Tensor<S>, steps: usize) -> Result<SaliencyMap<S>> {
    let attr = integrated_gradients(model, x, steps)?;
    SaliencyMap::new(attr.map(|v| v.abs())).map(|m| m.normalized())
}
