//! Prediction changes when the most salient cells are replaced.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::gradcore::Tensor;
use crate::models::{OutputKind, PredictModel};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Substitution {
    /// The sample's own mean of that feature over time.
    #[default]
    Average,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionScores {
    /// Agreement with the original predicted class after removal.
    pub acc: f64,
    /// Excess cross-entropy of the perturbed predictive distribution over
    /// the original one, i.e. `KL(p_orig ‖ p_removed)`.
    pub ce: f64,
    /// Drop in the originally predicted class probability when only the
    /// top cells are kept and everything else is replaced.
    pub suff: f64,
    /// Drop in the originally predicted class probability when the top
    /// cells are replaced.
    pub comp: f64,
}

/// Indices of the `k` highest mask values of one sample; ties go to the
/// lower flat index.
pub fn top_cells<S: Scalar>(mask_row: &[S], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..mask_row.len()).collect();
    order.sort_by(|&a, &b| mask_row[b].partial_cmp(&mask_row[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Number of cells substituted per sample for a fraction `q` of `cells`.
pub fn top_count(q: f64, cells: usize) -> Result<usize> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Metric(format!("top_q must lie in (0, 1), got {q}")));
    }
    let k = (q * cells as f64).floor() as usize;
    if k == 0 {
        return Err(Error::Metric(format!("top_q {q} selects no cell out of {cells}")));
    }
    Ok(k)
}

/// `x` with the chosen cells of each sample replaced. With `invert` the
/// complement is replaced instead.
pub fn substitute<S: Scalar>(x: &Tensor<S>, chosen: &[Vec<usize>], mode: Substitution, invert: bool) -> Result<Tensor<S>> {
    let (n, t, d) = match x.shape() {
        &[n, t, d] => (n, t, d),
        other => return Err(shape_err!("expected [N,T,D], got {other:?}")),
    };
    if chosen.len() != n {
        return Err(shape_err!("{} selections for {n} samples", chosen.len()));
    }
    let mut out = x.clone();
    let len = t * d;
    for (i, cells) in chosen.iter().enumerate() {
        let row = &x.data()[i * len..(i + 1) * len];
        let fill: Vec<S> = (0..d)
            .map(|f| match mode {
                Substitution::Zero => S::zero(),
                Substitution::Average => (0..t).fold(S::zero(), |a, s| a + row[s * d + f]) / S::lit(t as f64),
            })
            .collect();
        let mut selected = vec![invert; len];
        for &c in cells {
            selected[c] = !invert;
        }
        let dst = &mut out.data_mut()[i * len..(i + 1) * len];
        for (c, v) in dst.iter_mut().enumerate() {
            if selected[c] {
                *v = fill[c % d];
            }
        }
    }
    Ok(out)
}

fn class_prob(p: f64, positive: bool) -> f64 {
    if positive {
        p
    } else {
        1.0 - p
    }
}

fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let q = q.clamp(1e-12, 1.0 - 1e-12);
    let term = |a: f64, b: f64| if a > 0.0 { a * (a / b).ln() } else { 0.0 };
    term(p, q) + term(1.0 - p, 1.0 - q)
}

/// Accuracy, excess cross-entropy, sufficiency and comprehensiveness of a
/// per-step binary classifier, averaged over every sample and step.
pub fn substitution_metrics<S: Scalar>(
    model: &dyn PredictModel<S>,
    x: &Tensor<S>,
    mask: &Tensor<S>,
    top_q: f64,
    mode: Substitution,
) -> Result<SubstitutionScores> {
    if model.output() != OutputKind::Probability {
        return Err(Error::Metric("substitution metrics need a classifier".into()));
    }
    if mask.shape() != x.shape() || x.shape().len() != 3 {
        return Err(shape_err!("mask {:?} vs input {:?}", mask.shape(), x.shape()));
    }
    let n = x.shape()[0];
    let len = x.numel() / n.max(1);
    let k = top_count(top_q, len)?;
    let chosen: Vec<Vec<usize>> = (0..n).map(|i| top_cells(&mask.data()[i * len..(i + 1) * len], k)).collect();
    let removed = substitute(x, &chosen, mode, false)?;
    let kept = substitute(x, &chosen, mode, true)?;
    let p0 = model.predict(x)?.to_f64_vec();
    let pr = model.predict(&removed)?.to_f64_vec();
    let pk = model.predict(&kept)?.to_f64_vec();
    let m = p0.len() as f64;
    let (mut acc, mut ce, mut suff, mut comp) = (0.0, 0.0, 0.0, 0.0);
    for ((&a, &r), &kp) in p0.iter().zip(&pr).zip(&pk) {
        let yhat = a > 0.5;
        acc += f64::from(u8::from((r > 0.5) == yhat));
        ce += bernoulli_kl(a, r);
        comp += class_prob(a, yhat) - class_prob(r, yhat);
        suff += class_prob(a, yhat) - class_prob(kp, yhat);
    }
    Ok(SubstitutionScores {
        acc: acc / m,
        ce: ce / m,
        suff: suff / m,
        comp: comp / m,
    })
}
