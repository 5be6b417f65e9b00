//! How far perturbed inputs drift from the data distribution.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::gradcore::Tensor;
use crate::scalar::Scalar;

pub const KL_BINS: usize = 64;
const KL_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionScores {
    /// Mean log-density of perturbed observations under a KDE of the
    /// originals. Closer to zero is more in-distribution.
    pub kde_score: f64,
    /// Mean over features of the histogram KL from perturbed to original.
    pub kl: f64,
}

/// Observation vectors `[N·T][D]` of a `[N,T,D]` batch.
fn observations<S: Scalar>(x: &Tensor<S>) -> Result<(Vec<Vec<f64>>, usize)> {
    let d = match x.shape() {
        &[n, t, d] if n * t > 0 && d > 0 => d,
        other => return Err(Error::Metric(format!("need a non-empty [N,T,D] batch, got {other:?}"))),
    };
    Ok((x.to_f64_vec().chunks(d).map(<[f64]>::to_vec).collect(), d))
}

/// Gaussian KDE with Scott's bandwidth and full covariance.
pub struct Kde {
    /// Row-major `[n, d]` points after whitening by the bandwidth.
    whitened: Vec<f64>,
    d: usize,
    chol_inv: DMatrix<f64>,
    log_norm: f64,
}

impl Kde {
    pub fn fit(points: &[Vec<f64>]) -> Result<Self> {
        let n = points.len();
        let d = points.first().map_or(0, Vec::len);
        if n < 2 || d == 0 {
            return Err(Error::Metric("a KDE needs at least two points".into()));
        }
        let mean = points.iter().fold(vec![0.0; d], |mut acc, p| {
            acc.iter_mut().zip(p).for_each(|(a, v)| *a += v / n as f64);
            acc
        });
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for p in points {
            let c = DVector::from_iterator(d, p.iter().zip(&mean).map(|(v, m)| v - m));
            cov += &c * c.transpose();
        }
        cov /= (n - 1) as f64;
        let factor = (n as f64).powf(-1.0 / (d as f64 + 4.0));
        let h = cov * factor * factor;
        let chol = h
            .cholesky()
            .ok_or_else(|| Error::Metric("degenerate variance: KDE covariance is singular".into()))?;
        let l = chol.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let chol_inv = l
            .try_inverse()
            .ok_or_else(|| Error::Metric("degenerate variance: KDE covariance is singular".into()))?;
        let whitened = points
            .iter()
            .flat_map(|p| (&chol_inv * DVector::from_column_slice(p)).data.as_vec().clone())
            .collect();
        let log_norm = -(n as f64).ln() - 0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(Self {
            whitened,
            d,
            chol_inv,
            log_norm,
        })
    }

    pub fn log_density(&self, y: &[f64]) -> f64 {
        let z = &self.chol_inv * DVector::from_column_slice(y);
        let z = z.as_slice();
        let exps: Vec<f64> = self
            .whitened
            .chunks(self.d)
            .map(|w| -0.5 * w.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .collect();
        let top = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        top + exps.iter().map(|e| (e - top).exp()).sum::<f64>().ln() + self.log_norm
    }
}

/// `KL(Q ‖ P)` between shared-bin histograms of two 1-D samples.
pub fn histogram_kl(p_sample: &[f64], q_sample: &[f64], bins: usize) -> Result<f64> {
    if p_sample.is_empty() || q_sample.is_empty() || bins == 0 {
        return Err(Error::Metric("histogram KL needs two non-empty samples".into()));
    }
    let lo = p_sample.iter().chain(q_sample).copied().fold(f64::INFINITY, f64::min);
    let hi = p_sample.iter().chain(q_sample).copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::Metric("degenerate variance: both samples are constant".into()));
    }
    let hist = |s: &[f64]| {
        let mut h = vec![0.0; bins];
        for &v in s {
            let b = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
            h[b.min(bins - 1)] += 1.0;
        }
        let total: f64 = h.iter().map(|c| c / s.len() as f64 + KL_EPS).sum();
        h.iter().map(|c| (c / s.len() as f64 + KL_EPS) / total).collect::<Vec<f64>>()
    };
    let (p, q) = (hist(p_sample), hist(q_sample));
    Ok(q.iter().zip(&p).map(|(qi, pi)| qi * (qi / pi).ln()).sum())
}

/// KDE-score and marginal KL of `perturbed` against `original`, both
/// `[·,·,D]` with the same D.
pub fn distribution_analysis<S: Scalar>(original: &Tensor<S>, perturbed: &Tensor<S>) -> Result<DistributionScores> {
    let (orig, d) = observations(original)?;
    let (pert, d2) = observations(perturbed)?;
    if d != d2 {
        return Err(shape_err!("observation widths {d} and {d2} differ"));
    }
    let kde = Kde::fit(&orig)?;
    let kde_score = pert.iter().map(|y| kde.log_density(y)).sum::<f64>() / pert.len() as f64;
    let mut kl = 0.0;
    for f in 0..d {
        let a: Vec<f64> = orig.iter().map(|o| o[f]).collect();
        let b: Vec<f64> = pert.iter().map(|o| o[f]).collect();
        kl += histogram_kl(&a, &b, KL_BINS)?;
    }
    Ok(DistributionScores {
        kde_score,
        kl: kl / d as f64,
    })
}
