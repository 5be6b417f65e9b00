//! Stochastic gates, trend smoothing, the erf sparsity penalty and the
//! perturbation blend, each in a plain-tensor and a graph form.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::gradcore::{sigmoid, Graph, Tensor, Var};
use crate::scalar::Scalar;

/// How a per-cell quantity is reduced to one value per sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

impl Reduction {
    /// `[N, L] → [N]`.
    pub fn apply<S: Scalar>(self, g: &mut Graph<S>, v: Var) -> Result<Var> {
        match self {
            Reduction::Sum => g.sum_axis(v, 1),
            Reduction::Mean => g.mean_axis(v, 1),
        }
    }
}

fn same_shape<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!("{what}: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

/// `μ′ = μ ⊙ σ(τ ⊙ μ)`.
pub fn smooth_mu<S: Scalar>(mu: &Tensor<S>, trend: &Tensor<S>) -> Result<Tensor<S>> {
    same_shape(mu, trend, "smooth_mu")?;
    let data = mu.data().iter().zip(trend.data()).map(|(&m, &t)| m * sigmoid(t * m)).collect();
    Tensor::new(mu.shape().to_vec(), data)
}

/// `m = min(1, max(0, μ′ + ε))`.
pub fn sparse_gate<S: Scalar>(mu_s: &Tensor<S>, eps: &Tensor<S>) -> Result<Tensor<S>> {
    same_shape(mu_s, eps, "sparse_gate")?;
    let data = mu_s
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&m, &e)| (m + e).max(S::zero()).min(S::one()))
        .collect();
    Tensor::new(mu_s.shape().to_vec(), data)
}

/// Expected number of open gates, `Σ (½ + ½ erf(μ′ / (√2 δ)))`.
pub fn reg_term<S: Scalar>(mu_s: &Tensor<S>, delta: S) -> Result<S> {
    if !(delta > S::zero()) {
        return Err(Error::Config(format!("gate noise std must be positive, got {delta}")));
    }
    let half = S::lit(0.5);
    let k = S::one() / (S::lit(std::f64::consts::SQRT_2) * delta);
    Ok(mu_s.data().iter().map(|&m| half + half * (m * k).gauss_erf()).sum())
}

/// `Φ(x, m) = m ⊙ x + (1 − m) ⊙ x^r`.
pub fn apply_perturbation<S: Scalar>(x: &Tensor<S>, m: &Tensor<S>, xr: &Tensor<S>) -> Result<Tensor<S>> {
    same_shape(x, m, "apply_perturbation")?;
    same_shape(x, xr, "apply_perturbation")?;
    let data = x
        .data()
        .iter()
        .zip(m.data())
        .zip(xr.data())
        .map(|((&x, &m), &r)| m * x + (S::one() - m) * r)
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

pub fn smooth_mu_graph<S: Scalar>(g: &mut Graph<S>, mu: Var, trend: Var) -> Result<Var> {
    let tm = g.mul(trend, mu)?;
    let s = g.sigmoid(tm)?;
    g.mul(mu, s)
}

pub fn sparse_gate_graph<S: Scalar>(g: &mut Graph<S>, mu_s: Var, eps: Var) -> Result<Var> {
    let z = g.add(mu_s, eps)?;
    g.clamp(z, S::zero(), S::one())
}

/// Per-sample penalty `[N]` for `μ′: [N,T,D]`.
pub fn reg_term_graph<S: Scalar>(g: &mut Graph<S>, mu_s: Var, delta: S) -> Result<Var> {
    let k = S::one() / (S::lit(std::f64::consts::SQRT_2) * delta);
    let z = g.scale(mu_s, k)?;
    let e = g.erf(z)?;
    let e = g.scale(e, S::lit(0.5))?;
    let p = g.add_scalar(e, S::lit(0.5))?;
    let per_step = g.sum_axis(p, 2)?;
    g.sum_axis(per_step, 1)
}

/// Graph form of [`apply_perturbation`]; exact at m = 0 and m = 1.
pub fn apply_perturbation_graph<S: Scalar>(g: &mut Graph<S>, x: Var, m: Var, xr: Var) -> Result<Var> {
    let keep = g.mul(m, x)?;
    let inv = g.rsub_scalar(S::one(), m)?;
    let fill = g.mul(inv, xr)?;
    g.add(keep, fill)
}
