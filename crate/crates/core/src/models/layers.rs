//! Graph-level building blocks shared by target models and explainers.

use rand::Rng as _;

use crate::error::{shape_err, Result};
use crate::gradcore::{Graph, Tensor, Var};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Uniform(−bound, bound) initialiser.
pub fn uniform<S: Scalar>(shape: &[usize], bound: f64, r: &mut Rng) -> Tensor<S> {
    Tensor::from_fn(shape, |_| S::lit(if bound > 0.0 { r.gen_range(-bound..bound) } else { 0.0 }))
}

/// `x·W + b` over the last axis of a rank-2 or rank-3 input.
pub fn linear<S: Scalar>(g: &mut Graph<S>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

/// Runs a GRU over `x: [N,T,D]` from a zero state and returns all hidden
/// states `[N,T,H]` in time order. With `reverse` the recurrence runs from
/// the last step to the first.
pub fn gru_sequence<S: Scalar>(g: &mut Graph<S>, x: Var, w: Var, b: Var, u: Var, reverse: bool) -> Result<Var> {
    let xs = g.shape(x).to_vec();
    if xs.len() != 3 {
        return Err(shape_err!("GRU input must be [N,T,D], got {:?}", xs));
    }
    let (n, t) = (xs[0], xs[1]);
    let hid = g.shape(u)[0];
    let gx = linear(g, x, w, b)?;
    let mut h = g.constant(Tensor::zeros(&[n, hid]));
    let mut states = vec![h; t];
    for k in 0..t {
        let step = if reverse { t - 1 - k } else { k };
        h = g.gru_cell(gx, step, h, u)?;
        states[step] = h;
    }
    g.stack(&states, 1)
}
