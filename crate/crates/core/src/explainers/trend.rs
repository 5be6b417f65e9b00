use crate::error::{shape_err, Result};
use crate::gradcore::{Graph, Tensor, Var};
use crate::models::layers::uniform;
use crate::rng::Rng;
use crate::scalar::Scalar;

/// One `Linear(T, H) → ReLU → Linear(H, T)` network per observation,
/// mapping each observation's series to its temporal trend.
#[derive(Clone, Debug, PartialEq)]
pub struct TrendNet<S> {
    /// `[D, T, H]`
    pub w1: Tensor<S>,
    /// `[D, 1, H]`
    pub b1: Tensor<S>,
    /// `[D, H, T]`
    pub w2: Tensor<S>,
    /// `[D, 1, T]`
    pub b2: Tensor<S>,
}

pub(crate) struct TrendVars {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

impl TrendVars {
    pub fn all(&self) -> Vec<Var> {
        vec![self.w1, self.b1, self.w2, self.b2]
    }
}

impl<S: Scalar> TrendNet<S> {
    /// Linear layers initialised uniform in ±1/√fan_in.
    pub fn init(t: usize, d: usize, hidden: usize, r: &mut Rng) -> Self {
        let b_in = 1.0 / (t as f64).sqrt();
        let b_hid = 1.0 / (hidden as f64).sqrt();
        Self {
            w1: uniform(&[d, t, hidden], b_in, r),
            b1: uniform(&[d, 1, hidden], b_in, r),
            w2: uniform(&[d, hidden, t], b_hid, r),
            b2: uniform(&[d, 1, t], b_hid, r),
        }
    }

    pub fn steps(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn observations(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn tensors(&self) -> Vec<&Tensor<S>> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub(crate) fn insert(&self, g: &mut Graph<S>, trainable: bool) -> TrendVars {
        TrendVars {
            w1: g.leaf(self.w1.clone(), trainable),
            b1: g.leaf(self.b1.clone(), trainable),
            w2: g.leaf(self.w2.clone(), trainable),
            b2: g.leaf(self.b2.clone(), trainable),
        }
    }

    /// `τ(x)` for `x: [N,T,D]`, same shape.
    pub(crate) fn forward(&self, g: &mut Graph<S>, x: Var, v: &TrendVars) -> Result<Var> {
        let xs = g.shape(x).to_vec();
        if xs.len() != 3 || xs[1] != self.steps() || xs[2] != self.observations() {
            return Err(shape_err!(
                "trend network built for T={}, D={}, got {:?}",
                self.steps(),
                self.observations(),
                xs
            ));
        }
        let series = g.permute(x, &[2, 0, 1])?; // [D,N,T]
        let h = g.matmul(series, v.w1)?;
        let h = g.add(h, v.b1)?;
        let h = g.relu(h)?;
        let out = g.matmul(h, v.w2)?;
        let out = g.add(out, v.b2)?;
        g.permute(out, &[1, 2, 0])
    }

    pub fn apply(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let v = self.insert(&mut g, false);
        let out = self.forward(&mut g, xv, &v)?;
        Ok(g.value(out).clone())
    }
}
