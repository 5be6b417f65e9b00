use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::gradcore::{Graph, Tensor, Var};
use crate::models::layers::{gru_sequence, linear, uniform};
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbKind {
    /// Single-layer bidirectional GRU with a linear read-out per step.
    BiGru,
    /// Per-step `Linear(D, H) → ReLU → Linear(H, D)`.
    Mlp,
}

/// The perturbation function `x ↦ x^r`.
///
/// Parameter order for [`PerturbKind::BiGru`]: forward `W, b, U`, backward
/// `W, b, U`, read-out `W_o [2H, D]`, `b_o [D]`. For [`PerturbKind::Mlp`]:
/// `W1, b1, W2, b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbNet<S> {
    pub kind: PerturbKind,
    pub params: Vec<Tensor<S>>,
}

pub const BIGRU_NAMES: [&str; 8] = ["fw_w", "fw_b", "fw_u", "bw_w", "bw_b", "bw_u", "out_w", "out_b"];
pub const MLP_NAMES: [&str; 4] = ["w1", "b1", "w2", "b2"];

impl<S: Scalar> PerturbNet<S> {
    pub fn init(kind: PerturbKind, d: usize, hidden: usize, r: &mut Rng) -> Self {
        let params = match kind {
            PerturbKind::BiGru => {
                let bh = 1.0 / (hidden as f64).sqrt();
                let bo = 1.0 / ((2 * hidden) as f64).sqrt();
                let mut p = Vec::new();
                for _ in 0..2 {
                    p.push(uniform(&[d, 3 * hidden], bh, r));
                    p.push(uniform(&[3 * hidden], bh, r));
                    p.push(uniform(&[hidden, 3 * hidden], bh, r));
                }
                p.push(uniform(&[2 * hidden, d], bo, r));
                p.push(uniform(&[d], bo, r));
                p
            }
            PerturbKind::Mlp => {
                let bi = 1.0 / (d as f64).sqrt();
                let bh = 1.0 / (hidden as f64).sqrt();
                vec![
                    uniform(&[d, hidden], bi, r),
                    uniform(&[hidden], bi, r),
                    uniform(&[hidden, d], bh, r),
                    uniform(&[d], bh, r),
                ]
            }
        };
        Self { kind, params }
    }

    /// Same architecture with every weight and bias at zero.
    pub fn zeros(kind: PerturbKind, d: usize, hidden: usize) -> Self {
        let mut r = crate::rng::rng(0);
        let mut net = Self::init(kind, d, hidden, &mut r);
        for p in &mut net.params {
            p.data_mut().iter_mut().for_each(|v| *v = S::zero());
        }
        net
    }

    pub fn names(&self) -> &'static [&'static str] {
        match self.kind {
            PerturbKind::BiGru => &BIGRU_NAMES,
            PerturbKind::Mlp => &MLP_NAMES,
        }
    }

    pub fn observations(&self) -> usize {
        self.params.last().map_or(0, |b| b.numel())
    }

    pub fn tensors(&self) -> Vec<&Tensor<S>> {
        self.params.iter().collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        self.params.iter_mut().collect()
    }

    pub(crate) fn insert(&self, g: &mut Graph<S>, trainable: bool) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf(p.clone(), trainable)).collect()
    }

    /// `x^r` for `x: [N,T,D]`.
    pub(crate) fn forward(&self, g: &mut Graph<S>, x: Var, v: &[Var]) -> Result<Var> {
        let xs = g.shape(x).to_vec();
        if xs.len() != 3 || xs[2] != self.observations() {
            return Err(shape_err!("perturbation network expects [N,T,{}], got {:?}", self.observations(), xs));
        }
        match self.kind {
            PerturbKind::BiGru => {
                let fwd = gru_sequence(g, x, v[0], v[1], v[2], false)?;
                let bwd = gru_sequence(g, x, v[3], v[4], v[5], true)?;
                let h = g.concat(&[fwd, bwd], 2)?;
                linear(g, h, v[6], v[7])
            }
            PerturbKind::Mlp => {
                let h = linear(g, x, v[0], v[1])?;
                let h = g.relu(h)?;
                linear(g, h, v[2], v[3])
            }
        }
    }

    pub fn apply(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let v = self.insert(&mut g, false);
        let out = self.forward(&mut g, xv, &v)?;
        Ok(g.value(out).clone())
    }
}
