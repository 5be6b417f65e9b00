use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

use super::tensor::Tensor;

/// Adam with bias correction (β1 = 0.9, β2 = 0.999, eps = 1e-8 by default).
#[derive(Clone, Debug)]
pub struct AdamState<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    step: u64,
    first: Vec<Tensor<S>>,
    second: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    /// Zero moments matching the given parameter shapes.
    pub fn new<'a>(lr: S, shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let first: Vec<Tensor<S>> = shapes.into_iter().map(Tensor::zeros).collect();
        Self {
            lr,
            beta1: S::lit(0.9),
            beta2: S::lit(0.999),
            eps: S::lit(1e-8),
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn for_params(lr: S, params: &[&Tensor<S>]) -> Self {
        Self::new(lr, params.iter().map(|p| p.shape()))
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<S>], grads: &[&Tensor<S>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(shape_err!(
                "adam expects {} tensors, got {} params / {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.first[i].shape() || g.shape() != self.first[i].shape() {
                return Err(shape_err!(
                    "adam slot {}: moment {:?}, param {:?}, grad {:?}",
                    i,
                    self.first[i].shape(),
                    p.shape(),
                    g.shape()
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = S::one() - self.beta1.powi(t);
        let c2 = S::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = b1 * m[j] + (S::one() - b1) * gj;
                v[j] = b2 * v[j] + (S::one() - b2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *w = *w - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
