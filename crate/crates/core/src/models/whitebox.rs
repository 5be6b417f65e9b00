use crate::datagen::{whitebox_regress, Dataset, TruthMask};
use crate::error::{shape_err, Result};
use crate::gradcore::{Graph, Tensor, Var};
use crate::scalar::Scalar;

use super::{ModelKind, OutputKind, PredictModel};

/// Sparse white-box regressor bound to the salient layout of a fixed batch
/// of samples: per step, sum of squares of the salient cells, or the square
/// of their sum for group-2 samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Whitebox {
    truth: TruthMask,
    group: Vec<u8>,
}

impl Whitebox {
    pub fn new(truth: TruthMask, group: Vec<u8>) -> Result<Self> {
        if truth.shape()[0] != group.len() {
            return Err(shape_err!("{} groups for {} samples", group.len(), truth.shape()[0]));
        }
        Ok(Self { truth, group })
    }

    pub fn for_dataset<S: Scalar>(ds: &Dataset<S>) -> Result<Self> {
        Self::new(ds.truth.clone(), ds.group.clone())
    }

    pub fn truth(&self) -> &TruthMask {
        &self.truth
    }

    /// Model restricted to some samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let group = indices
            .iter()
            .map(|&i| self.group.get(i).copied())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| shape_err!("subset index out of range"))?;
        Self::new(self.truth.rows(indices)?, group)
    }

    fn check<S: Scalar>(&self, shape: &[usize]) -> Result<()> {
        let [n, t, d] = self.truth.shape();
        if shape != [n, t, d] {
            return Err(shape_err!("white-box model bound to [{n}, {t}, {d}], got {:?}", shape));
        }
        Ok(())
    }
}

impl<S: Scalar> PredictModel<S> for Whitebox {
    fn kind(&self) -> ModelKind {
        ModelKind::Whitebox
    }

    fn output(&self) -> OutputKind {
        OutputKind::Regression
    }

    fn forward(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        self.check::<S>(g.shape(x))?;
        let n = self.group.len();
        let mask = g.constant(self.truth.to_tensor());
        let sum_sq = Tensor::from_fn(&[n, 1], |i| if self.group[i] == 2 { S::zero() } else { S::one() });
        let sq_sum = Tensor::from_fn(&[n, 1], |i| if self.group[i] == 2 { S::one() } else { S::zero() });
        let (a, b) = (g.constant(sum_sq), g.constant(sq_sum));
        let xm = g.mul(x, mask)?;
        let squares = g.square(xm)?;
        let first = g.sum_axis(squares, 2)?;
        let first = g.mul(first, a)?;
        let total = g.sum_axis(xm, 2)?;
        let second = g.square(total)?;
        let second = g.mul(second, b)?;
        g.add(first, second)
    }

    fn predict(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.check::<S>(x.shape())?;
        whitebox_regress(x, &self.truth, &self.group)
    }
}
