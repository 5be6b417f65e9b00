//! Target models behind one prediction interface.

mod checkpoint;
mod gru;
pub mod layers;
mod whitebox;

use serde::{Deserialize, Serialize};

use crate::datagen::Regime;
use crate::error::{Error, Result};
use crate::gradcore::{sigmoid, Graph, Tensor, Var};
use crate::scalar::Scalar;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gru::{train_classifier, GruClassifier, GruParams, TrainConfig, TrainReport};
pub use whitebox::Whitebox;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Whitebox,
    Gru,
}

/// What [`PredictModel::forward`] returns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputKind {
    /// Real-valued per-step target.
    Regression,
    /// Per-step logit of a binary class probability.
    Probability,
}

/// A pre-trained model `f: [N,T,D] → [N,T]`.
pub trait PredictModel<S: Scalar>: Send + Sync {
    fn kind(&self) -> ModelKind;

    fn output(&self) -> OutputKind;

    /// Differentiable raw output: regression values or logits.
    fn forward(&self, g: &mut Graph<S>, x: Var) -> Result<Var>;

    /// Per-step predictions; probabilities for [`OutputKind::Probability`].
    fn predict(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let out = self.forward(&mut g, v)?;
        let raw = g.value(out).clone();
        Ok(match self.output() {
            OutputKind::Regression => raw,
            OutputKind::Probability => raw.map(sigmoid),
        })
    }
}

/// Rejects pairing a model with a regime it cannot explain.
pub fn ensure_compatible<S: Scalar>(model: &dyn PredictModel<S>, regime: Regime) -> Result<()> {
    let ok = match model.kind() {
        ModelKind::Whitebox => regime.is_rare(),
        ModelKind::Gru => regime.is_classification(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{:?} model cannot serve the {regime} regime", model.kind())))
    }
}

#[cfg(test)]
mod tests;
