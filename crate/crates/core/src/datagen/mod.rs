//! Synthetic regimes with known salient cells.
//!
//! Two families are produced:
//!
//! * white-box regression data: ARMA inputs plus a rare salient set in time
//!   or in observations, optionally split into two groups with different
//!   response functions;
//! * black-box classification data: hidden-Markov state sequences whose
//!   active state selects the feature that drives a Bernoulli label.
//!
//! Every generator is a pure function of its configuration and seed.
//! Generation always happens in `f64`; [`Dataset::cast`] converts afterwards.

mod arma;
mod hmm;
mod io;
mod rare;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::gradcore::{sigmoid, Tensor};
use crate::scalar::Scalar;

pub use arma::{gen_arma, ArmaProcess};
pub use hmm::{
    emit, gen_hmm, gen_state, gen_switch_feature, rbf_kernel, sample_states, state_spec, switch_feature_spec, Emission,
    HmmConfig, HmmSpec,
};
pub use io::{read_dataset, write_dataset, DatasetMeta};
pub use rare::{gen_rare, make_rare_spec, whitebox_regress, RareConfig, RareKind, RareSpec};

/// The six benchmark regimes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    RareTime,
    RareObservation,
    RareTimeDiffgroups,
    RareObservationDiffgroups,
    SwitchFeature,
    State,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::RareTime,
        Regime::RareObservation,
        Regime::RareTimeDiffgroups,
        Regime::RareObservationDiffgroups,
        Regime::SwitchFeature,
        Regime::State,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::RareTime => "rare-time",
            Regime::RareObservation => "rare-observation",
            Regime::RareTimeDiffgroups => "rare-time-diffgroups",
            Regime::RareObservationDiffgroups => "rare-observation-diffgroups",
            Regime::SwitchFeature => "switch-feature",
            Regime::State => "state",
        }
    }

    /// White-box regression regimes.
    pub fn is_rare(self) -> bool {
        !self.is_classification()
    }

    pub fn is_classification(self) -> bool {
        matches!(self, Regime::SwitchFeature | Regime::State)
    }

    pub fn grouped(self) -> bool {
        matches!(self, Regime::RareTimeDiffgroups | Regime::RareObservationDiffgroups)
    }

    pub fn rare_kind(self) -> Option<RareKind> {
        match self {
            Regime::RareTime | Regime::RareTimeDiffgroups => Some(RareKind::Time),
            Regime::RareObservation | Regime::RareObservationDiffgroups => Some(RareKind::Observation),
            _ => None,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime `{s}`")))
    }
}

/// Boolean `[N, T, D]` array of salient cells.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthMask {
    shape: [usize; 3],
    cells: Vec<bool>,
}

impl TruthMask {
    pub fn empty(n: usize, t: usize, d: usize) -> Self {
        Self {
            shape: [n, t, d],
            cells: vec![false; n * t * d],
        }
    }

    pub fn new(shape: [usize; 3], cells: Vec<bool>) -> Result<Self> {
        if shape.iter().product::<usize>() != cells.len() {
            return Err(shape_err!("truth shape {:?} holds {} cells", shape, cells.len()));
        }
        Ok(Self { shape, cells })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    #[inline]
    pub fn index(&self, i: usize, t: usize, d: usize) -> usize {
        (i * self.shape[1] + t) * self.shape[2] + d
    }

    #[inline]
    pub fn get(&self, i: usize, t: usize, d: usize) -> bool {
        self.cells[self.index(i, t, d)]
    }

    pub fn set(&mut self, i: usize, t: usize, d: usize, value: bool) {
        let k = self.index(i, t, d);
        self.cells[k] = value;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn count_sample(&self, i: usize) -> usize {
        let len = self.shape[1] * self.shape[2];
        self.cells[i * len..(i + 1) * len].iter().filter(|&&c| c).count()
    }

    /// Mask restricted to the listed samples, in that order.
    pub fn rows(&self, indices: &[usize]) -> Result<Self> {
        let len = self.shape[1] * self.shape[2];
        let mut cells = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            if i >= self.shape[0] {
                return Err(shape_err!("row {} out of range for {} samples", i, self.shape[0]));
            }
            cells.extend_from_slice(&self.cells[i * len..(i + 1) * len]);
        }
        Self::new([indices.len(), self.shape[1], self.shape[2]], cells)
    }

    /// 0/1 tensor of the same shape.
    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        Tensor::from_fn(&self.shape, |k| if self.cells[k] { S::one() } else { S::zero() })
    }
}

/// Inputs, targets, ground truth and group labels of one regime.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<S = f64> {
    pub regime: Regime,
    pub seed: u64,
    /// `[N, T, D]`
    pub x: Tensor<S>,
    /// `[N, T]` regression targets or sampled 0/1 labels.
    pub y: Tensor<S>,
    pub truth: TruthMask,
    /// 0 when ungrouped, otherwise 1 or 2.
    pub group: Vec<u8>,
}

impl<S: Scalar> Dataset<S> {
    pub fn validate(&self) -> Result<()> {
        let xs = self.x.shape();
        if xs.len() != 3 {
            return Err(shape_err!("x must be [N, T, D], got {:?}", xs));
        }
        let (n, t, d) = (xs[0], xs[1], xs[2]);
        if self.y.shape() != [n, t] {
            return Err(shape_err!("y shape {:?} does not match x {:?}", self.y.shape(), xs));
        }
        if self.truth.shape() != [n, t, d] {
            return Err(shape_err!("truth shape {:?} does not match x {:?}", self.truth.shape(), xs));
        }
        if self.group.len() != n {
            return Err(shape_err!("{} group labels for {} samples", self.group.len(), n));
        }
        if self.group.iter().any(|&g| g > 2) {
            return Err(Error::Format("group labels must be 0, 1 or 2".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.x.shape();
        (s[0], s[1], s[2])
    }

    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Subset of samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let group = indices.iter().map(|&i| self.group.get(i).copied()).collect::<Option<Vec<_>>>();
        let group = group.ok_or_else(|| shape_err!("subset index out of range"))?;
        Ok(Self {
            regime: self.regime,
            seed: self.seed,
            x: self.x.rows(indices)?,
            y: self.y.rows(indices)?,
            truth: self.truth.rows(indices)?,
            group,
        })
    }

    pub fn cast<T: Scalar>(&self) -> Dataset<T> {
        Dataset {
            regime: self.regime,
            seed: self.seed,
            x: self.x.cast(),
            y: self.y.cast(),
            truth: self.truth.clone(),
            group: self.group.clone(),
        }
    }

    /// Noise-free label probabilities `σ(x[t, d*])`, where `d*` is the single
    /// salient feature at each step. Only meaningful for classification
    /// regimes, whose truth marks exactly one driving cell per step.
    pub fn label_probabilities(&self) -> Result<Tensor<S>> {
        if !self.regime.is_classification() {
            return Err(Error::Config(format!("{} has no label probabilities", self.regime)));
        }
        let (n, t, d) = self.dims();
        let mut p = Tensor::zeros(&[n, t]);
        for i in 0..n {
            for s in 0..t {
                let driver = (0..d)
                    .find(|&j| self.truth.get(i, s, j))
                    .ok_or_else(|| Error::Format(format!("sample {i} step {s} has no driving feature")))?;
                p.set(&[i, s], sigmoid(self.x.at(&[i, s, driver])));
            }
        }
        Ok(p)
    }
}

/// Paper-scale dataset of `regime` for `seed`.
pub fn generate(regime: Regime, seed: u64) -> Result<Dataset> {
    match regime {
        Regime::SwitchFeature => gen_switch_feature(&HmmConfig::switch_feature(), seed),
        Regime::State => gen_state(&HmmConfig::state(), seed),
        r => gen_rare(&RareConfig::paper(r)?, seed),
    }
}

#[cfg(test)]
mod tests;
