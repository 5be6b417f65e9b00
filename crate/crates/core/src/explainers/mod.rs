//! Saliency explainers: the learned sparse-gate explainer and the
//! occlusion and gradient baselines.

mod baselines;
mod contralsp;
pub mod gates;
mod perturb;
mod trend;
pub mod triplet;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::gradcore::Tensor;
use crate::scalar::Scalar;

pub use baselines::{baseline_afo, baseline_fo, baseline_ig, integrated_gradients, AFO_DRAWS, IG_STEPS};
pub use contralsp::{
    fit_contralsp, gate_noise, infer_mask, objective_gradients, objective_value, perturbation, ContraConfig, FitOutcome,
    LossTerms, MaskState, MASK_STATE_KIND,
};
pub use gates::{apply_perturbation, reg_term, smooth_mu, sparse_gate, Reduction};
pub use perturb::{PerturbKind, PerturbNet};
pub use trend::TrendNet;
pub use triplet::{
    contrastive_loss, distance, select_triplets, two_medians, Clustering, Distance, HingeSign, TripletCounts,
    TripletSelection, TripletSet,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplainerId {
    Contralsp,
    Fo,
    Afo,
    Ig,
}

impl ExplainerId {
    pub const ALL: [ExplainerId; 4] = [ExplainerId::Contralsp, ExplainerId::Fo, ExplainerId::Afo, ExplainerId::Ig];

    pub fn name(self) -> &'static str {
        match self {
            ExplainerId::Contralsp => "contralsp",
            ExplainerId::Fo => "fo",
            ExplainerId::Afo => "afo",
            ExplainerId::Ig => "ig",
        }
    }
}

impl fmt::Display for ExplainerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExplainerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown explainer `{s}`")))
    }
}

/// Per-cell importance `[N,T,D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap<S = f64> {
    values: Tensor<S>,
}

impl<S: Scalar> SaliencyMap<S> {
    pub fn new(values: Tensor<S>) -> Result<Self> {
        if values.shape().len() != 3 {
            return Err(shape_err!("saliency map must be [N,T,D], got {:?}", values.shape()));
        }
        if !values.all_finite() {
            return Err(Error::Numerics { op: "saliency" });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Tensor<S> {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor<S> {
        self.values
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.values.shape();
        [s[0], s[1], s[2]]
    }

    /// Min-max rescaling to [0, 1] within each sample; a constant sample
    /// maps to all zeros.
    pub fn normalized(&self) -> Self {
        let [n, t, d] = self.shape();
        let len = t * d;
        let mut data = self.values.data().to_vec();
        for i in 0..n {
            let row = &mut data[i * len..(i + 1) * len];
            let lo = row.iter().copied().fold(S::infinity(), S::min);
            let hi = row.iter().copied().fold(S::neg_infinity(), S::max);
            let span = hi - lo;
            for v in row.iter_mut() {
                *v = if span > S::zero() { (*v - lo) / span } else { S::zero() };
            }
        }
        Self {
            values: Tensor::new(vec![n, t, d], data).expect("same shape"),
        }
    }

    pub fn all_in_unit(&self) -> bool {
        self.values.data().iter().all(|&v| v >= S::zero() && v <= S::one())
    }

    pub fn rows(&self, indices: &[usize]) -> Result<Self> {
        Self::new(self.values.rows(indices)?)
    }

    /// CSV with header `sample,time,feature,value`, one row per cell.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sample", "time", "feature", "value"])?;
        let [n, t, d] = self.shape();
        for i in 0..n {
            for s in 0..t {
                for f in 0..d {
                    let v = self.values.at(&[i, s, f]).as_f64();
                    w.write_record([i.to_string(), s.to_string(), f.to_string(), format!("{v:?}")])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        if r.headers()?.iter().collect::<Vec<_>>() != ["sample", "time", "feature", "value"] {
            return Err(Error::Format("saliency CSV must have header sample,time,feature,value".into()));
        }
        let mut cells = Vec::new();
        for rec in r.deserialize::<(usize, usize, usize, f64)>() {
            cells.push(rec?);
        }
        let dim = |k: fn(&(usize, usize, usize, f64)) -> usize| cells.iter().map(k).max().map_or(0, |m| m + 1);
        let (n, t, d) = (dim(|c| c.0), dim(|c| c.1), dim(|c| c.2));
        if cells.len() != n * t * d {
            return Err(Error::Format(format!("{} rows cannot fill a {n}x{t}x{d} map", cells.len())));
        }
        let mut values = Tensor::zeros(&[n, t, d]);
        let mut seen = vec![false; n * t * d];
        for (i, s, f, v) in cells {
            let k = (i * t + s) * d + f;
            if std::mem::replace(&mut seen[k], true) {
                return Err(Error::Format(format!("duplicate cell ({i},{s},{f})")));
            }
            values.set(&[i, s, f], S::lit(v));
        }
        Self::new(values)
    }
}
