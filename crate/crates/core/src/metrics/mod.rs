//! Evaluation of saliency maps against ground truth and against the model.

mod curves;
mod distribution;
mod information;
mod substitution;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{Regime, TruthMask};
use crate::error::{Error, Result};
use crate::explainers::ExplainerId;
use crate::gradcore::Tensor;
use crate::scalar::Scalar;

pub use curves::{aup_aur, precision_recall, thresholds};
pub use distribution::{distribution_analysis, histogram_kl, DistributionScores, Kde, KL_BINS};
pub use information::{mask_entropy, mask_information, CLIP};
pub use substitution::{
    substitute, substitution_metrics, top_cells, top_count, Substitution, SubstitutionScores,
};

/// How sufficiency is computed; recorded in every report.
pub const SUFF_RULE: &str = "keep-only-top";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub regime: Regime,
    pub seed: u64,
    pub explainer: ExplainerId,
    pub aup: f64,
    pub aur: f64,
    pub i_m: f64,
    pub s_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substitution: Option<SubstitutionEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubstitutionEntry {
    pub top_q: f64,
    pub mode: Substitution,
    pub suff_rule: String,
    pub acc: f64,
    pub ce: f64,
    pub suff: f64,
    pub comp: f64,
}

impl SubstitutionEntry {
    pub fn new(top_q: f64, mode: Substitution, s: SubstitutionScores) -> Self {
        Self {
            top_q,
            mode,
            suff_rule: SUFF_RULE.to_string(),
            acc: s.acc,
            ce: s.ce,
            suff: s.suff,
            comp: s.comp,
        }
    }
}

impl MetricsReport {
    /// Ground-truth metrics for one mask.
    pub fn evaluate<S: Scalar>(
        regime: Regime,
        seed: u64,
        explainer: ExplainerId,
        mask: &Tensor<S>,
        truth: &TruthMask,
    ) -> Result<Self> {
        let (aup, aur) = aup_aur(mask, truth)?;
        Ok(Self {
            regime,
            seed,
            explainer,
            aup,
            aur,
            i_m: mask_information(mask, truth)?,
            s_m: mask_entropy(mask, truth)?,
            substitution: None,
        })
    }

    /// Named scalar values in a fixed order.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![("aup", self.aup), ("aur", self.aur), ("i_m", self.i_m), ("s_m", self.s_m)];
        if let Some(s) = &self.substitution {
            v.extend([("acc", s.acc), ("ce", s.ce), ("suff", s.suff), ("comp", s.comp)]);
        }
        v
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub metric: String,
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
    pub n_seeds: usize,
}

/// Mean and spread of every metric across reports; metrics missing from
/// some reports are aggregated over the reports that have them.
pub fn aggregate(reports: &[MetricsReport]) -> Vec<AggregateRow> {
    let mut order: Vec<&'static str> = Vec::new();
    let mut columns: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (name, v) in r.values() {
            if !columns.contains_key(name) {
                order.push(name);
            }
            columns.entry(name).or_default().push(v);
        }
    }
    order
        .into_iter()
        .map(|name| {
            let vals = &columns[name];
            let (mean, std) = mean_std(vals);
            AggregateRow {
                metric: name.to_string(),
                mean,
                std,
                n_seeds: vals.len(),
            }
        })
        .collect()
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// CSV with header `metric,mean,std,n_seeds`.
pub fn write_aggregate_csv(rows: &[AggregateRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(Error::from)
}
