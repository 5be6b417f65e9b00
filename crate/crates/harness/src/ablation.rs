//! Component ablations and hyperparameter sweeps of the learned explainer.

use std::fmt;
use std::str::FromStr;

use contralsp_core::explainers::{Distance, ExplainerId};
use contralsp_core::metrics::AggregateRow;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::cache::write_file;
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::experiment::{run_experiment_with, ExperimentSummary, RunOptions};

#[derive(Clone, Debug, PartialEq)]
pub enum Toggle {
    /// β = 0: no contrastive term.
    NoTriplet,
    /// Trend smoothing bypassed, `μ' = μ`.
    NoTrend,
    /// Both of the above.
    Both,
    Distance(Distance),
    /// Cross product of α and β values.
    Sweep { alphas: Vec<f64>, betas: Vec<f64> },
}

fn parse_list(s: &str, name: &str) -> Result<Vec<f64>> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| HarnessError::Config(format!("sweep {name}: {e}")))?;
    if vals.is_empty() {
        return Err(HarnessError::Config(format!("sweep {name} is empty")));
    }
    Ok(vals)
}

impl FromStr for Toggle {
    type Err = HarnessError;

    /// `no-triplet`, `no-trend`, `both`, `distance=<manhattan|euclidean|cosine>`
    /// or `sweep:alpha=0.1,1;beta=0.5,2`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no-triplet" => return Ok(Toggle::NoTriplet),
            "no-trend" => return Ok(Toggle::NoTrend),
            "both" => return Ok(Toggle::Both),
            _ => {}
        }
        if let Some(d) = s.strip_prefix("distance=") {
            let d: Distance = serde_json::from_value(Value::String(d.into()))
                .map_err(|_| HarnessError::Config(format!("unknown distance `{d}`")))?;
            return Ok(Toggle::Distance(d));
        }
        if let Some(rest) = s.strip_prefix("sweep:") {
            let (mut alphas, mut betas) = (None, None);
            for part in rest.split(';') {
                match part.split_once('=') {
                    Some(("alpha", v)) => alphas = Some(parse_list(v, "alpha")?),
                    Some(("beta", v)) => betas = Some(parse_list(v, "beta")?),
                    _ => return Err(HarnessError::Config(format!("bad sweep term `{part}`"))),
                }
            }
            return match (alphas, betas) {
                (Some(alphas), Some(betas)) => Ok(Toggle::Sweep { alphas, betas }),
                _ => Err(HarnessError::Config("a sweep needs both alpha= and beta= lists".into())),
            };
        }
        Err(HarnessError::Config(format!("unknown ablation toggle `{s}`")))
    }
}

impl fmt::Display for Toggle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Toggle::NoTriplet => f.write_str("no-triplet"),
            Toggle::NoTrend => f.write_str("no-trend"),
            Toggle::Both => f.write_str("both"),
            Toggle::Distance(d) => write!(f, "distance={}", distance_name(*d)),
            Toggle::Sweep { alphas, betas } => {
                let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
                write!(f, "sweep:alpha={};beta={}", list(alphas), list(betas))
            }
        }
    }
}

fn distance_name(d: Distance) -> String {
    serde_json::to_value(d).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

/// A named set of explainer overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub label: String,
    pub overrides: Map<String, Value>,
}

fn variant(label: impl Into<String>, pairs: &[(&str, Value)]) -> Variant {
    Variant {
        label: label.into(),
        overrides: pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
    }
}

impl Toggle {
    pub fn variants(&self) -> Vec<Variant> {
        match self {
            Toggle::NoTriplet => vec![variant("no-triplet", &[("beta", json!(0.0))])],
            Toggle::NoTrend => vec![variant("no-trend", &[("trend", json!(false))])],
            Toggle::Both => vec![variant("both", &[("beta", json!(0.0)), ("trend", json!(false))])],
            Toggle::Distance(d) => vec![variant(self.to_string(), &[("distance", json!(distance_name(*d)))])],
            Toggle::Sweep { alphas, betas } => alphas
                .iter()
                .flat_map(|&a| {
                    betas
                        .iter()
                        .map(move |&b| variant(format!("alpha={a},beta={b}"), &[("alpha", json!(a)), ("beta", json!(b))]))
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub label: String,
    pub aggregate: Vec<AggregateRow>,
    pub partial: bool,
}

impl VariantResult {
    pub fn row(&self, metric: &str) -> Option<&AggregateRow> {
        self.aggregate.iter().find(|r| r.metric == metric)
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.row(metric).map(|r| r.mean)
    }

    pub fn n_seeds(&self) -> usize {
        self.aggregate.first().map_or(0, |r| r.n_seeds)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub regime: contralsp_core::datagen::Regime,
    /// `full` first, then every toggle's variants in order.
    pub variants: Vec<VariantResult>,
}

impl AblationTable {
    pub fn variant(&self, label: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.label == label)
    }

    /// Long-format CSV `variant,metric,mean,std,n_seeds`.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["variant", "metric", "mean", "std", "n_seeds"])?;
        for v in &self.variants {
            for r in &v.aggregate {
                w.write_record([
                    v.label.clone(),
                    r.metric.clone(),
                    format!("{:?}", r.mean),
                    format!("{:?}", r.std),
                    r.n_seeds.to_string(),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?;
        write_file(path, &String::from_utf8_lossy(&bytes))
    }
}

/// The configuration a variant runs with: only the learned explainer, its
/// own output directory, and the shared cache.
pub fn variant_config(base: &ExperimentConfig, v: &Variant) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.explainers = vec![ExplainerId::Contralsp];
    cfg.cache_dir = Some(base.cache_dir());
    cfg.out_dir = base.out_dir.join("ablation").join(&v.label);
    for (k, val) in &v.overrides {
        cfg.contralsp.insert(k.clone(), val.clone());
    }
    cfg
}

fn summarize(label: &str, s: &ExperimentSummary) -> VariantResult {
    VariantResult {
        label: label.to_string(),
        aggregate: s.explainer(ExplainerId::Contralsp).map(|e| e.aggregate.clone()).unwrap_or_default(),
        partial: s.partial,
    }
}

/// Runs the unmodified explainer and every toggle's variants over the
/// configured seeds and writes `ablation.csv` and `ablation.md`.
pub fn run_ablation(base: &ExperimentConfig, toggles: &[Toggle], opts: &RunOptions) -> Result<AblationTable> {
    if toggles.is_empty() {
        return Err(HarnessError::Config("no ablation toggle given".into()));
    }
    let mut variants = vec![variant("full", &[])];
    variants.extend(toggles.iter().flat_map(Toggle::variants));
    let mut results = Vec::new();
    for v in &variants {
        let cfg = variant_config(base, v);
        cfg.validate()?;
        log::info!("ablation {}: {}", base.regime, v.label);
        let summary = run_experiment_with(&cfg, opts)?;
        results.push(summarize(&v.label, &summary));
    }
    let table = AblationTable {
        regime: base.regime,
        variants: results,
    };
    let dir = base.out_dir.join("ablation");
    table.write_csv(&dir.join("ablation.csv"))?;
    write_file(&dir.join("ablation.md"), &crate::tables::ablation_markdown(&table))?;
    Ok(table)
}
