//! Experiment configuration files.
//!
//! A config is a JSON object with a `schema_version` field; unknown keys
//! are rejected at every level. Explainer settings start from the regime's
//! reference values and `contralsp` overrides individual fields.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use contralsp_core::datagen::Regime;
use contralsp_core::explainers::{ContraConfig, ExplainerId};
use contralsp_core::metrics::Substitution;
use contralsp_core::models::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Samples explained per seed in the classification regimes.
pub const DEFAULT_EXPLAIN_SAMPLES: usize = 100;

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_explainers() -> Vec<ExplainerId> {
    vec![ExplainerId::Contralsp]
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubstitutionSettings {
    pub top_q: f64,
    #[serde(default)]
    pub mode: Substitution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportSettings {
    /// One `sample,time,feature,value` CSV per explainer and seed.
    pub saliency_csv: bool,
    pub heatmaps: bool,
    /// Number of leading samples drawn as heatmaps.
    pub heatmap_samples: usize,
}

impl Default for ExportSettings {
    fn default() -> Self {
        Self {
            saliency_csv: true,
            heatmaps: false,
            heatmap_samples: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub regime: Regime,
    #[serde(default = "default_explainers")]
    pub explainers: Vec<ExplainerId>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Field-wise overrides of the regime's explainer settings.
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub contralsp: Map<String, Value>,
    /// Training of the classification target.
    #[serde(default)]
    pub target: TrainConfig,
    /// Classification regimes draw one dataset from this seed and train one
    /// target on it; explainer seeds then vary the explained subset and the
    /// explainer's own randomness. Rare regimes draw data per seed.
    #[serde(default)]
    pub data_seed: u64,
    /// Explained samples per seed for classification regimes; rare regimes
    /// always explain the whole batch.
    #[serde(default)]
    pub explain_samples: Option<usize>,
    #[serde(default)]
    pub substitution: Option<SubstitutionSettings>,
    /// Score learned perturbations against fixed-fill and shifted controls.
    #[serde(default)]
    pub distribution: bool,
    #[serde(default)]
    pub export: ExportSettings,
    /// Checkpoints of trained targets; defaults to `<out_dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(regime: Regime) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            regime,
            explainers: default_explainers(),
            seeds: default_seeds(),
            out_dir: default_out(),
            contralsp: Map::new(),
            target: TrainConfig::default(),
            data_seed: 0,
            explain_samples: None,
            substitution: None,
            distribution: false,
            export: ExportSettings::default(),
            cache_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.explainers.is_empty() {
            return bad("at least one explainer is required".into());
        }
        if self.explainers.iter().collect::<BTreeSet<_>>().len() != self.explainers.len() {
            return bad("explainers must be distinct".into());
        }
        if self.explain_samples == Some(0) {
            return bad("explain_samples must be positive".into());
        }
        if let Some(s) = &self.substitution {
            if !self.regime.is_classification() {
                return bad(format!("substitution metrics need a classifier; {} is a regression regime", self.regime));
            }
            if !(s.top_q > 0.0 && s.top_q < 1.0) {
                return bad(format!("top_q must lie in (0, 1), got {}", s.top_q));
            }
        }
        if self.distribution && !self.explainers.contains(&ExplainerId::Contralsp) {
            return bad("distribution analysis needs the contralsp explainer".into());
        }
        self.contra_config()?;
        Ok(())
    }

    /// Reference settings for the regime with the overrides applied.
    pub fn contra_config(&self) -> Result<ContraConfig> {
        let mut base = serde_json::to_value(ContraConfig::for_regime(self.regime))?;
        let obj = base.as_object_mut().expect("struct serialises to an object");
        for (k, v) in &self.contralsp {
            obj.insert(k.clone(), v.clone());
        }
        let cfg: ContraConfig =
            serde_json::from_value(base).map_err(|e| HarnessError::Config(format!("contralsp: {e}")))?;
        cfg.validate().map_err(|e| HarnessError::Config(format!("contralsp: {e}")))?;
        Ok(cfg)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out_dir.join("cache"))
    }

    pub fn explain_count(&self, available: usize) -> usize {
        if self.regime.is_classification() {
            self.explain_samples.unwrap_or(DEFAULT_EXPLAIN_SAMPLES).min(available)
        } else {
            available
        }
    }
}
