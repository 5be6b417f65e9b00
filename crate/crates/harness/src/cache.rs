//! Content-addressed storage for trained targets and finished seed results.
//!
//! Keys are SHA-256 digests of a canonical JSON description of everything
//! that determines the stored value, including the crate version. A hit is
//! never recomputed.

use std::path::{Path, PathBuf};

use contralsp_core::datagen::Dataset;
use contralsp_core::models::{train_classifier, GruClassifier, GruParams, PredictModel, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

/// A trained target passes when its predictions agree with the noise-free
/// label rule `σ(x[t, d*]) > 0.5` on more than this fraction of steps.
pub const TARGET_GATE: f64 = 0.80;

/// Hex SHA-256 of the compact JSON encoding of `value`. Object keys are
/// sorted, so equal values always hash equally.
pub fn content_key(value: &impl Serialize) -> Result<String> {
    let canonical = serde_json::to_string(&serde_json::to_value(value)?)?;
    Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_file(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Keyed JSON values under one directory.
#[derive(Clone, Debug)]
pub struct Store {
    dir: PathBuf,
}

impl Store {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path(&self, kind: &str, key: &str) -> PathBuf {
        self.dir.join(kind).join(format!("{key}.json"))
    }

    pub fn get<T: DeserializeOwned>(&self, kind: &str, key: &str) -> Option<T> {
        let path = self.path(kind, key);
        if !path.exists() {
            return None;
        }
        match read_json(&path) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {}: {e}", path.display());
                None
            }
        }
    }

    pub fn put(&self, kind: &str, key: &str, value: &impl Serialize) -> Result<()> {
        write_json(&self.path(kind, key), value)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetInfo {
    pub key: String,
    /// Accuracy against the sampled labels in the last training epoch.
    pub train_accuracy: f64,
    /// Accuracy of the finished model against the sampled labels.
    pub label_accuracy: f64,
    /// Best accuracy any predictor can reach on these labels.
    pub bayes_accuracy: f64,
    /// Agreement with the noise-free label rule.
    pub clean_agreement: f64,
    pub gate_passed: bool,
    pub train_seconds: f64,
}

#[derive(Serialize)]
struct TargetKey<'a> {
    kind: &'static str,
    version: &'static str,
    regime: contralsp_core::datagen::Regime,
    data_seed: u64,
    train: &'a TrainConfig,
}

pub fn target_key(ds: &Dataset, train: &TrainConfig) -> Result<String> {
    content_key(&TargetKey {
        kind: "gru-target",
        version: env!("CARGO_PKG_VERSION"),
        regime: ds.regime,
        data_seed: ds.seed,
        train,
    })
}

/// Quality of a classifier on its own training data.
pub fn assess_target(model: &GruClassifier<f64>, ds: &Dataset) -> Result<(f64, f64, f64)> {
    let clean = ds.label_probabilities()?;
    let pred = model.predict(&ds.x)?;
    let n = pred.numel() as f64;
    let agree = |a: f64, b: f64| (a > 0.5) == (b > 0.5);
    let label = pred.data().iter().zip(ds.y.data()).filter(|(&p, &y)| agree(p, y)).count() as f64 / n;
    let clean_agree = pred.data().iter().zip(clean.data()).filter(|(&p, &c)| agree(p, c)).count() as f64 / n;
    let bayes = clean.data().iter().map(|&c| c.max(1.0 - c)).sum::<f64>() / n;
    Ok((label, bayes, clean_agree))
}

/// The cached target for `(ds, train)` or a freshly trained one.
pub fn load_or_train_target(
    cache: &Store,
    ds: &Dataset,
    train: &TrainConfig,
) -> Result<(GruClassifier<f64>, TargetInfo)> {
    let key = target_key(ds, train)?;
    let params_path = cache.path("targets", &key);
    if let (true, Some(info)) = (params_path.exists(), cache.get::<TargetInfo>("target-info", &key)) {
        log::info!("target {} loaded from cache", &key[..12]);
        let params = GruParams::load(&params_path)?;
        return Ok((GruClassifier::new(params)?, info));
    }
    log::info!("training {} target ({} epochs)", ds.regime, train.epochs);
    let started = std::time::Instant::now();
    let (params, report) = train_classifier(ds, train, ds.seed)?;
    let train_seconds = started.elapsed().as_secs_f64();
    let model = GruClassifier::new(params)?;
    let (label_accuracy, bayes_accuracy, clean_agreement) = assess_target(&model, ds)?;
    let info = TargetInfo {
        key: key.clone(),
        train_accuracy: report.accuracy.last().copied().unwrap_or(0.0),
        label_accuracy,
        bayes_accuracy,
        clean_agreement,
        gate_passed: clean_agreement > TARGET_GATE,
        train_seconds,
    };
    if let Some(dir) = params_path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    model.params.save(&params_path)?;
    cache.put("target-info", &key, &info)?;
    log::info!(
        "target trained in {train_seconds:.0}s: label accuracy {label_accuracy:.3} (Bayes {bayes_accuracy:.3}), \
         clean agreement {clean_agreement:.3}"
    );
    Ok((model, info))
}
