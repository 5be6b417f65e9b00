use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "contralsp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named tensors plus free-form metadata, stored as one JSON document.
///
/// Floats are printed in shortest round-trip form and parsed exactly, so a
/// save/load cycle reproduces every bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint<S> {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: kind.into(),
            meta,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, t: &Tensor<S>) {
        self.tensors.insert(name.into(), t.clone());
    }

    pub fn take(&mut self, name: &str) -> Result<Tensor<S>> {
        self.tensors
            .remove(name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor `{name}`")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str, kind: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint header {} v{}",
                ck.format, ck.version
            )));
        }
        if ck.kind != kind {
            return Err(Error::Format(format!("expected a `{kind}` checkpoint, found `{}`", ck.kind)));
        }
        for (name, t) in &ck.tensors {
            if t.shape().iter().product::<usize>() != t.data().len() {
                return Err(Error::Format(format!("tensor `{name}` shape does not match its data")));
            }
            if !t.all_finite() {
                return Err(Error::Format(format!("tensor `{name}` holds non-finite values")));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path, kind: &str) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?, kind)
    }
}
