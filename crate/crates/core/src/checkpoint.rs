//! Versioned JSON checkpoints. Floats are written with shortest round-trip
//! formatting, so save then load reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conditioning::{ConditioningMode, LemoleModel, ModelSpec};
use crate::error::{Error, Result};
use crate::experts::ExpertDomain;
use crate::params::Parameterized;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub domain_tag: ExpertDomain,
    pub window_lengths: Vec<usize>,
    pub horizon: usize,
    pub channels: usize,
    pub conditioning_mode: ConditioningMode,
    pub spec: ModelSpec,
    pub param_count: usize,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &LemoleModel) -> Self {
        let spec = model.spec.clone();
        Self {
            version: FORMAT_VERSION,
            domain_tag: spec.domain,
            window_lengths: spec.window_lengths.clone(),
            horizon: spec.horizon,
            channels: spec.channels,
            conditioning_mode: spec.mode,
            param_count: model.count_params(),
            tensors: model
                .tensors()
                .into_iter()
                .map(|t| TensorRecord { name: t.name, shape: t.shape, data: t.data.to_vec() })
                .collect(),
            spec,
        }
    }

    /// Rebuilds the model; every tensor must match by name, order and shape.
    pub fn into_model(self) -> Result<LemoleModel> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let s = &self.spec;
        if s.domain != self.domain_tag
            || s.window_lengths != self.window_lengths
            || s.horizon != self.horizon
            || s.channels != self.channels
            || s.mode != self.conditioning_mode
        {
            return Err(Error::Checkpoint("header disagrees with embedded spec".into()));
        }
        let mut model = LemoleModel::init(self.spec.clone(), 0)?;
        let slots = model.tensors_mut();
        if slots.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, found {}", slots.len(), self.tensors.len())));
        }
        for (slot, rec) in slots.into_iter().zip(&self.tensors) {
            if slot.name != rec.name || slot.shape != rec.shape || slot.data.len() != rec.data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    rec.name, rec.shape, slot.name, slot.shape
                )));
            }
            slot.data.copy_from_slice(&rec.data);
        }
        if model.count_params() != self.param_count {
            return Err(Error::Checkpoint("param_count mismatch".into()));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn save(model: &LemoleModel, path: &Path) -> Result<()> {
    let json = Checkpoint::from_model(model).to_json()?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<LemoleModel> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    ck.into_model()
}
