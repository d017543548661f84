use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::atomic::write_atomic;
use crate::domain::NormStats;

use super::model::Model;
use super::train::History;
use super::{ModelKind, TftConfig, TftError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub model_kind: ModelKind,
    pub config: TftConfig,
    pub norm_stats: NormStats,
    pub tensors: Vec<TensorRecord>,
    pub history: History,
}

impl Checkpoint {
    pub fn from_model(model: &Model, history: &History) -> Checkpoint {
        Checkpoint {
            schema_version: SCHEMA_VERSION,
            model_kind: model.kind,
            config: model.config.clone(),
            norm_stats: model.norm.clone(),
            tensors: model
                .params()
                .iter()
                .map(|(name, t)| TensorRecord { name: name.to_string(), shape: t.shape().to_vec(), values: t.data().to_vec() })
                .collect(),
            history: history.clone(),
        }
    }

    pub fn to_model(&self) -> Result<Model, TftError> {
        let corrupt = |m: String| TftError::CorruptCheckpoint(m);
        let mut model = Model::build(self.config.clone(), self.model_kind, self.norm_stats.clone())
            .map_err(|e| corrupt(e.to_string()))?;
        let params = model.params_mut();
        if self.tensors.len() != params.len() {
            return Err(corrupt(format!("{} tensors, architecture has {}", self.tensors.len(), params.len())));
        }
        for rec in &self.tensors {
            let id = params.id(&rec.name).ok_or_else(|| corrupt(format!("unknown tensor {}", rec.name)))?;
            let t = params.get_mut(id);
            if t.shape() != rec.shape.as_slice() || rec.values.len() != t.numel() {
                return Err(corrupt(format!("tensor {} has shape {:?}, expected {:?}", rec.name, rec.shape, t.shape())));
            }
            if rec.values.iter().any(|v| !v.is_finite()) {
                return Err(corrupt(format!("tensor {} holds non-finite values", rec.name)));
            }
            t.data_mut().copy_from_slice(&rec.values);
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Checkpoint, TftError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| TftError::CorruptCheckpoint(e.to_string()))?;
        match value.get("schema_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(TftError::SchemaVersionMismatch(format!("file has version {v}, expected {SCHEMA_VERSION}")))
            }
            None => return Err(TftError::CorruptCheckpoint("missing schema_version".into())),
        }
        serde_json::from_value(value).map_err(|e| TftError::CorruptCheckpoint(e.to_string()))
    }
}

pub fn save(path: &Path, model: &Model, history: &History) -> Result<(), TftError> {
    write_atomic(path, Checkpoint::from_model(model, history).to_json().as_bytes())?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Model, History), TftError> {
    let text = std::fs::read_to_string(path)?;
    let ckpt = Checkpoint::from_json(&text)?;
    Ok((ckpt.to_model()?, ckpt.history))
}

/// As [`load`], additionally requiring the stored quantile set to equal
/// `quantiles`.
pub fn load_strict(path: &Path, quantiles: &[f64]) -> Result<(Model, History), TftError> {
    let (model, history) = load(path)?;
    if model.config.quantiles != quantiles {
        return Err(TftError::SchemaVersionMismatch(format!(
            "checkpoint quantiles {:?} differ from {:?}",
            model.config.quantiles, quantiles
        )));
    }
    Ok((model, history))
}
