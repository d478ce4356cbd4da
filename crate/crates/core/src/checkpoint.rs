//! Flat parameter checkpoints: hierarchical names mapped to row-major arrays
//! with their recorded shapes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::projector::{Aggregation, ProjectorBank, ProjectorKind};
use crate::tensor::{Affine, Parameters};

pub const FORMAT: &str = "safe-meme-params v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, TensorRecord>,
}

impl Default for Checkpoint {
    fn default() -> Self {
        Self {
            format: FORMAT.to_string(),
            meta: BTreeMap::new(),
            tensors: BTreeMap::new(),
        }
    }
}

impl Checkpoint {
    pub fn capture<P: Parameters + ?Sized>(params: &P, prefix: &str) -> Self {
        let mut ck = Self::default();
        ck.add(params, prefix);
        ck
    }

    pub fn add<P: Parameters + ?Sized>(&mut self, params: &P, prefix: &str) {
        params.visit(prefix, &mut |name, shape, data| {
            self.tensors.insert(
                name.to_string(),
                TensorRecord {
                    shape: shape.to_vec(),
                    data: data.to_vec(),
                },
            );
        });
    }

    /// Copies every tensor visited under `prefix` from the checkpoint.
    /// Missing names and shape disagreements are errors.
    pub fn restore<P: Parameters + ?Sized>(&self, params: &mut P, prefix: &str) -> Result<()> {
        let mut failure = None;
        params.visit_mut(prefix, &mut |name, shape, data| {
            if failure.is_some() {
                return;
            }
            match self.tensors.get(name) {
                None => failure = Some(Error::CheckpointMissing(format!("tensor `{name}`"))),
                Some(t) if t.shape != shape || t.data.len() != data.len() => {
                    failure = Some(Error::shape(format!(
                        "tensor `{name}` has shape {:?} in the checkpoint, expected {shape:?}",
                        t.shape
                    )))
                }
                Some(t) => data.copy_from_slice(&t.data),
            }
        });
        failure.map_or(Ok(()), Err)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::CheckpointMissing(path.display().to_string())
            } else {
                Error::io(path, e)
            }
        })?;
        let ck: Checkpoint = serde_json::from_str(&raw)?;
        if ck.format != FORMAT {
            return Err(Error::InvalidInput(format!(
                "unsupported checkpoint format `{}`",
                ck.format
            )));
        }
        Ok(ck)
    }

    fn tensor(&self, name: &str) -> Result<&TensorRecord> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::CheckpointMissing(format!("tensor `{name}`")))
    }

    fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::CheckpointMissing(format!("metadata `{key}`")))
    }
}

/// SHA-256 over names, shapes and little-endian values of every parameter.
pub fn parameter_hash<P: Parameters + ?Sized>(params: &P) -> String {
    let mut hasher = Sha256::new();
    params.visit("", &mut |name, shape, data| {
        hasher.update(name.as_bytes());
        for s in shape {
            hasher.update((*s as u64).to_le_bytes());
        }
        for v in data {
            hasher.update(v.to_le_bytes());
        }
    });
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Serialises a projector bank as a standalone checkpoint keyed by `key`.
pub fn bank_checkpoint(bank: &ProjectorBank, key: &str) -> Checkpoint {
    let mut ck = Checkpoint::capture(bank, "bank");
    ck.meta.insert("key".into(), key.to_string());
    ck.meta.insert("kind".into(), bank.kind().to_string());
    ck.meta
        .insert("aggregation".into(), bank.aggregation().to_string());
    ck.meta.insert("width".into(), bank.width().to_string());
    ck.meta
        .insert("categories".into(), bank.categories().join(","));
    ck
}

pub fn bank_from_checkpoint(ck: &Checkpoint) -> Result<ProjectorBank> {
    let kind = match ck.meta("kind")? {
        "gLP" => ProjectorKind::Generalized,
        "cLP" => ProjectorKind::CategorySpecific,
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown projector kind `{other}`"
            )))
        }
    };
    let aggregation = match ck.meta("aggregation")? {
        "v0" => Aggregation::V0,
        "v1" => Aggregation::V1,
        "v2" => Aggregation::V2,
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown aggregation `{other}`"
            )))
        }
    };
    let categories: Vec<String> = ck
        .meta("categories")?
        .split(',')
        .map(str::to_string)
        .collect();
    let width = ck
        .tensor(&format!("bank.{}.proj.bias", categories[0]))?
        .shape[0];
    let projectors = categories
        .iter()
        .map(|_| Affine::zeros(width, width))
        .collect();
    let scalers = match aggregation {
        Aggregation::V2 => {
            for c in &categories {
                if !ck.tensors.contains_key(&format!("bank.{c}.scaler.weight")) {
                    return Err(Error::MissingScaler(c.clone()));
                }
            }
            Some(categories.iter().map(|_| Affine::zeros(width, 1)).collect())
        }
        _ => None,
    };
    let mut bank = ProjectorBank::new(kind, aggregation, categories, projectors, scalers)?;
    ck.restore(&mut bank, "bank")?;
    Ok(bank)
}
