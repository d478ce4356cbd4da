//! On-disk layout of a trained variant:
//!
//! ```text
//! <dir>/system.json        variant, options, provenance
//! <dir>/vocab.json
//! <dir>/model.<key>.json   one per stage model
//! <dir>/bank.<key>.json    one per projector bank
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::training::{TrainOptions, TrainSummary, TrainedSystem};
use crate::backbone::Vocab;
use crate::checkpoint::{bank_checkpoint, bank_from_checkpoint, Checkpoint};
use crate::error::{Error, Result};
use crate::model::Seq2Seq;
use crate::variants::{variant, VariantSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemMeta {
    pub variant: String,
    pub family: String,
    pub options: TrainOptions,
    pub seed: u64,
    pub config_hash: String,
    pub models: Vec<String>,
    pub banks: Vec<String>,
    pub summary: TrainSummary,
}

const META_FILE: &str = "system.json";
const VOCAB_FILE: &str = "vocab.json";

pub fn save_system(system: &TrainedSystem, dir: &Path, config_hash: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    system.vocab.save(&dir.join(VOCAB_FILE))?;
    for (key, model) in &system.models {
        model
            .to_checkpoint()
            .save(&dir.join(format!("model.{key}.json")))?;
    }
    for (key, bank) in &system.banks {
        bank_checkpoint(bank, key).save(&dir.join(format!("bank.{key}.json")))?;
    }
    let meta = SystemMeta {
        variant: system.variant.id.clone(),
        family: system.variant.family.to_string(),
        options: system.options.clone(),
        seed: system.options.train.seed,
        config_hash: config_hash.to_string(),
        models: system.models.keys().cloned().collect(),
        banks: system.banks.keys().cloned().collect(),
        summary: system.summary.clone(),
    };
    let path = dir.join(META_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
}

pub fn read_meta(dir: &Path) -> Result<SystemMeta> {
    let path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::CheckpointMissing(path.display().to_string())
        } else {
            Error::io(&path, e)
        }
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads the system saved in `dir`, which must hold a checkpoint of
/// `expected`.
pub fn load_system(dir: &Path, expected: &VariantSpec) -> Result<TrainedSystem> {
    let meta = read_meta(dir)?;
    if meta.variant != expected.id {
        return Err(Error::VariantMismatch {
            variant: expected.id.clone(),
            expected: format!("a checkpoint of family {}", expected.family),
            actual: format!("a checkpoint of {} ({})", meta.variant, meta.family),
        });
    }
    let spec = variant(&meta.variant)?;
    let vocab = Arc::new(Vocab::load(&dir.join(VOCAB_FILE)).map_err(|e| match e {
        Error::Io { path, .. } => Error::CheckpointMissing(path.display().to_string()),
        other => other,
    })?);
    let mut models = BTreeMap::new();
    for key in &meta.models {
        let ck = Checkpoint::load(&dir.join(format!("model.{key}.json")))?;
        models.insert(
            key.clone(),
            Arc::new(Seq2Seq::from_checkpoint(&ck, vocab.clone())?),
        );
    }
    let mut banks = BTreeMap::new();
    for key in &meta.banks {
        let ck = Checkpoint::load(&dir.join(format!("bank.{key}.json")))?;
        banks.insert(key.clone(), bank_from_checkpoint(&ck)?);
    }
    Ok(TrainedSystem {
        variant: spec,
        vocab,
        options: meta.options,
        models,
        banks,
        summary: meta.summary,
    })
}
