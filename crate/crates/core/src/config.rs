//! Flat `key = value` run configuration.
//!
//! Values are layered: built-in defaults, then a config file, then
//! command-line overrides. Blank lines and `#` comments are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::backbone::Decoding;
use crate::error::{Error, Result};
use crate::label::NoMatchPolicy;
use crate::pipeline::qa::ClsInput;
use crate::pipeline::TrainOptions;

/// Directory that holds per-variant checkpoints when nothing else is set.
pub const DEFAULT_CHECKPOINT_ROOT: &str = "checkpoints";
pub const HOME_ENV: &str = "SAFE_MEME_HOME";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub decoding: Decoding,
    pub max_questions: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub projector_epochs: usize,
    pub projector_learning_rate: f64,
    pub pretrain_epochs: usize,
    pub width: usize,
    pub hidden: usize,
    pub cls_input: ClsInput,
    pub no_match: NoMatchPolicy,
    pub checkpoint_root: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub rules: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainOptions::default();
        Self {
            seed: t.train.seed,
            decoding: t.decoding,
            max_questions: t.max_questions,
            learning_rate: t.train.learning_rate,
            epochs: t.train.epochs,
            batch_size: t.train.batch_size,
            projector_epochs: t.projector_epochs,
            projector_learning_rate: t.projector_learning_rate,
            pretrain_epochs: t.pretrain_epochs,
            width: t.model.width,
            hidden: t.model.hidden,
            cls_input: t.cls_input,
            no_match: NoMatchPolicy::default(),
            checkpoint_root: None,
            dataset: None,
            report: None,
            rules: None,
        }
    }
}

/// Keys that change what a run computes. Paths are excluded from the hash.
const HASHED_KEYS: [&str; 13] = [
    "seed",
    "decoding",
    "max_questions",
    "learning_rate",
    "epochs",
    "batch_size",
    "projector_epochs",
    "projector_learning_rate",
    "pretrain_epochs",
    "width",
    "hidden",
    "cls_input",
    "no_match",
];

const PATH_KEYS: [&str; 4] = ["checkpoint_root", "dataset", "report", "rules"];

fn bad(key: &str, value: &str, expected: &str) -> Error {
    Error::Config(format!("`{key}`: expected {expected}, got `{value}`"))
}

fn positive(key: &str, value: &str) -> Result<usize> {
    match value.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(bad(key, value, "a positive integer")),
    }
}

fn positive_real(key: &str, value: &str) -> Result<f64> {
    match value.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
        _ => Err(bad(key, value, "a positive number")),
    }
}

pub fn parse_decoding(value: &str) -> Result<Decoding> {
    let v = value.trim();
    if v == "greedy" {
        return Ok(Decoding::Greedy);
    }
    v.strip_prefix("beam(")
        .and_then(|r| r.strip_suffix(')'))
        .and_then(|k| k.trim().parse::<usize>().ok())
        .filter(|&k| k > 0)
        .map(Decoding::Beam)
        .ok_or_else(|| bad("decoding", value, "`greedy` or `beam(k)`"))
}

pub fn format_decoding(d: Decoding) -> String {
    match d {
        Decoding::Greedy => "greedy".into(),
        Decoding::Beam(k) => format!("beam({k})"),
    }
}

/// Parses config text into key/value pairs. Unknown and repeated keys are
/// errors.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if !HASHED_KEYS.contains(&key) && !PATH_KEYS.contains(&key) {
            return Err(Error::Config(format!(
                "line {}: unknown key `{key}`",
                n + 1
            )));
        }
        if seen.insert(key.to_string(), n + 1).is_some() {
            return Err(Error::Config(format!(
                "line {}: `{key}` is set twice",
                n + 1
            )));
        }
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(PathBuf::from(value));
        match key {
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| bad(key, value, "an unsigned integer"))?
            }
            "decoding" => self.decoding = parse_decoding(value)?,
            "max_questions" => self.max_questions = positive(key, value)?,
            "learning_rate" => self.learning_rate = positive_real(key, value)?,
            "epochs" => self.epochs = positive(key, value)?,
            "batch_size" => self.batch_size = positive(key, value)?,
            "projector_epochs" => self.projector_epochs = positive(key, value)?,
            "projector_learning_rate" => self.projector_learning_rate = positive_real(key, value)?,
            // zero disables pretraining of frozen stubs
            "pretrain_epochs" => {
                self.pretrain_epochs = value
                    .parse()
                    .map_err(|_| bad(key, value, "a non-negative integer"))?
            }
            "width" => self.width = positive(key, value)?,
            "hidden" => self.hidden = positive(key, value)?,
            "cls_input" => {
                self.cls_input = match value {
                    "transcript" => ClsInput::Transcript,
                    "final_answer" => ClsInput::FinalAnswer,
                    _ => return Err(bad(key, value, "`transcript` or `final_answer`")),
                }
            }
            "no_match" => {
                self.no_match = match value {
                    "benign" => NoMatchPolicy::Benign,
                    "strict" => NoMatchPolicy::Strict,
                    _ => return Err(bad(key, value, "`benign` or `strict`")),
                }
            }
            "checkpoint_root" => self.checkpoint_root = path(),
            "dataset" => self.dataset = path(),
            "report" => self.report = path(),
            "rules" => self.rules = path(),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Defaults, overlaid by `file` (config text), overlaid by `overrides`.
    pub fn layered(file: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(text) = file {
            for (k, v) in parse_config(text)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::layered(Some(&text), overrides)
    }

    fn value(&self, key: &str) -> Option<String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        Some(match key {
            "seed" => self.seed.to_string(),
            "decoding" => format_decoding(self.decoding),
            "max_questions" => self.max_questions.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "projector_epochs" => self.projector_epochs.to_string(),
            "projector_learning_rate" => self.projector_learning_rate.to_string(),
            "pretrain_epochs" => self.pretrain_epochs.to_string(),
            "width" => self.width.to_string(),
            "hidden" => self.hidden.to_string(),
            "cls_input" => match self.cls_input {
                ClsInput::Transcript => "transcript".into(),
                ClsInput::FinalAnswer => "final_answer".into(),
            },
            "no_match" => match self.no_match {
                NoMatchPolicy::Benign => "benign".into(),
                NoMatchPolicy::Strict => "strict".into(),
            },
            "checkpoint_root" => return path(&self.checkpoint_root),
            "dataset" => return path(&self.dataset),
            "report" => return path(&self.report),
            "rules" => return path(&self.rules),
            _ => return None,
        })
    }

    /// Canonical text; parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in HASHED_KEYS.iter().chain(PATH_KEYS.iter()) {
            if let Some(v) = self.value(key) {
                writeln!(out, "{key} = {v}").unwrap();
            }
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of the computation-relevant keys.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for key in HASHED_KEYS {
            h.update(format!("{key}={}\n", self.value(key).unwrap_or_default()));
        }
        h.finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn train_options(&self) -> TrainOptions {
        let mut t = TrainOptions::default();
        t.train.seed = self.seed;
        t.train.learning_rate = self.learning_rate;
        t.train.epochs = self.epochs;
        t.train.batch_size = self.batch_size;
        t.decoding = self.decoding;
        t.max_questions = self.max_questions;
        t.projector_epochs = self.projector_epochs;
        t.projector_learning_rate = self.projector_learning_rate;
        t.pretrain_epochs = self.pretrain_epochs;
        t.model.width = self.width;
        t.model.hidden = self.hidden;
        t.cls_input = self.cls_input;
        t
    }

    /// Order: config key, then `SAFE_MEME_HOME`, then the built-in default.
    pub fn resolve_checkpoint_root(&self, home: Option<&str>) -> PathBuf {
        self.checkpoint_root
            .clone()
            .or_else(|| home.filter(|h| !h.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_CHECKPOINT_ROOT))
    }
}
