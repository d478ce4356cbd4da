//! The two staged reasoning pipelines, their trainers and on-disk systems.

pub mod h;
pub mod qa;
mod store;
mod training;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backbone::VisionEncoder;
use crate::error::{Error, Result};
use crate::fusion::HiddenSequence;
use crate::meme::{HateLabel, Meme};
use crate::variants::{StageTag, VariantSpec};

pub use store::{load_system, read_meta, save_system, SystemMeta};
pub use training::{
    build_vocab, encode_records, qa_stage_examples, train_projector_offline, train_qa_stage,
    train_system, ProjectorObjective, TrainOptions, TrainSummary, TrainedSystem, Upstream,
    VisionCache,
};

/// Joins a generated description (or context) with the text it describes.
pub const INPUT_SEP: &str = " [SEP] ";

pub fn join_inputs(prefix: &str, text: &str) -> String {
    format!("{prefix}{INPUT_SEP}{text}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceEvent {
    VisionEncoded,
    Stage(StageTag),
    ProjectorApplied(String),
    ClassifierDecode { level: u8 },
}

/// What a pipeline run did, in order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTrace {
    events: Vec<TraceEvent>,
}

impl RunTrace {
    pub fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    /// Stage tags in execution order, without repeats of consecutive calls.
    pub fn stages(&self) -> Vec<StageTag> {
        let mut out: Vec<StageTag> = Vec::new();
        for e in &self.events {
            if let TraceEvent::Stage(s) = e {
                if out.last() != Some(s) {
                    out.push(*s);
                }
            }
        }
        out
    }

    pub fn count(&self, pred: impl Fn(&TraceEvent) -> bool) -> usize {
        self.events.iter().filter(|e| pred(e)).count()
    }
}

/// Encodes the meme's image once; every stage reuses the result.
pub fn encode_vision(
    meme: &Meme,
    encoder: &dyn VisionEncoder,
    trace: &mut RunTrace,
) -> Result<Arc<HiddenSequence>> {
    let image = meme.image.load()?;
    let h = encoder.encode(&image)?;
    trace.push(TraceEvent::VisionEncoded);
    Ok(Arc::new(h))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: HateLabel,
    /// Stage-tagged generations, one per line.
    pub transcript: String,
}

/// A fully assembled variant that maps a meme to a label.
pub trait MemeClassifier {
    fn variant(&self) -> &VariantSpec;
    fn classify(&self, meme: &Meme) -> Result<Prediction>;
}

pub(crate) fn stage_result<T>(stage: StageTag, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(stage.as_str()))
}

pub(crate) fn missing_stage(stage: StageTag) -> Error {
    Error::CheckpointMissing(format!("no generator loaded for stage {stage}"))
}

pub(crate) fn render_transcript(entries: &[(StageTag, String)]) -> String {
    entries.iter().map(|(s, t)| format!("{s}: {t}\n")).collect()
}
