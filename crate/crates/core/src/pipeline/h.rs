//! The hierarchical pipeline: a projector-augmented description stage, then
//! hateful-vs-benign and explicit-vs-implicit decisions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::qa::SharedGenerator;
use super::{
    encode_vision, join_inputs, render_transcript, stage_result, MemeClassifier, Prediction,
    RunTrace, TraceEvent,
};
use crate::backbone::VisionEncoder;
use crate::error::{Error, Result};
use crate::fusion::HiddenSequence;
use crate::label::expect_token;
use crate::meme::{HateLabel, Meme};
use crate::model::SeqGenerator;
use crate::projector::{Aggregation, ProjectorBank};
use crate::variants::{BackboneMode, Family, StageTag, VariantSpec};

pub const LEVEL0_WORDS: [&str; 2] = ["hateful", "benign"];
pub const LEVEL1_WORDS: [&str; 2] = ["explicit", "implicit"];

pub fn level_words(level: u8) -> &'static [&'static str] {
    if level == 0 {
        &LEVEL0_WORDS
    } else {
        &LEVEL1_WORDS
    }
}

/// The gold answer of one level for a label; level 1 has none for benign.
pub fn level_target(level: u8, label: HateLabel) -> Option<&'static str> {
    match (level, label) {
        (0, HateLabel::Benign) => Some("benign"),
        (0, _) => Some("hateful"),
        (_, HateLabel::Explicit) => Some("explicit"),
        (_, HateLabel::Implicit) => Some("implicit"),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GDesc {
    pub text: String,
    /// `None` when the description stage runs without a projector bank.
    pub variant_used: Option<Aggregation>,
    pub backbone_mode: BackboneMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level0 {
    Hateful,
    Benign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchicalDecision {
    level0: Level0,
    level1: Option<HateLabel>,
}

impl HierarchicalDecision {
    pub fn benign() -> Self {
        Self {
            level0: Level0::Benign,
            level1: None,
        }
    }

    /// `level1` must be explicit or implicit.
    pub fn hateful(level1: HateLabel) -> Result<Self> {
        if !level1.is_hateful() {
            return Err(Error::InvalidInput(
                "level-1 decision must be explicit or implicit".into(),
            ));
        }
        Ok(Self {
            level0: Level0::Hateful,
            level1: Some(level1),
        })
    }

    pub fn level0(&self) -> Level0 {
        self.level0
    }

    pub fn level1(&self) -> Option<HateLabel> {
        self.level1
    }

    pub fn final_label(&self) -> HateLabel {
        self.level1.unwrap_or(HateLabel::Benign)
    }
}

fn apply_bank(
    state: crate::fusion::FusedState,
    bank: Option<&ProjectorBank>,
    trace: &mut RunTrace,
) -> Result<crate::fusion::FusedState> {
    match bank {
        None => Ok(state),
        Some(b) => b.apply_traced(&state, &mut |c| {
            trace.push(TraceEvent::ProjectorApplied(c.to_string()))
        }),
    }
}

/// Fuses `(text, image)`, applies the description bank and decodes.
pub fn generate_description(
    text: &str,
    vision: &HiddenSequence,
    bank: Option<&ProjectorBank>,
    generator: &dyn SeqGenerator,
    backbone_mode: BackboneMode,
    trace: &mut RunTrace,
) -> Result<GDesc> {
    let fused = generator.fuse(text, vision)?;
    let memory = apply_bank(fused, bank, trace)?;
    let out = generator.decode(&memory, None)?;
    if out.trim().is_empty() {
        return Err(Error::EmptyGeneration);
    }
    Ok(GDesc {
        text: out,
        variant_used: bank.map(ProjectorBank::aggregation),
        backbone_mode,
    })
}

/// One level of the hierarchy: reads `description [SEP] text`, applies the
/// task projector and decodes a constrained label word.
pub fn classify_level(
    level: u8,
    gdesc: &GDesc,
    text: &str,
    vision: &HiddenSequence,
    task_bank: Option<&ProjectorBank>,
    classifier: &dyn SeqGenerator,
    trace: &mut RunTrace,
) -> Result<&'static str> {
    let words = level_words(level);
    let fused = classifier.fuse(&join_inputs(&gdesc.text, text), vision)?;
    let memory = apply_bank(fused, task_bank, trace)?;
    trace.push(TraceEvent::ClassifierDecode { level });
    let token = classifier.decode(&memory, Some(words))?;
    expect_token(&token, words)
}

pub struct HSystem {
    pub variant: VariantSpec,
    pub vision: Arc<dyn VisionEncoder + Send + Sync>,
    pub describer: SharedGenerator,
    pub description_bank: Option<ProjectorBank>,
    /// Level-0 and level-1 classifiers.
    pub classifiers: [SharedGenerator; 2],
    pub task_banks: [Option<ProjectorBank>; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct HResult {
    pub gdesc: GDesc,
    pub decision: HierarchicalDecision,
    pub trace: RunTrace,
}

impl HResult {
    pub fn transcript_text(&self) -> String {
        let mut entries = vec![
            (StageTag::DGenH, self.gdesc.text.clone()),
            (
                StageTag::HCls0,
                match self.decision.level0() {
                    Level0::Hateful => "hateful".to_string(),
                    Level0::Benign => "benign".to_string(),
                },
            ),
        ];
        if let Some(l1) = self.decision.level1() {
            entries.push((StageTag::HCls1, l1.to_string()));
        }
        render_transcript(&entries)
    }
}

pub fn run_h_pipeline(meme: &Meme, system: &HSystem) -> Result<HResult> {
    let variant = &system.variant;
    variant.expect_family(Family::H)?;
    let mut trace = RunTrace::default();
    let vision = encode_vision(meme, system.vision.as_ref(), &mut trace)?;

    trace.push(TraceEvent::Stage(StageTag::DGenH));
    let gdesc = stage_result(
        StageTag::DGenH,
        generate_description(
            &meme.text,
            &vision,
            system.description_bank.as_ref(),
            system.describer.as_ref(),
            variant.backbone_mode,
            &mut trace,
        ),
    )?;

    trace.push(TraceEvent::Stage(StageTag::HCls0));
    let l0 = stage_result(
        StageTag::HCls0,
        classify_level(
            0,
            &gdesc,
            &meme.text,
            &vision,
            system.task_banks[0].as_ref(),
            system.classifiers[0].as_ref(),
            &mut trace,
        ),
    )?;
    let decision = if l0 == "benign" {
        HierarchicalDecision::benign()
    } else {
        trace.push(TraceEvent::Stage(StageTag::HCls1));
        let l1 = stage_result(
            StageTag::HCls1,
            classify_level(
                1,
                &gdesc,
                &meme.text,
                &vision,
                system.task_banks[1].as_ref(),
                system.classifiers[1].as_ref(),
                &mut trace,
            ),
        )?;
        HierarchicalDecision::hateful(l1.parse()?)?
    };
    Ok(HResult {
        gdesc,
        decision,
        trace,
    })
}

impl MemeClassifier for HSystem {
    fn variant(&self) -> &VariantSpec {
        &self.variant
    }

    fn classify(&self, meme: &Meme) -> Result<Prediction> {
        let r = run_h_pipeline(meme, self)?;
        Ok(Prediction {
            label: r.decision.final_label(),
            transcript: r.transcript_text(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decision_invariants() {
        let b = HierarchicalDecision::benign();
        assert_eq!(b.level1(), None);
        assert_eq!(b.final_label(), HateLabel::Benign);
        let e = HierarchicalDecision::hateful(HateLabel::Explicit).unwrap();
        assert_eq!(e.final_label(), HateLabel::Explicit);
        assert!(HierarchicalDecision::hateful(HateLabel::Benign).is_err());
    }

    #[test]
    fn level_targets() {
        assert_eq!(level_target(0, HateLabel::Implicit), Some("hateful"));
        assert_eq!(level_target(1, HateLabel::Benign), None);
        assert_eq!(level_target(1, HateLabel::Explicit), Some("explicit"));
    }
}
