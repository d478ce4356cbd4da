//! The fourteen pipeline configurations and their stage graphs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projector::{Aggregation, ProjectorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StageTag {
    #[serde(rename = "DGen_QA")]
    DGenQa,
    #[serde(rename = "CG_0")]
    Cg0,
    #[serde(rename = "CG_1")]
    Cg1,
    #[serde(rename = "QAG_1")]
    Qag1,
    #[serde(rename = "QG_0")]
    Qg0,
    #[serde(rename = "QG_1")]
    Qg1,
    #[serde(rename = "RG_0")]
    Rg0,
    #[serde(rename = "RG_1")]
    Rg1,
    #[serde(rename = "CLS_regex")]
    ClsRegex,
    #[serde(rename = "CLS_ft")]
    ClsFt,
    #[serde(rename = "DGen_H")]
    DGenH,
    #[serde(rename = "HCls_0")]
    HCls0,
    #[serde(rename = "HCls_1")]
    HCls1,
}

impl StageTag {
    pub const ALL: [StageTag; 13] = [
        StageTag::DGenQa,
        StageTag::Cg0,
        StageTag::Cg1,
        StageTag::Qag1,
        StageTag::Qg0,
        StageTag::Qg1,
        StageTag::Rg0,
        StageTag::Rg1,
        StageTag::ClsRegex,
        StageTag::ClsFt,
        StageTag::DGenH,
        StageTag::HCls0,
        StageTag::HCls1,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageTag::DGenQa => "DGen_QA",
            StageTag::Cg0 => "CG_0",
            StageTag::Cg1 => "CG_1",
            StageTag::Qag1 => "QAG_1",
            StageTag::Qg0 => "QG_0",
            StageTag::Qg1 => "QG_1",
            StageTag::Rg0 => "RG_0",
            StageTag::Rg1 => "RG_1",
            StageTag::ClsRegex => "CLS_regex",
            StageTag::ClsFt => "CLS_ft",
            StageTag::DGenH => "DGen_H",
            StageTag::HCls0 => "HCls_0",
            StageTag::HCls1 => "HCls_1",
        }
    }

    /// Whether the stage runs a trained generator (as opposed to regex).
    pub fn is_generative(self) -> bool {
        self != StageTag::ClsRegex
    }
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StageTag::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "QA")]
    Qa,
    #[serde(rename = "H")]
    H,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Qa => "QA",
            Family::H => "H",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneMode {
    FullFinetune,
    FrozenPretrained,
}

impl fmt::Display for BackboneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackboneMode::FullFinetune => "full_finetune",
            BackboneMode::FrozenPretrained => "frozen_pretrained",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Regex,
    Finetuned,
    Hierarchical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub id: String,
    pub family: Family,
    pub stages: Vec<StageTag>,
    pub projector: Option<(ProjectorKind, Aggregation)>,
    pub backbone_mode: BackboneMode,
    pub classifier: ClassifierKind,
}

impl VariantSpec {
    pub fn number(&self) -> usize {
        self.id[1..].parse().expect("ids are M<number>")
    }

    pub fn has(&self, stage: StageTag) -> bool {
        self.stages.contains(&stage)
    }

    /// `DGen_QA + QG_1 + RG_1 + CLS_regex` style rendering.
    pub fn stage_graph(&self) -> String {
        self.stages
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join(" + ")
    }

    pub fn projector_label(&self) -> String {
        match self.projector {
            None => "none".to_string(),
            Some((kind, agg)) => format!("{kind} {agg}"),
        }
    }

    pub fn expect_family(&self, family: Family) -> Result<()> {
        if self.family == family {
            Ok(())
        } else {
            Err(Error::VariantMismatch {
                variant: self.id.clone(),
                expected: format!("family {family}"),
                actual: format!("family {}", self.family),
            })
        }
    }
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<4} {:<3} {:<40} projector={:<7} backbone={}",
            self.id,
            self.family,
            self.stage_graph(),
            self.projector_label(),
            self.backbone_mode
        )
    }
}

fn qa(id: usize, stages: &[StageTag]) -> VariantSpec {
    let classifier = if stages.contains(&StageTag::ClsFt) {
        ClassifierKind::Finetuned
    } else {
        ClassifierKind::Regex
    };
    VariantSpec {
        id: format!("M{id}"),
        family: Family::Qa,
        stages: stages.to_vec(),
        projector: None,
        backbone_mode: BackboneMode::FullFinetune,
        classifier,
    }
}

fn h(
    id: usize,
    projector: Option<(ProjectorKind, Aggregation)>,
    backbone_mode: BackboneMode,
) -> VariantSpec {
    VariantSpec {
        id: format!("M{id}"),
        family: Family::H,
        stages: vec![StageTag::DGenH, StageTag::HCls0, StageTag::HCls1],
        projector,
        backbone_mode,
        classifier: ClassifierKind::Hierarchical,
    }
}

/// All fourteen variants, M0 through M13.
pub fn registry() -> Vec<VariantSpec> {
    use BackboneMode::*;
    use StageTag::*;
    let clp = ProjectorKind::CategorySpecific;
    vec![
        qa(0, &[DGenQa, Qag1, ClsRegex]),
        qa(1, &[DGenQa, Qg1, Rg1, ClsRegex]),
        qa(2, &[DGenQa, Qg1, Rg1, ClsFt]),
        qa(3, &[Cg0, ClsFt]),
        qa(4, &[DGenQa, Cg1, ClsFt]),
        qa(5, &[Cg0, Qag1, ClsRegex]),
        qa(6, &[DGenQa, Cg1, Qag1, ClsRegex]),
        qa(7, &[Qg0, Rg0, ClsRegex]),
        h(8, None, FullFinetune),
        h(
            9,
            Some((ProjectorKind::Generalized, Aggregation::V0)),
            FullFinetune,
        ),
        h(10, Some((clp, Aggregation::V1)), FullFinetune),
        h(11, Some((clp, Aggregation::V1)), FrozenPretrained),
        h(12, Some((clp, Aggregation::V2)), FullFinetune),
        h(13, Some((clp, Aggregation::V2)), FrozenPretrained),
    ]
}

/// Looks up a variant by id (`M7`, case-insensitive).
pub fn variant(id: &str) -> Result<VariantSpec> {
    let wanted = id.trim().to_uppercase();
    registry()
        .into_iter()
        .find(|v| v.id == wanted)
        .ok_or_else(|| Error::Config(format!("unknown variant `{id}` (expected M0..M13)")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourteen_unique_ids() {
        let all = registry();
        assert_eq!(all.len(), 14);
        for (i, v) in all.iter().enumerate() {
            assert_eq!(v.number(), i);
        }
    }

    #[test]
    fn family_and_backbone_invariants() {
        for v in registry() {
            assert_eq!(v.family == Family::Qa, v.number() <= 7);
            let frozen = matches!(v.number(), 11 | 13);
            assert_eq!(
                v.backbone_mode == BackboneMode::FrozenPretrained,
                frozen,
                "{}",
                v.id
            );
        }
    }

    #[test]
    fn lookup_and_mismatch() {
        assert_eq!(
            variant("m7").unwrap().stage_graph(),
            "QG_0 + RG_0 + CLS_regex"
        );
        assert!(matches!(variant("M14"), Err(Error::Config(_))));
        assert!(matches!(
            variant("M11").unwrap().expect_family(Family::Qa),
            Err(Error::VariantMismatch { .. })
        ));
    }

    #[test]
    fn stage_tags_round_trip() {
        for t in StageTag::ALL {
            assert_eq!(t.as_str().parse::<StageTag>().unwrap(), t);
            assert_eq!(serde_json::to_string(&t).unwrap(), format!("\"{t}\""));
        }
    }
}
