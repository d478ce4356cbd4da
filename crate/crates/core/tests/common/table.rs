//! Parser for the embedded transcription of the variants table.

use safememe::projector::{Aggregation, ProjectorKind};
use safememe::variants::{BackboneMode, ClassifierKind, Family, StageTag, VariantSpec};

const TABLE: &str = include_str!("../fixtures/variants_table.txt");

pub fn parse_row(line: &str) -> VariantSpec {
    let (id, combination) = line.split_once('|').expect("id | combination");
    let combination = combination.trim();
    let graph = combination
        .rsplit_once(" for ")
        .map_or(combination, |(_, g)| g);
    let stages: Vec<StageTag> = graph
        .split('+')
        .map(|s| {
            s.trim()
                .trim_end_matches('.')
                .parse()
                .unwrap_or_else(|e| panic!("{s}: {e}"))
        })
        .collect();
    let aggregation = |s: &str| match s {
        "v0" => Aggregation::V0,
        "v1" => Aggregation::V1,
        "v2" => Aggregation::V2,
        other => panic!("aggregation {other}"),
    };
    let words: Vec<&str> = combination.split_whitespace().collect();
    let projector = match words.as_slice() {
        ["gLP", "with", v, ..] => Some((ProjectorKind::Generalized, aggregation(v))),
        ["cLPs", "with", v, ..] => Some((ProjectorKind::CategorySpecific, aggregation(v))),
        _ => None,
    };
    let family = if stages.contains(&StageTag::DGenH) {
        Family::H
    } else {
        Family::Qa
    };
    let classifier = if family == Family::H {
        ClassifierKind::Hierarchical
    } else if stages.contains(&StageTag::ClsFt) {
        ClassifierKind::Finetuned
    } else {
        ClassifierKind::Regex
    };
    VariantSpec {
        id: id.trim().to_string(),
        family,
        stages,
        projector,
        backbone_mode: if combination.contains("pre-trained") {
            BackboneMode::FrozenPretrained
        } else {
            BackboneMode::FullFinetune
        },
        classifier,
    }
}

pub fn transcribed() -> Vec<VariantSpec> {
    TABLE
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(parse_row)
        .collect()
}
