//! Stage-graph, cardinality and call-count contracts of both pipelines, run
//! against scripted stub generators and a counting vision encoder.

mod common;

use std::sync::atomic::Ordering;
use std::sync::Arc;

use common::stubs::*;
use rand::Rng;
use safememe::pipeline::h::{run_h_pipeline, Level0};
use safememe::pipeline::qa::{run_qa_pipeline, LabelSource, QaSettings};
use safememe::pipeline::TraceEvent;
use safememe::projector::{Aggregation, ProjectorKind};
use safememe::taxonomy::Category;
use safememe::variants::{registry, variant, ClassifierKind, Family, StageTag, VariantSpec};

fn qa_variants() -> Vec<VariantSpec> {
    registry()
        .into_iter()
        .filter(|v| v.family == Family::Qa)
        .collect()
}

#[test]
fn qa_encodes_vision_once_per_meme_and_pairs_answers_with_questions() {
    let mut rng = common::rng(8);
    for spec in qa_variants() {
        for i in 0..10 {
            let k = rng.gen_range(1..=QaSettings::default().max_questions);
            let vision = Arc::new(CountingVision::default());
            let system = qa_system(&spec, k, vision.clone());
            let r = run_qa_pipeline(&meme(i), &system).unwrap();
            assert_eq!(vision.calls.load(Ordering::SeqCst), 1, "{}", spec.id);
            assert_eq!(r.trace.count(|e| *e == TraceEvent::VisionEncoded), 1);
            assert_eq!(r.answers.len(), r.questions.len(), "{}", spec.id);
            if spec.has(StageTag::Qg0) || spec.has(StageTag::Qg1) || spec.has(StageTag::Qag1) {
                assert_eq!(r.questions.len(), k, "{}", spec.id);
            }
        }
    }
}

#[test]
fn qa_executes_exactly_the_registered_stage_graph() {
    for spec in qa_variants() {
        let system = qa_system(&spec, 3, Arc::new(CountingVision::default()));
        let r = run_qa_pipeline(&meme(0), &system).unwrap();
        assert_eq!(r.trace.stages(), spec.stages, "{}", spec.id);
        let expected_source = match spec.classifier {
            ClassifierKind::Finetuned => LabelSource::FinetunedClassifier,
            _ => LabelSource::Regex,
        };
        assert_eq!(r.label_source, expected_source);
    }
}

#[test]
fn swapping_the_classifier_leaves_questions_and_answers_alone() {
    let regex = variant("M7").unwrap();
    let mut finetuned = regex.clone();
    finetuned.stages = vec![StageTag::Qg0, StageTag::Rg0, StageTag::ClsFt];
    finetuned.classifier = ClassifierKind::Finetuned;
    for i in 0..5 {
        let a = run_qa_pipeline(
            &meme(i),
            &qa_system(&regex, 4, Arc::new(CountingVision::default())),
        )
        .unwrap();
        let b = run_qa_pipeline(
            &meme(i),
            &qa_system(&finetuned, 4, Arc::new(CountingVision::default())),
        )
        .unwrap();
        assert_eq!(a.questions, b.questions);
        assert_eq!(a.answers, b.answers);
        assert_eq!(a.label_source, LabelSource::Regex);
        assert_eq!(b.label_source, LabelSource::FinetunedClassifier);
    }
}

fn h_variants() -> Vec<VariantSpec> {
    registry()
        .into_iter()
        .filter(|v| v.family == Family::H)
        .collect()
}

#[test]
fn benign_at_level_zero_never_decodes_level_one() {
    let mut rng = common::rng(21);
    let variants = h_variants();
    let mut benign_runs = 0;
    for run in 0..100 {
        let spec = &variants[run % variants.len()];
        let stubs = h_system(spec, rng.gen_range(0..2), rng.gen_range(0..2));
        let r = run_h_pipeline(&meme(run), &stubs.system).unwrap();
        let decodes = r
            .trace
            .count(|e| matches!(e, TraceEvent::ClassifierDecode { .. }));
        assert_eq!(stubs.vision.calls.load(Ordering::SeqCst), 1);
        assert_eq!(stubs.level0.decodes.load(Ordering::SeqCst), 1);
        match r.decision.level0() {
            Level0::Benign => {
                benign_runs += 1;
                assert!(r.decision.level1().is_none());
                assert_eq!(decodes, 1, "run {run}");
                assert_eq!(stubs.level1.decodes.load(Ordering::SeqCst), 0, "run {run}");
                assert!(!r.trace.stages().contains(&StageTag::HCls1));
            }
            Level0::Hateful => {
                assert!(r.decision.level1().is_some());
                assert_eq!(decodes, 2);
                assert_eq!(stubs.level1.decodes.load(Ordering::SeqCst), 1);
                assert_eq!(r.trace.stages(), spec.stages);
            }
        }
        assert_eq!(
            r.decision.final_label().is_hateful(),
            r.decision.level0() == Level0::Hateful
        );
    }
    assert!(
        benign_runs > 10 && benign_runs < 90,
        "both branches exercised: {benign_runs}"
    );
}

#[test]
fn projector_banks_run_where_the_variant_declares_them() {
    for spec in h_variants() {
        let stubs = h_system(&spec, 0, 0);
        let r = run_h_pipeline(&meme(1), &stubs.system).unwrap();
        let applied: Vec<String> = r
            .trace
            .events()
            .iter()
            .filter_map(|e| match e {
                TraceEvent::ProjectorApplied(c) => Some(c.clone()),
                _ => None,
            })
            .collect();
        let expected = match spec.projector {
            None => 0,
            Some((ProjectorKind::Generalized, _)) => 1 + 2,
            Some((ProjectorKind::CategorySpecific, _)) => Category::ALL.len() + 2,
        };
        assert_eq!(applied.len(), expected, "{}: {applied:?}", spec.id);
        assert_eq!(r.gdesc.variant_used, spec.projector.map(|(_, a)| a));
        if let Some((ProjectorKind::CategorySpecific, Aggregation::V2)) = spec.projector {
            assert!(stubs
                .system
                .description_bank
                .as_ref()
                .unwrap()
                .scalers()
                .is_some());
        }
    }
}

#[test]
fn family_mismatch_is_reported() {
    let spec = variant("M9").unwrap();
    let system = qa_system(&spec, 2, Arc::new(CountingVision::default()));
    let err = run_qa_pipeline(&meme(0), &system).unwrap_err();
    assert!(
        matches!(err, safememe::Error::VariantMismatch { .. }),
        "{err}"
    );
}
