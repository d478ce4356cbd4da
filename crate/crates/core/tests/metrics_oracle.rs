mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use safememe::eval::{compute_metrics, MetricsReport};
use safememe::meme::HateLabel::{self, *};

pub fn oracle_agrees(report: &MetricsReport, preds: &[HateLabel], golds: &[HateLabel]) -> bool {
    let counts = brute_force_counts(preds, golds);
    let mut macro_sum = (0.0, 0.0, 0.0);
    for (c, &(tp, predicted, gold)) in counts.iter().enumerate() {
        let (p, r, f) = brute_force_scores(tp, predicted, gold);
        let s = report.per_class[c];
        if (s.precision, s.recall, s.f1) != (p, r, f) {
            return false;
        }
        macro_sum = (macro_sum.0 + p, macro_sum.1 + r, macro_sum.2 + f);
    }
    let m = report.macro_avg;
    (m.precision, m.recall, m.f1) == (macro_sum.0 / 3.0, macro_sum.1 / 3.0, macro_sum.2 / 3.0)
        && report.n == preds.len()
}

#[test]
fn thousand_random_cases_match_brute_force_exactly() {
    let mut r = rng(5);
    for case in 0..1000 {
        let n = r.gen_range(1..=50);
        let preds = random_labels(n, &mut r);
        let golds = random_labels(n, &mut r);
        let report = compute_metrics(&preds, &golds).unwrap();
        assert!(
            oracle_agrees(&report, &preds, &golds),
            "case {case}: {preds:?} vs {golds:?}"
        );
    }
}

#[test]
fn hand_derived_three_example_case() {
    let r = compute_metrics(
        &[Explicit, Explicit, Implicit],
        &[Explicit, Implicit, Implicit],
    )
    .unwrap();
    assert!((r.macro_avg.f1 - 4.0 / 9.0).abs() < 1e-12);
}

fn pairs() -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0..3usize, 0..3usize), 1..=50)
}

fn split(p: &[(usize, usize)]) -> (Vec<HateLabel>, Vec<HateLabel>) {
    p.iter()
        .map(|&(a, b)| (HateLabel::ALL[a], HateLabel::ALL[b]))
        .unzip()
}

proptest! {
    #[test]
    fn joint_shuffle_leaves_report_unchanged(p in pairs(), seed in any::<u64>()) {
        let (preds, golds) = split(&p);
        let mut shuffled = p.clone();
        let mut r = rng(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, r.gen_range(0..=i));
        }
        let (sp, sg) = split(&shuffled);
        prop_assert_eq!(compute_metrics(&preds, &golds).unwrap(), compute_metrics(&sp, &sg).unwrap());
    }

    #[test]
    fn breaking_a_correct_prediction_never_raises_recall(p in pairs(), pick in any::<prop::sample::Index>(), shift in 1..3usize) {
        let (mut preds, golds) = split(&p);
        let correct: Vec<usize> = (0..preds.len()).filter(|&i| preds[i] == golds[i]).collect();
        prop_assume!(!correct.is_empty());
        let before = compute_metrics(&preds, &golds).unwrap();
        let i = correct[pick.index(correct.len())];
        preds[i] = HateLabel::ALL[(preds[i].index() + shift) % 3];
        let after = compute_metrics(&preds, &golds).unwrap();
        for c in 0..3 {
            prop_assert!(after.per_class[c].recall <= before.per_class[c].recall);
        }
    }
}
