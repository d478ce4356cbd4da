mod common;

use std::collections::HashSet;

use common::corpus::*;
use safememe::data::{load_dataset, read_manifest, SourceDataset, Split};
use safememe::meme::HateLabel;
use safememe::Error;

#[test]
fn mhs_with_published_totals_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_manifest(dir.path(), "MHS", &mhs_records());
    let ds = load_dataset(&path, SourceDataset::Mhs).unwrap();
    assert_eq!(ds.len(), 3343);
    assert_eq!(ds.split(Split::Train).count(), 2233);
}

#[test]
fn mhs_split_total_off_by_one_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut records = mhs_records();
    records.pop();
    let path = write_manifest(dir.path(), "MHS", &records);
    let err = load_dataset(&path, SourceDataset::Mhs).unwrap_err();
    assert!(
        matches!(&err, Error::Schema { field, .. } if field == "split"),
        "{err}"
    );
}

#[test]
fn mhs_class_total_off_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut records = mhs_records();
    // same split sizes, one explicit record moved to implicit
    records[0].label = Some(HateLabel::Implicit);
    let path = write_manifest(dir.path(), "MHS", &records);
    let err = read_manifest(&path).unwrap_err();
    assert!(
        matches!(&err, Error::Schema { field, .. } if field == "label"),
        "{err}"
    );
}

#[test]
fn declared_source_must_match_the_requested_schema() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_manifest(dir.path(), "MHS_Con", &triplet_records(2));
    assert!(matches!(
        load_dataset(&path, SourceDataset::Mhs),
        Err(Error::Schema { .. })
    ));
}

#[test]
fn confounder_triplets_are_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let good = triplet_records(4);
    let ds = load_dataset(
        &write_manifest(dir.path(), "MHS_Con", &good),
        SourceDataset::MhsCon,
    )
    .unwrap();
    assert_eq!(ds.triplets().len(), 4);
    for t in ds.triplets() {
        let labels: Vec<_> = [t.explicit, t.implicit, t.benign]
            .iter()
            .map(|&i| ds.records()[i].label)
            .collect();
        assert_eq!(labels, HateLabel::ALL.map(Some).to_vec());
    }

    let missing = &good[..good.len() - 1];
    let path = write_manifest(dir.path(), "MHS_Con", missing);
    assert!(matches!(
        load_dataset(&path, SourceDataset::MhsCon),
        Err(Error::Triplet { .. })
    ));

    let mut doubled = good.clone();
    doubled[1].label = Some(HateLabel::Explicit);
    let path = write_manifest(dir.path(), "MHS_Con", &doubled);
    assert!(matches!(
        load_dataset(&path, SourceDataset::MhsCon),
        Err(Error::Triplet { .. })
    ));
}

#[test]
fn manifests_round_trip_and_iterate_stably() {
    let dir = tempfile::tempdir().unwrap();
    let original =
        safememe::data::make_synthetic_corpus(24, 3, safememe::data::Signal::Lexical).unwrap();
    let path = dir.path().join("a").join("manifest.jsonl");
    original.write_manifest(&path).unwrap();
    let loaded = read_manifest(&path).unwrap();
    assert_eq!(loaded.records(), original.records());
    let again = read_manifest(&path).unwrap();
    let ids =
        |d: &safememe::data::Dataset| d.records().iter().map(|r| r.id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&loaded), ids(&again));

    let copy = dir.path().join("b").join("manifest.jsonl");
    loaded.write_manifest(&copy).unwrap();
    assert_eq!(read_manifest(&copy).unwrap().records(), original.records());

    let mut seen = HashSet::new();
    for split in Split::ALL {
        for r in loaded.split(split) {
            assert!(seen.insert(r.id.clone()), "{} appears in two splits", r.id);
        }
    }
    assert_eq!(seen.len(), loaded.len());
}
