use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConfounderTriplet, Dataset, DatasetRecord, SourceDataset, Split};
use crate::error::{Error, Result};
use crate::meme::HateLabel;
use crate::taxonomy::Category;

pub const MANIFEST_HEADER: &str = "safe-meme-manifest v1";

const MHS_SPLIT_TOTALS: [(Split, usize); 3] = [
    (Split::Train, 2233),
    (Split::Validation, 305),
    (Split::Test, 805),
];
const MHS_CLASS_TOTALS: [(HateLabel, usize); 3] = [
    (HateLabel::Explicit, 1142),
    (HateLabel::Implicit, 1146),
    (HateLabel::Benign, 1055),
];
const MHS_SPLIT_CLASS_COUNTS: [(Split, [usize; 3]); 3] = [
    (Split::Train, [795, 753, 685]),
    (Split::Validation, [100, 100, 105]),
    (Split::Test, [247, 293, 265]),
];

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: String,
    image_path: String,
    #[serde(default)]
    text: String,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    targets: Vec<String>,
    #[serde(default)]
    gdesc: Option<String>,
    #[serde(default)]
    qa: Option<Vec<(String, String)>>,
    split: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    image_only: bool,
}

fn schema(record: &str, field: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        record: record.to_string(),
        field: field.to_string(),
        message: message.into(),
    }
}

impl RawRecord {
    fn into_record(self) -> Result<DatasetRecord> {
        let id = self.id;
        if id.trim().is_empty() {
            return Err(schema("<blank>", "id", "record id is empty"));
        }
        let label = self
            .label
            .map(|l| {
                l.parse::<HateLabel>()
                    .map_err(|_| schema(&id, "label", format!("unknown label `{l}`")))
            })
            .transpose()?;
        let targets = self
            .targets
            .iter()
            .map(|t| {
                t.parse::<Category>()
                    .map_err(|_| schema(&id, "targets", format!("unknown category `{t}`")))
            })
            .collect::<Result<BTreeSet<_>>>()?;
        let split = self
            .split
            .parse()
            .map_err(|_| schema(&id, "split", format!("unknown split `{}`", self.split)))?;
        if self.text.trim().is_empty() && !self.image_only {
            return Err(schema(
                &id,
                "text",
                "text is empty but the record is not flagged image_only",
            ));
        }
        if self.image_path.trim().is_empty() {
            return Err(schema(&id, "image_path", "image path is empty"));
        }
        Ok(DatasetRecord {
            id,
            image_path: self.image_path,
            text: self.text,
            label,
            targets,
            gdesc: self.gdesc,
            qa: self.qa,
            split,
            image_only: self.image_only,
        })
    }

    fn from_record(r: &DatasetRecord) -> Self {
        Self {
            id: r.id.clone(),
            image_path: r.image_path.clone(),
            text: r.text.clone(),
            label: r.label.map(|l| l.to_string()),
            targets: r.targets.iter().map(|c| c.to_string()).collect(),
            gdesc: r.gdesc.clone(),
            qa: r.qa.clone(),
            split: r.split.to_string(),
            image_only: r.image_only,
        }
    }
}

fn parse_header(line: &str) -> Result<Option<SourceDataset>> {
    let rest = line.trim().strip_prefix(MANIFEST_HEADER).ok_or_else(|| {
        schema(
            "<header>",
            "header",
            format!("expected `{MANIFEST_HEADER}`"),
        )
    })?;
    let rest = rest.trim();
    if rest.is_empty() {
        return Ok(None);
    }
    let source = rest.strip_prefix("source=").ok_or_else(|| {
        schema(
            "<header>",
            "header",
            format!("unexpected header suffix `{rest}`"),
        )
    })?;
    source
        .parse()
        .map(Some)
        .map_err(|_| schema("<header>", "source", format!("unknown source `{source}`")))
}

/// Parses manifest text. Image references are resolved relative to `root`.
fn parse_manifest(text: &str, root: Option<&Path>) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| schema("<header>", "header", "manifest is empty"))?;
    let source = parse_header(header)?.unwrap_or(SourceDataset::Synthetic);
    let mut records = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line)
            .map_err(|e| schema(&format!("line {}", n + 2), "record", e.to_string()))?;
        records.push(raw.into_record()?);
    }
    let mut ds = Dataset {
        source,
        root: root.map(Path::to_path_buf),
        records,
        triplets: Vec::new(),
        images: BTreeMap::new(),
    };
    validate(&mut ds, true)?;
    Ok(ds)
}

/// Reads a manifest, taking the dataset source from its header line
/// (synthetic when none is declared).
pub fn read_manifest(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, Some(path.parent().unwrap_or(Path::new("."))))
}

/// Reads a manifest that must declare `schema` as its source (or declare none).
pub fn load_dataset(path: &Path, schema_kind: SourceDataset) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Some(declared) = text.lines().next().map(parse_header).transpose()?.flatten() {
        if declared != schema_kind {
            return Err(schema(
                "<header>",
                "source",
                format!("manifest declares {declared}, expected {schema_kind}"),
            ));
        }
    }
    let rewritten = match text.split_once('\n') {
        Some((_, rest)) => format!("{MANIFEST_HEADER} source={schema_kind}\n{rest}"),
        None => format!("{MANIFEST_HEADER} source={schema_kind}\n"),
    };
    parse_manifest(&rewritten, Some(path.parent().unwrap_or(Path::new("."))))
}

fn validate(ds: &mut Dataset, check_images: bool) -> Result<()> {
    let mut seen = HashSet::new();
    for r in &ds.records {
        if !seen.insert(r.id.as_str()) {
            return Err(schema(&r.id, "id", "duplicate record id"));
        }
        if check_images && !ds.images.contains_key(&r.image_path) {
            let path = match &ds.root {
                Some(root) => root.join(&r.image_path),
                None => r.image_path.clone().into(),
            };
            if !path.is_file() {
                return Err(schema(
                    &r.id,
                    "image_path",
                    format!("{} does not exist", path.display()),
                ));
            }
        }
        if matches!(ds.source, SourceDataset::Mhs | SourceDataset::MhsCon) && r.label.is_none() {
            return Err(schema(&r.id, "label", "gold label is required"));
        }
        if ds.source == SourceDataset::Mhs && r.split == Split::Train {
            if r.gdesc.is_none() {
                return Err(schema(
                    &r.id,
                    "gdesc",
                    "training records need a gold description",
                ));
            }
            if r.qa.is_none() {
                return Err(schema(
                    &r.id,
                    "qa",
                    "training records need gold question-answer pairs",
                ));
            }
        }
    }
    match ds.source {
        SourceDataset::Mhs => check_mhs_counts(ds)?,
        SourceDataset::MhsCon => ds.triplets = group_triplets(&ds.records)?,
        SourceDataset::Synthetic => {}
    }
    Ok(())
}

fn check_mhs_counts(ds: &Dataset) -> Result<()> {
    let counts = ds.label_counts();
    for (split, expected) in MHS_SPLIT_TOTALS {
        let actual = ds.split(split).count();
        if actual != expected {
            return Err(schema(
                "<dataset>",
                "split",
                format!("{split} has {actual} records, expected {expected}"),
            ));
        }
    }
    for (label, expected) in MHS_CLASS_TOTALS {
        let actual: usize = Split::ALL
            .iter()
            .map(|s| counts.get(&(*s, label)).copied().unwrap_or(0))
            .sum();
        if actual != expected {
            return Err(schema(
                "<dataset>",
                "label",
                format!("{label} has {actual} records, expected {expected}"),
            ));
        }
    }
    // per-split class counts are reported, not enforced
    for (split, expected) in MHS_SPLIT_CLASS_COUNTS {
        for (label, want) in HateLabel::ALL.iter().zip(expected) {
            let got = counts.get(&(split, *label)).copied().unwrap_or(0);
            if got != want {
                log::warn!("{split}/{label}: {got} records, reference table lists {want}");
            }
        }
    }
    Ok(())
}

fn group_triplets(records: &[DatasetRecord]) -> Result<Vec<ConfounderTriplet>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.image_path.as_str()).or_default().push(i);
    }
    let mut triplets = Vec::with_capacity(groups.len());
    for (image, members) in groups {
        let triplet_err = |message: String| Error::Triplet {
            image: image.to_string(),
            message,
        };
        if members.len() != 3 {
            return Err(triplet_err(format!(
                "{} variants, expected 3",
                members.len()
            )));
        }
        let mut slots = [None; 3];
        for &i in &members {
            let label = records[i].label.expect("labels validated");
            if slots[label.index()].replace(i).is_some() {
                return Err(triplet_err(format!("label {label} appears more than once")));
            }
        }
        triplets.push(ConfounderTriplet {
            image_path: image.to_string(),
            explicit: slots[0].unwrap(),
            implicit: slots[1].unwrap(),
            benign: slots[2].unwrap(),
        });
    }
    Ok(triplets)
}

impl Dataset {
    /// Builds a dataset from records. Record invariants are validated; image
    /// files are not checked.
    pub fn from_records(
        source: SourceDataset,
        records: Vec<DatasetRecord>,
        images: BTreeMap<String, std::sync::Arc<image::RgbImage>>,
    ) -> Result<Self> {
        let mut ds = Dataset {
            source,
            root: None,
            records,
            triplets: Vec::new(),
            images,
        };
        validate(&mut ds, false)?;
        Ok(ds)
    }

    pub fn to_manifest_string(&self) -> String {
        let mut out = format!("{MANIFEST_HEADER} source={}\n", self.source);
        for r in &self.records {
            let line =
                serde_json::to_string(&RawRecord::from_record(r)).expect("records serialise");
            writeln!(out, "{line}").unwrap();
        }
        out
    }

    /// Writes the manifest to `path` with its images beside it: in-memory
    /// images are encoded, file-backed ones are copied from the source root.
    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (rel, img) in &self.images {
            let target = dir.join(rel);
            if let Some(parent) = target.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            img.save_with_format(&target, image::ImageFormat::Png)
                .map_err(|e| {
                    Error::InvalidInput(format!("cannot write {}: {e}", target.display()))
                })?;
        }
        if let Some(root) = &self.root {
            copy_images(&self.records, root, dir)?;
        }
        std::fs::write(path, self.to_manifest_string()).map_err(|e| Error::io(path, e))
    }
}

fn copy_images(records: &[DatasetRecord], from: &Path, to: &Path) -> Result<()> {
    if from.canonicalize().ok() == to.canonicalize().ok() {
        return Ok(());
    }
    let mut done = HashSet::new();
    for r in records {
        if !done.insert(r.image_path.as_str()) {
            continue;
        }
        let (src, dst) = (from.join(&r.image_path), to.join(&r.image_path));
        if !src.is_file() {
            continue;
        }
        if let Some(parent) = dst.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::copy(&src, &dst).map_err(|e| Error::io(&src, e))?;
    }
    Ok(())
}
