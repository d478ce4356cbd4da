//! Dataset records, manifests, confounder triplets and the synthetic corpus.

mod manifest;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meme::{HateLabel, ImageSource, Meme};
use crate::taxonomy::Category;

pub use manifest::{load_dataset, read_manifest, MANIFEST_HEADER};
pub use synthetic::{make_synthetic_corpus, Signal, SYNTHETIC_KEYWORDS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SourceDataset {
    #[serde(rename = "MHS")]
    Mhs,
    #[serde(rename = "MHS_Con")]
    MhsCon,
    #[serde(rename = "synthetic")]
    Synthetic,
}

impl SourceDataset {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceDataset::Mhs => "MHS",
            SourceDataset::MhsCon => "MHS_Con",
            SourceDataset::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for SourceDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceDataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "MHS" => Ok(SourceDataset::Mhs),
            "MHS_Con" | "MHS-Con" => Ok(SourceDataset::MhsCon),
            "synthetic" => Ok(SourceDataset::Synthetic),
            other => Err(Error::InvalidInput(format!(
                "unknown dataset source `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: String,
    /// Relative to the manifest directory.
    pub image_path: String,
    pub text: String,
    pub label: Option<HateLabel>,
    pub targets: BTreeSet<Category>,
    pub gdesc: Option<String>,
    pub qa: Option<Vec<(String, String)>>,
    pub split: Split,
    pub image_only: bool,
}

/// One image with its explicit, implicit and benign variants (record indices).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfounderTriplet {
    pub image_path: String,
    pub explicit: usize,
    pub implicit: usize,
    pub benign: usize,
}

/// An immutable, split-aware collection of records.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub source: SourceDataset,
    /// Directory that image paths are resolved against.
    pub root: Option<PathBuf>,
    records: Vec<DatasetRecord>,
    triplets: Vec<ConfounderTriplet>,
    images: BTreeMap<String, Arc<RgbImage>>,
}

impl Dataset {
    pub fn records(&self) -> &[DatasetRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn triplets(&self) -> &[ConfounderTriplet] {
        &self.triplets
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &DatasetRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn get(&self, id: &str) -> Option<&DatasetRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn image_source(&self, record: &DatasetRecord) -> ImageSource {
        match self.images.get(&record.image_path) {
            Some(img) => ImageSource::Memory(img.clone()),
            None => ImageSource::Path(match &self.root {
                Some(root) => root.join(&record.image_path),
                None => PathBuf::from(&record.image_path),
            }),
        }
    }

    pub fn meme(&self, record: &DatasetRecord) -> Meme {
        Meme {
            id: record.id.clone(),
            image: self.image_source(record),
            text: record.text.clone(),
            gold_label: record.label,
            gold_gdesc: record.gdesc.clone(),
            gold_qa: record.qa.clone(),
            target_categories: record.targets.clone(),
        }
    }

    pub fn memes(&self, split: Split) -> Vec<Meme> {
        self.split(split).map(|r| self.meme(r)).collect()
    }

    fn with_records(&self, records: Vec<DatasetRecord>) -> Self {
        Self {
            source: self.source,
            root: self.root.clone(),
            records,
            triplets: Vec::new(),
            images: self.images.clone(),
        }
    }

    /// Records that target `category`, splits preserved.
    pub fn category_slice(&self, category: &str) -> Result<Dataset> {
        let category: Category = category.parse()?;
        Ok(self.with_records(
            self.records
                .iter()
                .filter(|r| r.targets.contains(&category))
                .cloned()
                .collect(),
        ))
    }

    pub fn filter(&self, keep: impl Fn(&DatasetRecord) -> bool) -> Dataset {
        self.with_records(self.records.iter().filter(|r| keep(r)).cloned().collect())
    }

    /// Counts `(split, label)` pairs; unlabelled records are skipped.
    pub fn label_counts(&self) -> BTreeMap<(Split, HateLabel), usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            if let Some(l) = r.label {
                *counts.entry((r.split, l)).or_insert(0) += 1;
            }
        }
        counts
    }
}
