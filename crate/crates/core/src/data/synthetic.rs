//! Seeded synthetic memes: generated rasters plus templated captions.
//!
//! With [`Signal::Lexical`] each caption carries a keyword tied to its label;
//! with [`Signal::None`] the keyword is drawn independently of the label, so
//! nothing in a record predicts its label.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetRecord, SourceDataset, Split};
use crate::error::{Error, Result};
use crate::meme::HateLabel;
use crate::taxonomy::Category;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    Lexical,
    None,
}

impl std::str::FromStr for Signal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lexical" => Ok(Signal::Lexical),
            "none" => Ok(Signal::None),
            other => Err(Error::InvalidInput(format!("unknown signal `{other}`"))),
        }
    }
}

/// Label-bearing keywords, indexed like [`HateLabel::ALL`].
pub const SYNTHETIC_KEYWORDS: [[&str; 3]; 3] = [
    ["vermin", "scum", "parasites"],
    ["dishwasher", "sandwich", "kitchen"],
    ["sunshine", "puppies", "birthday"],
];

const COLORS: [(&str, [u8; 3]); 4] = [
    ("red", [220, 30, 30]),
    ("green", [30, 190, 60]),
    ("blue", [40, 60, 220]),
    ("yellow", [235, 220, 40]),
];

const PATTERNS: [&str; 3] = ["solid", "stripes", "checks"];

const TEMPLATES: [&str; 6] = [
    "look at these {kw} again",
    "when the {kw} shows up at work",
    "nobody asked for more {kw}",
    "just another day with {kw}",
    "this is what {kw} looks like",
    "my friends and their {kw}",
];

const SIDE: u32 = 32;

fn render(color: [u8; 3], pattern: &str) -> RgbImage {
    let fg = Rgb(color);
    let bg = Rgb([250, 250, 250]);
    RgbImage::from_fn(SIDE, SIDE, |x, y| match pattern {
        "stripes" if (x / 4) % 2 == 1 => bg,
        "checks" if ((x / 8) + (y / 8)) % 2 == 1 => bg,
        _ => fg,
    })
}

fn label_phrase(label: HateLabel) -> String {
    match label {
        HateLabel::Benign => "benign".to_string(),
        l => format!("{l} hate"),
    }
}

fn split_for(rank: usize, per_label: usize) -> Split {
    let test = (0.3 * per_label as f64).round() as usize;
    let val = (0.1 * per_label as f64).round() as usize;
    if rank < test {
        Split::Test
    } else if rank < test + val {
        Split::Validation
    } else {
        Split::Train
    }
}

/// Generates `size` records with labels dealt round-robin, so label counts
/// differ by at most one. Per label, about 30% go to test, 10% to
/// validation and the rest to train. Hateful records get target categories
/// round-robin within each split.
pub fn make_synthetic_corpus(size: usize, seed: u64, signal: Signal) -> Result<Dataset> {
    if size < 3 {
        return Err(Error::InvalidInput(format!(
            "synthetic corpus needs at least 3 records, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_label = [0usize; 3];
    for i in 0..size {
        per_label[i % 3] += 1;
    }
    let mut ranks = [0usize; 3];
    let mut category_cursor: BTreeMap<Split, usize> = BTreeMap::new();
    let mut records = Vec::with_capacity(size);
    let mut images = BTreeMap::new();

    for i in 0..size {
        let label = HateLabel::ALL[i % 3];
        let li = label.index();
        let split = split_for(ranks[li], per_label[li]);
        ranks[li] += 1;

        let (color_name, rgb) = COLORS[rng.gen_range(0..COLORS.len())];
        let pattern = PATTERNS[rng.gen_range(0..PATTERNS.len())];
        let keyword = match signal {
            Signal::Lexical => *SYNTHETIC_KEYWORDS[li].choose(&mut rng).unwrap(),
            Signal::None => *SYNTHETIC_KEYWORDS.as_flattened().choose(&mut rng).unwrap(),
        };
        let text = TEMPLATES.choose(&mut rng).unwrap().replace("{kw}", keyword);

        let mut targets = BTreeSet::new();
        if label.is_hateful() {
            let cursor = category_cursor.entry(split).or_insert(0);
            targets.insert(Category::ALL[*cursor % Category::ALL.len()]);
            *cursor += 1;
        }

        let id = format!("syn-{i:04}");
        let image_path = format!("images/{id}.png");
        images.insert(image_path.clone(), Arc::new(render(rgb, pattern)));
        records.push(DatasetRecord {
            id,
            image_path,
            text,
            label: Some(label),
            targets,
            gdesc: Some(format!(
                "a {color_name} image with {pattern} shapes and a caption about {keyword} ."
            )),
            qa: Some(vec![
                (
                    "what is shown in the image?".to_string(),
                    format!("the image shows {color_name} {pattern}."),
                ),
                (
                    format!("what does the word {keyword} suggest?"),
                    format!(
                        "{keyword} suggests that the meme is {}.",
                        label_phrase(label)
                    ),
                ),
            ]),
            split,
            image_only: false,
        });
    }
    Dataset::from_records(SourceDataset::Synthetic, records, images)
}
