use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::backbone::decode_image;
use crate::error::{Error, Result};
use crate::taxonomy::Category;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HateLabel {
    Explicit,
    Implicit,
    Benign,
}

impl HateLabel {
    pub const ALL: [HateLabel; 3] = [HateLabel::Explicit, HateLabel::Implicit, HateLabel::Benign];

    pub fn as_str(self) -> &'static str {
        match self {
            HateLabel::Explicit => "explicit",
            HateLabel::Implicit => "implicit",
            HateLabel::Benign => "benign",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_hateful(self) -> bool {
        self != HateLabel::Benign
    }
}

impl fmt::Display for HateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HateLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "explicit" => Ok(HateLabel::Explicit),
            "implicit" => Ok(HateLabel::Implicit),
            "benign" => Ok(HateLabel::Benign),
            other => Err(Error::UnknownLabelToken {
                token: other.to_string(),
                allowed: HateLabel::ALL.iter().map(|l| l.to_string()).collect(),
            }),
        }
    }
}

/// Where a meme's raster comes from.
#[derive(Debug, Clone)]
pub enum ImageSource {
    Path(PathBuf),
    Memory(Arc<RgbImage>),
}

impl ImageSource {
    pub fn load(&self) -> Result<Arc<RgbImage>> {
        match self {
            ImageSource::Memory(img) => Ok(img.clone()),
            ImageSource::Path(p) => {
                let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
                Ok(Arc::new(decode_image(&bytes)?))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Meme {
    pub id: String,
    pub image: ImageSource,
    pub text: String,
    pub gold_label: Option<HateLabel>,
    pub gold_gdesc: Option<String>,
    pub gold_qa: Option<Vec<(String, String)>>,
    pub target_categories: BTreeSet<Category>,
}

impl Meme {
    pub fn new(id: impl Into<String>, image: ImageSource, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            image,
            text: text.into(),
            gold_label: None,
            gold_gdesc: None,
            gold_qa: None,
            target_categories: BTreeSet::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_parse_and_print() {
        for l in HateLabel::ALL {
            assert_eq!(l.as_str().parse::<HateLabel>().unwrap(), l);
        }
        assert!(matches!(
            "implicitt".parse::<HateLabel>(),
            Err(Error::UnknownLabelToken { .. })
        ));
    }

    #[test]
    fn missing_image_file_is_an_io_error() {
        let src = ImageSource::Path("/nonexistent/x.png".into());
        assert!(matches!(src.load(), Err(Error::Io { .. })));
    }
}
