//! The nine protected-group categories, in their fixed canonical order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Islam,
    AfricanAmerican,
    Jewish,
    Disability,
    Women,
    SexualOrientation,
    Immigration,
    White,
    Miscellaneous,
}

impl Category {
    pub const ALL: [Category; 9] = [
        Category::Islam,
        Category::AfricanAmerican,
        Category::Jewish,
        Category::Disability,
        Category::Women,
        Category::SexualOrientation,
        Category::Immigration,
        Category::White,
        Category::Miscellaneous,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Category::Islam => "islam",
            Category::AfricanAmerican => "african_american",
            Category::Jewish => "jewish",
            Category::Disability => "disability",
            Category::Women => "women",
            Category::SexualOrientation => "sexual_orientation",
            Category::Immigration => "immigration",
            Category::White => "white",
            Category::Miscellaneous => "miscellaneous",
        }
    }

    pub fn index(self) -> usize {
        Category::ALL.iter().position(|c| *c == self).unwrap()
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.id() == s)
            .ok_or_else(|| Error::Category(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip_in_canonical_order() {
        for (i, c) in Category::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(c.id().parse::<Category>().unwrap(), *c);
        }
        assert_eq!(Category::ALL[0], Category::Islam);
        assert_eq!(Category::ALL[8], Category::Miscellaneous);
    }

    #[test]
    fn unknown_category_is_rejected() {
        assert!(matches!(
            "sports".parse::<Category>(),
            Err(Error::Category(_))
        ));
    }
}
