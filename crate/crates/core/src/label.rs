//! Terminal label determination: pattern extraction from generated text and
//! the constrained fine-tuned classifier.

use std::path::Path;

use regex::{Regex, RegexBuilder};

use crate::error::{Error, Result};
use crate::fusion::HiddenSequence;
use crate::meme::HateLabel;
use crate::model::SeqGenerator;

/// Phrase → label. Keys are lowercase with single spaces.
pub const SYNONYMS: &[(&str, HateLabel)] = &[
    ("explicit", HateLabel::Explicit),
    ("explicit hate", HateLabel::Explicit),
    ("explicitly hateful", HateLabel::Explicit),
    ("implicit", HateLabel::Implicit),
    ("implicit hate", HateLabel::Implicit),
    ("implicitly hateful", HateLabel::Implicit),
    ("benign", HateLabel::Benign),
    ("non-hate", HateLabel::Benign),
    ("non hate", HateLabel::Benign),
    ("nonhate", HateLabel::Benign),
    ("non-hateful", HateLabel::Benign),
    ("non hateful", HateLabel::Benign),
    ("nonhateful", HateLabel::Benign),
    ("not hateful", HateLabel::Benign),
    ("not hate", HateLabel::Benign),
];

/// Placeholder in rule patterns that expands to every synonym.
pub const LABEL_SLOT: &str = "{label}";

pub fn synonym(phrase: &str) -> Option<HateLabel> {
    let norm = phrase
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    SYNONYMS.iter().find(|(s, _)| *s == norm).map(|(_, l)| *l)
}

fn label_alternation() -> String {
    let mut phrases: Vec<&str> = SYNONYMS.iter().map(|(s, _)| *s).collect();
    // longest first so "not hateful" wins over a shorter prefix
    phrases.sort_by_key(|p| std::cmp::Reverse(p.len()));
    phrases
        .iter()
        .map(|p| regex::escape(p).replace(' ', r"\s+"))
        .collect::<Vec<_>>()
        .join("|")
}

#[derive(Debug, Clone)]
pub struct ExtractionRule {
    pattern: Regex,
    source: String,
    pub priority: i32,
    pub case_sensitive: bool,
}

impl ExtractionRule {
    /// `{label}` in `pattern` is replaced by a capture group over all
    /// synonyms. The final pattern must have exactly one capture group.
    pub fn new(priority: i32, pattern: &str, case_sensitive: bool) -> Result<Self> {
        let expanded = pattern.replace(LABEL_SLOT, &format!("({})", label_alternation()));
        let regex = RegexBuilder::new(&expanded)
            .case_insensitive(!case_sensitive)
            .build()
            .map_err(|e| Error::Rule(format!("`{pattern}`: {e}")))?;
        if regex.captures_len() != 2 {
            return Err(Error::Rule(format!(
                "`{pattern}` must have exactly one capture group, found {}",
                regex.captures_len() - 1
            )));
        }
        Ok(Self {
            pattern: regex,
            source: pattern.to_string(),
            priority,
            case_sensitive,
        })
    }

    pub fn pattern(&self) -> &str {
        &self.source
    }

    /// The label of the last mapped match in `text`.
    fn last_label(&self, text: &str) -> Option<HateLabel> {
        self.pattern
            .captures_iter(text)
            .filter_map(|c| c.get(1).and_then(|m| synonym(m.as_str())))
            .last()
    }
}

/// Rules sorted by priority; a smaller number is consulted first.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<ExtractionRule>,
}

impl RuleSet {
    pub fn new(mut rules: Vec<ExtractionRule>) -> Result<Self> {
        if rules.is_empty() {
            return Err(Error::Rule("rule set is empty".into()));
        }
        rules.sort_by_key(|r| r.priority);
        if let Some(w) = rules.windows(2).find(|w| w[0].priority == w[1].priority) {
            return Err(Error::Rule(format!("duplicate priority {}", w[0].priority)));
        }
        Ok(Self { rules })
    }

    pub fn rules(&self) -> &[ExtractionRule] {
        &self.rules
    }

    /// Parses one rule per line as `priority | pattern`. Blank lines and
    /// lines starting with `#` are skipped. A pattern starting with `(?-i)`
    /// is case-sensitive.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (prio, pattern) = line.split_once('|').ok_or_else(|| {
                Error::Rule(format!("line {}: expected `priority | pattern`", n + 1))
            })?;
            let priority: i32 = prio.trim().parse().map_err(|_| {
                Error::Rule(format!("line {}: bad priority `{}`", n + 1, prio.trim()))
            })?;
            let pattern = pattern.trim();
            let case_sensitive = pattern.starts_with("(?-i)");
            rules.push(ExtractionRule::new(priority, pattern, case_sensitive)?);
        }
        Self::new(rules)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.rules
            .iter()
            .map(|r| format!("{} | {}\n", r.priority, r.source))
            .collect()
    }
}

pub const DEFAULT_RULES: &str = r"
0 | \bthe\s+meme\s+is\s+(?:an?\s+)?{label}\b
1 | \blabel\s*[:=]\s*{label}\b
2 | \b(explicit\s+hate|implicit\s+hate|explicitly\s+hateful|implicitly\s+hateful|non-hateful|non-hate|not\s+hateful|benign)\b
";

impl Default for RuleSet {
    fn default() -> Self {
        Self::parse(DEFAULT_RULES).expect("default rules are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extraction {
    Label(HateLabel),
    NoMatch,
}

impl Extraction {
    pub fn label(self) -> Option<HateLabel> {
        match self {
            Extraction::Label(l) => Some(l),
            Extraction::NoMatch => None,
        }
    }
}

/// The last match of the highest-priority rule that matches at all.
pub fn extract_label(transcript: &str, rules: &RuleSet) -> Extraction {
    rules
        .rules
        .iter()
        .find_map(|r| r.last_label(transcript))
        .map_or(Extraction::NoMatch, Extraction::Label)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoMatchPolicy {
    /// Fall back to benign and log a warning.
    #[default]
    Benign,
    /// Fail with [`Error::NoLabelMatch`].
    Strict,
}

pub fn resolve(extraction: Extraction, policy: NoMatchPolicy, id: &str) -> Result<HateLabel> {
    match (extraction, policy) {
        (Extraction::Label(l), _) => Ok(l),
        (Extraction::NoMatch, NoMatchPolicy::Benign) => {
            log::warn!("no label phrase found for `{id}`; defaulting to benign");
            Ok(HateLabel::Benign)
        }
        (Extraction::NoMatch, NoMatchPolicy::Strict) => Err(Error::NoLabelMatch),
    }
}

/// Checks that a decoded token is one of `allowed`.
pub fn expect_token<'a>(token: &str, allowed: &[&'a str]) -> Result<&'a str> {
    let token = token.trim();
    allowed
        .iter()
        .copied()
        .find(|a| *a == token)
        .ok_or_else(|| Error::UnknownLabelToken {
            token: token.to_string(),
            allowed: allowed.iter().map(|s| s.to_string()).collect(),
        })
}

pub const CLASS_WORDS: [&str; 3] = ["explicit", "implicit", "benign"];

/// Decodes one of the three label words from `(context, image)`.
pub fn classify_ft(
    context: &str,
    vision: &HiddenSequence,
    classifier: &dyn SeqGenerator,
) -> Result<HateLabel> {
    let memory = classifier.fuse(context, vision)?;
    let token = classifier.decode(&memory, Some(&CLASS_WORDS))?;
    expect_token(&token, &CLASS_WORDS)?.parse()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(text: &str) -> Extraction {
        extract_label(text, &RuleSet::default())
    }

    #[test]
    fn grammar_examples() {
        assert_eq!(
            ex("therefore the meme is explicit hate."),
            Extraction::Label(HateLabel::Explicit)
        );
        assert_eq!(
            ex("it may look benign, but the meme is implicit hate."),
            Extraction::Label(HateLabel::Implicit)
        );
        assert_eq!(ex("the image shows a cat."), Extraction::NoMatch);
    }

    #[test]
    fn last_match_of_top_rule_wins() {
        assert_eq!(
            ex("the meme is explicit hate? no, the meme is benign."),
            Extraction::Label(HateLabel::Benign)
        );
    }

    #[test]
    fn synonyms_map_to_benign() {
        assert_eq!(
            ex("The meme is NOT hateful."),
            Extraction::Label(HateLabel::Benign)
        );
        assert_eq!(
            ex("the meme is non-hate"),
            Extraction::Label(HateLabel::Benign)
        );
    }

    #[test]
    fn every_synonym_round_trips() {
        for (s, l) in SYNONYMS {
            assert_eq!(synonym(s), Some(*l));
            assert_eq!(
                ex(&format!("the meme is {s}.")),
                Extraction::Label(*l),
                "{s}"
            );
        }
    }

    #[test]
    fn rule_file_parsing() {
        let rules =
            RuleSet::parse("# comment\n5 | verdict={label}\n1 | (?-i)VERDICT {label}\n").unwrap();
        assert_eq!(rules.rules()[0].priority, 1);
        assert!(rules.rules()[0].case_sensitive);
        assert_eq!(extract_label("verdict benign", &rules), Extraction::NoMatch);
        assert_eq!(
            extract_label("VERDICT benign verdict=explicit", &rules),
            Extraction::Label(HateLabel::Benign)
        );
        assert!(matches!(
            RuleSet::parse("1 | a{label}\n1 | {label}"),
            Err(Error::Rule(_))
        ));
        assert!(matches!(RuleSet::parse("x | {label}"), Err(Error::Rule(_))));
        assert!(matches!(
            RuleSet::parse("1 | no group"),
            Err(Error::Rule(_))
        ));
        assert!(matches!(RuleSet::parse(""), Err(Error::Rule(_))));
        let round = RuleSet::parse(&RuleSet::default().to_text()).unwrap();
        assert_eq!(round.to_text(), RuleSet::default().to_text());
    }

    #[test]
    fn no_match_policy() {
        assert_eq!(
            resolve(Extraction::NoMatch, NoMatchPolicy::Benign, "m").unwrap(),
            HateLabel::Benign
        );
        assert!(matches!(
            resolve(Extraction::NoMatch, NoMatchPolicy::Strict, "m"),
            Err(Error::NoLabelMatch)
        ));
    }

    #[test]
    fn token_checking() {
        assert_eq!(expect_token("benign", &CLASS_WORDS).unwrap(), "benign");
        assert!(matches!(
            expect_token("hatefulish", &CLASS_WORDS),
            Err(Error::UnknownLabelToken { .. })
        ));
    }
}
