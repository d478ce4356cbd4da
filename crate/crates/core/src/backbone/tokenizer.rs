use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
/// Separates generated questions (or Q&A pairs) inside one decoded sequence.
pub const QUESTION_SEP: &str = "<sep>";
/// Joins two input texts fed to one encoder.
pub const INPUT_SEP: &str = "[SEP]";

const SPECIALS: [&str; 6] = [PAD, BOS, EOS, UNK, QUESTION_SEP, INPUT_SEP];
const KEEP_WHOLE: [&str; 2] = ["Q:", "A:"];
const TRAILING: &[char] = &['.', ',', '?', '!', ';', ':', '"', '\'', ')'];
const LEADING: &[char] = &['"', '\'', '('];

/// Whitespace tokenisation with punctuation split into separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if SPECIALS.contains(&chunk) || KEEP_WHOLE.contains(&chunk) {
            out.push(chunk.to_string());
            continue;
        }
        let mut word = chunk;
        while let Some(c) = word.chars().next().filter(|c| LEADING.contains(c)) {
            out.push(c.to_string());
            word = &word[c.len_utf8()..];
        }
        let mut trailing = Vec::new();
        while let Some(c) = word.chars().last().filter(|c| TRAILING.contains(c)) {
            trailing.push(c.to_string());
            word = &word[..word.len() - c.len_utf8()];
        }
        if !word.is_empty() {
            out.push(word.to_string());
        }
        out.extend(trailing.into_iter().rev());
    }
    out
}

/// Inverse of [`tokenize`] up to whitespace normalisation.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut glue_next = false;
    for tok in tokens {
        let tok = tok.as_ref();
        let attaches = tok.len() == 1 && tok.chars().all(|c| TRAILING.contains(&c));
        if !out.is_empty() && !attaches && !glue_next {
            out.push(' ');
        }
        out.push_str(tok);
        glue_next = tok == "(";
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary from every token of `texts`, specials first and
    /// the rest in sorted order.
    pub fn build<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut words = BTreeSet::new();
        for t in texts {
            words.extend(tokenize(t.as_ref()));
        }
        let tokens: Vec<String> = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(
                words
                    .into_iter()
                    .filter(|w| !SPECIALS.contains(&w.as_str())),
            )
            .collect();
        Self::from_tokens(tokens).expect("specials are present")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::InvalidInput(format!(
                    "vocabulary must start with special token {s}"
                )));
            }
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect::<HashMap<_, _>>();
        if index.len() != tokens.len() {
            return Err(Error::InvalidInput("duplicate vocabulary entries".into()));
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn pad(&self) -> TokenId {
        0
    }
    pub fn bos(&self) -> TokenId {
        1
    }
    pub fn eos(&self) -> TokenId {
        2
    }
    pub fn unk(&self) -> TokenId {
        3
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        tokenize(text)
            .iter()
            .map(|t| self.id(t).unwrap_or(self.unk()))
            .collect()
    }

    /// Decodes ids to text, dropping `<pad>`, `<bos>` and `<eos>`.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let words: Vec<&str> = ids
            .iter()
            .filter(|&&i| i != self.pad() && i != self.bos() && i != self.eos())
            .map(|&i| self.token(i))
            .collect();
        detokenize(&words)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.tokens)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(serde_json::from_str(&raw)?)
    }
}
