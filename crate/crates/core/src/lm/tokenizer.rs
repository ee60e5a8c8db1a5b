//! Word-level tokenizer with five reserved ids.
//!
//! Text is split on whitespace; a trailing `?` or `,` is split off into
//! its own token and glued back on decode, so canonical text such as
//! `"Who owns A?"` or `"A, B"` round-trips exactly.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const BOS: TokenId = 2;
pub const STOP: TokenId = 3;
pub const ENT: TokenId = 4;

pub const RESERVED: [&str; 5] = ["<PAD>", "<UNK>", "<BOS>", "<STOP>", "<ENT>"];

const GLUED: [&str; 2] = ["?", ","];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

fn pieces(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace().flat_map(|word| {
        let split = GLUED
            .iter()
            .find(|p| word.len() > p.len() && word.ends_with(*p))
            .map(|p| word.len() - p.len());
        match split {
            Some(at) => [Some(&word[..at]), Some(&word[at..])],
            None => [Some(word), None],
        }
        .into_iter()
        .flatten()
    })
}

/// `<ENT>` is its own word even when glued to a neighbour (`Human:<ENT>`).
fn detach_slot(text: &str) -> std::borrow::Cow<'_, str> {
    const SLOT: &str = RESERVED[ENT as usize];
    if text.contains(SLOT) {
        text.replace(SLOT, &format!(" {SLOT} ")).into()
    } else {
        text.into()
    }
}

impl Tokenizer {
    /// Builds a vocabulary from every word of `texts`; words are assigned
    /// ids in sorted order after the reserved tokens.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words = BTreeSet::new();
        for text in texts {
            let text = detach_slot(text);
            words.extend(pieces(&text).filter(|w| !RESERVED.contains(w)).map(str::to_owned));
        }
        Self::from_tokens(RESERVED.iter().map(|r| r.to_string()).chain(words))
            .expect("reserved tokens lead the vocabulary")
    }

    fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().collect();
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()].iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(Error::Format("vocabulary must start with the reserved tokens".into()));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("invalid token on line {}", i + 1)));
            }
            if ids.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Format(format!("duplicate token `{t}`")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.ids.get(word).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        pieces(&detach_slot(text)).map(|w| self.id(w).unwrap_or(UNK)).collect()
    }

    /// Joins tokens with single spaces, dropping `<PAD>`, `<BOS>` and
    /// `<ENT>`; `<UNK>` and `<STOP>` keep their surface forms.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for &id in ids {
            if matches!(id, PAD | BOS | ENT) {
                continue;
            }
            let word = self.token(id).unwrap_or(RESERVED[UNK as usize]);
            if !out.is_empty() && !GLUED.contains(&word) {
                out.push(' ');
            }
            out.push_str(word);
        }
        out
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_owned))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
