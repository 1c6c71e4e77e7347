use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{input_err, Result};
use crate::rng::fnv1a_extend;

/// A lowercased token with its character span `[start, end)` in the source text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Whitespace + punctuation tokenisation. Every non-alphanumeric,
/// non-whitespace character becomes its own token.
pub fn tokenize_with_offsets(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let flush = |current: &mut String, start: usize, end: usize, out: &mut Vec<Token>| {
        if !current.is_empty() {
            out.push(Token { text: core::mem::take(current), start, end });
        }
    };
    let mut idx = 0;
    for c in text.chars() {
        if c.is_whitespace() {
            flush(&mut current, start, idx, &mut out);
        } else if c.is_alphanumeric() {
            if current.is_empty() {
                start = idx;
            }
            current.extend(c.to_lowercase());
        } else {
            flush(&mut current, start, idx, &mut out);
            out.push(Token { text: c.to_lowercase().collect(), start: idx, end: idx + 1 });
        }
        idx += 1;
    }
    flush(&mut current, start, idx, &mut out);
    out
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_offsets(text).into_iter().map(|t| t.text).collect()
}

/// Token ↔ id map with the special tokens at fixed low ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const CLS: usize = 2;
    pub const SEP: usize = 3;
    pub const MASK: usize = 4;
    pub const NUM_SPECIAL: usize = 5;
    pub const SPECIAL_TOKENS: [&'static str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

    /// Count tokens over `texts`; keep those with frequency ≥ `min_freq`,
    /// ordered by descending frequency, then lexicographically.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Result<Self> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut any = false;
        for text in texts {
            for tok in tokenize(text) {
                any = true;
                *counts.entry(tok).or_default() += 1;
            }
        }
        if !any {
            return Err(input_err("cannot build a vocabulary from an empty corpus"));
        }
        let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq.max(1)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t))
    }

    /// Build from the non-special tokens, in id order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut all: Vec<String> = Self::SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let mut index = BTreeMap::new();
        for (i, t) in all.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(input_err(alloc::format!("duplicate vocabulary entry `{t}`")));
            }
        }
        Ok(Self { tokens: all, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == Self::NUM_SPECIAL
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.get(token).is_some_and(|&i| i >= Self::NUM_SPECIAL)
    }

    pub fn id(&self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&i) if i >= Self::NUM_SPECIAL => i,
            _ => Self::UNK,
        }
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or("[UNK]", String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Tokenise and map to ids.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn is_special(id: usize) -> bool {
        id < Self::NUM_SPECIAL
    }

    pub fn checksum(&self) -> u64 {
        self.tokens.iter().fold(crate::rng::fnv1a(b"vocab"), |h, t| fnv1a_extend(fnv1a_extend(h, t.as_bytes()), b"\n"))
    }
}
