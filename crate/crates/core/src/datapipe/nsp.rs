use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NspLabel {
    IsNext,
    NotNext,
}

impl NspLabel {
    /// Class index used by the NSP classifier.
    pub fn class(self) -> i64 {
        match self {
            NspLabel::IsNext => 0,
            NspLabel::NotNext => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentencePair<T> {
    pub first: T,
    pub second: T,
    pub label: NspLabel,
    /// `(document, sentence)` of `first`; `second` follows it when `label` is `IsNext`.
    pub source: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NspPairs<T> {
    pub pairs: Vec<SentencePair<T>>,
    /// Set when a not-next pair was requested but no other document could supply one.
    pub imbalanced: bool,
}

/// One pair per sentence that has a successor. With probability ½ the pair
/// is the true continuation; otherwise the second sentence comes from a
/// different document. Documents with fewer than two sentences only serve
/// as random-second sources.
pub fn make_nsp_pairs<T: Clone>(documents: &[Vec<T>], rng: &mut Rng) -> NspPairs<T> {
    let mut pairs = Vec::new();
    let mut imbalanced = false;
    let donors: Vec<usize> = (0..documents.len()).filter(|&d| !documents[d].is_empty()).collect();
    for (d, doc) in documents.iter().enumerate() {
        for i in 0..doc.len().saturating_sub(1) {
            let want_next = rng.random::<f64>() < 0.5;
            let other_docs = donors.len() - usize::from(donors.contains(&d));
            if want_next || other_docs == 0 {
                if !want_next {
                    imbalanced = true;
                }
                pairs.push(SentencePair { first: doc[i].clone(), second: doc[i + 1].clone(), label: NspLabel::IsNext, source: (d, i) });
                continue;
            }
            // uniform over donors other than `d`
            let mut pick = rng.random_range(0..other_docs);
            let mut other = 0;
            for &cand in &donors {
                if cand == d {
                    continue;
                }
                if pick == 0 {
                    other = cand;
                    break;
                }
                pick -= 1;
            }
            let s = rng.random_range(0..documents[other].len());
            pairs.push(SentencePair {
                first: doc[i].clone(),
                second: documents[other][s].clone(),
                label: NspLabel::NotNext,
                source: (d, i),
            });
        }
    }
    NspPairs { pairs, imbalanced }
}
