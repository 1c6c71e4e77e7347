use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datapipe::tokenize;
use crate::error::{input_err, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeItem {
    pub tokens: Vec<String>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeDataset {
    pub name: String,
    pub num_classes: usize,
    pub train: Vec<ProbeItem>,
    pub val: Vec<ProbeItem>,
}

impl ProbeDataset {
    pub fn items(&self) -> impl Iterator<Item = &ProbeItem> {
        self.train.iter().chain(&self.val)
    }

    /// Share of the most frequent validation label.
    pub fn majority_rate(&self) -> f64 {
        let mut counts = alloc::vec![0usize; self.num_classes];
        for it in &self.val {
            counts[it.label] += 1;
        }
        counts.iter().copied().max().unwrap_or(0) as f64 / self.val.len().max(1) as f64
    }
}

fn shuffle<T>(items: &mut [T], rng: &mut Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Shuffle, then hold out the last fifth for validation.
fn split(name: &str, num_classes: usize, mut items: Vec<ProbeItem>, rng: &mut Rng) -> ProbeDataset {
    shuffle(&mut items, rng);
    let n_val = items.len() / 5;
    let val = items.split_off(items.len() - n_val);
    ProbeDataset { name: String::from(name), num_classes, train: items, val }
}

fn tokenized(sentences: &[String]) -> Vec<Vec<String>> {
    sentences.iter().map(|s| tokenize(s)).filter(|t| t.len() >= 2).collect()
}

/// Token count bucketed into `classes` quantile classes. Ties in length are
/// broken at random, so class sizes differ by at most one.
pub fn sentence_length_probe(sentences: &[String], classes: usize, rng: &mut Rng) -> Result<ProbeDataset> {
    let toks = tokenized(sentences);
    if classes < 2 || toks.len() < 5 * classes {
        return Err(input_err(format!("sentence_length: {} usable sentences for {classes} classes", toks.len())));
    }
    let mut order: Vec<(usize, u64, usize)> = toks.iter().enumerate().map(|(i, t)| (t.len(), rng.random::<u64>(), i)).collect();
    order.sort_unstable();
    let n = order.len();
    let mut items: Vec<ProbeItem> = Vec::with_capacity(n);
    for (rank, &(_, _, i)) in order.iter().enumerate() {
        items.push(ProbeItem { tokens: toks[i].clone(), label: rank * classes / n });
    }
    Ok(split("sentence_length", classes, items, rng))
}

/// Label = which of `k` mid-frequency words the sentence contains; only
/// sentences with exactly one of them are kept, then classes are cut to
/// equal size.
pub fn word_content_probe(sentences: &[String], k: usize, rng: &mut Rng) -> Result<ProbeDataset> {
    let toks = tokenized(sentences);
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &toks {
        for w in t {
            if w.chars().all(char::is_alphanumeric) {
                *freq.entry(w.as_str()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if k < 2 || ranked.len() < 2 * k {
        return Err(input_err(format!("word_content: only {} distinct words for {k} classes", ranked.len())));
    }
    let mid = ranked.len() / 2 - k / 2;
    let words: Vec<&str> = ranked[mid..mid + k].iter().map(|w| w.0).collect();
    let mut by_class: Vec<Vec<ProbeItem>> = (0..k).map(|_| Vec::new()).collect();
    for t in &toks {
        let hits: Vec<usize> = (0..k).filter(|&c| t.iter().any(|w| w == words[c])).collect();
        if let [c] = hits[..] {
            by_class[c].push(ProbeItem { tokens: t.clone(), label: c });
        }
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let m = counts.iter().copied().min().unwrap_or(0);
    if m < 5 {
        return Err(input_err(format!("word_content: class counts {counts:?} too small to balance")));
    }
    let mut items = Vec::with_capacity(m * k);
    for mut class in by_class {
        shuffle(&mut class, rng);
        items.extend(class.into_iter().take(m));
    }
    Ok(split("word_content", k, items, rng))
}

fn swappable_pairs(tokens: &[String]) -> Vec<usize> {
    (0..tokens.len().saturating_sub(1)).filter(|&i| tokens[i] != tokens[i + 1]).collect()
}

/// Exactly half of the sentences get one adjacent swap and label 1.
pub fn bigram_shift_probe(sentences: &[String], rng: &mut Rng) -> Result<ProbeDataset> {
    let mut toks: Vec<Vec<String>> = tokenized(sentences).into_iter().filter(|t| !swappable_pairs(t).is_empty()).collect();
    if toks.len() < 10 {
        return Err(input_err(format!("bigram_shift: {} usable sentences, need at least 10", toks.len())));
    }
    shuffle(&mut toks, rng);
    toks.truncate(toks.len() / 2 * 2);
    let half = toks.len() / 2;
    let mut items = Vec::with_capacity(toks.len());
    for (i, mut t) in toks.into_iter().enumerate() {
        let label = usize::from(i < half);
        if label == 1 {
            let pairs = swappable_pairs(&t);
            let p = pairs[rng.random_range(0..pairs.len())];
            t.swap(p, p + 1);
        }
        items.push(ProbeItem { tokens: t, label });
    }
    Ok(split("bigram_shift", 2, items, rng))
}

/// Sentence length (3 classes), word content (4 words) and bigram-shift detection.
pub fn synthetic_probe_datasets(sentences: &[String], rng: &mut Rng) -> Result<Vec<ProbeDataset>> {
    Ok(alloc::vec![
        sentence_length_probe(sentences, 3, rng)?,
        word_content_probe(sentences, 4, rng)?,
        bigram_shift_probe(sentences, rng)?,
    ])
}
