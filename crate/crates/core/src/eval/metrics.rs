use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

/// Lowercase, drop punctuation, drop the articles a/an/the, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered: String = text.chars().flat_map(char::to_lowercase).filter(|c| !c.is_ascii_punctuation()).collect();
    let words: Vec<&str> = lowered.split_whitespace().filter(|w| !matches!(*w, "a" | "an" | "the")).collect();
    words.join(" ")
}

fn normalized_tokens(text: &str) -> Vec<String> {
    normalize_answer(text).split(' ').filter(|w| !w.is_empty()).map(String::from).collect()
}

/// `pred` is `None` when the model abstains; an empty `golds` marks an
/// unanswerable question.
pub fn exact_match(pred: Option<&str>, golds: &[String]) -> f64 {
    match (pred, golds.is_empty()) {
        (None, true) => 1.0,
        (None, false) | (Some(_), true) => 0.0,
        (Some(p), false) => {
            let p = normalize_answer(p);
            if golds.iter().any(|g| normalize_answer(g) == p) {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Harmonic mean of bag-overlap precision and recall of two token lists.
pub fn token_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred.len() == gold.len() { 1.0 } else { 0.0 };
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for g in gold {
        *counts.entry(g.as_str()).or_default() += 1;
    }
    let mut same = 0usize;
    for p in pred {
        if let Some(c) = counts.get_mut(p.as_str()) {
            if *c > 0 {
                *c -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return 0.0;
    }
    2.0 * same as f64 / (pred.len() + gold.len()) as f64
}

/// Best [`token_f1`] over the gold answers after normalisation.
pub fn f1_overlap(pred: Option<&str>, golds: &[String]) -> f64 {
    match (pred, golds.is_empty()) {
        (None, true) => 1.0,
        (None, false) | (Some(_), true) => 0.0,
        (Some(p), false) => {
            let p = normalized_tokens(p);
            golds.iter().map(|g| token_f1(&p, &normalized_tokens(g))).fold(0.0, f64::max)
        }
    }
}
