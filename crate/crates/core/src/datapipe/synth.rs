//! Small template-grammar generators for corpora and fine-tuning records.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng as _;

use super::corpus::Document;
use super::finetune::{Answer, NliLabel, NliRecord, QaRecord};
use crate::rng::Rng;

pub const NAMES: [&str; 16] = [
    "alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi", "ivan", "judy", "mallory", "nina", "oscar", "peggy",
    "rupert", "sybil",
];
pub const CITIES: [&str; 12] =
    ["paris", "rome", "lima", "oslo", "cairo", "delhi", "tokyo", "quito", "dakar", "hanoi", "minsk", "sofia"];
const JOBS: [&str; 8] = ["baker", "doctor", "farmer", "pilot", "singer", "tailor", "teacher", "writer"];
const ADJECTIVES: [&str; 12] =
    ["small", "old", "green", "quiet", "bright", "heavy", "warm", "strange", "round", "cold", "tall", "soft"];

/// Each topic owns its nouns and verbs, so documents stay on one subject.
const TOPICS: [([&str; 6], [&str; 4]); 4] = [
    (["river", "boat", "fish", "bridge", "shore", "net"], ["crosses", "follows", "pulls", "watches"]),
    (["garden", "tree", "flower", "seed", "fence", "bird"], ["grows", "waters", "plants", "finds"]),
    (["kitchen", "bread", "soup", "oven", "table", "knife"], ["bakes", "cuts", "serves", "cleans"]),
    (["market", "coin", "basket", "stall", "fruit", "cart"], ["sells", "buys", "carries", "counts"]),
];

fn pick<'a>(rng: &mut Rng, items: &[&'a str]) -> &'a str {
    items[rng.random_range(0..items.len())]
}

fn sentence(rng: &mut Rng, topic: usize) -> String {
    let (nouns, verbs) = &TOPICS[topic];
    let mut s = match rng.random_range(0..4) {
        0 => format!("the {} {} {} the {}", pick(rng, &ADJECTIVES), pick(rng, nouns), pick(rng, verbs), pick(rng, nouns)),
        1 => format!("{} {} a {} {} in {}", pick(rng, &NAMES), pick(rng, verbs), pick(rng, &ADJECTIVES), pick(rng, nouns), pick(rng, &CITIES)),
        2 => format!("{} and {} {} the {}", pick(rng, &NAMES), pick(rng, &NAMES), pick(rng, verbs), pick(rng, nouns)),
        _ => format!("a {} is {}", pick(rng, nouns), pick(rng, &ADJECTIVES)),
    };
    // optional tails vary sentence length
    for _ in 0..rng.random_range(0..3) {
        s.push_str(&format!(" near the {} {}", pick(rng, &ADJECTIVES), pick(rng, nouns)));
    }
    s.push_str(" .");
    s
}

/// `num_docs` documents of `min_sentences..=max_sentences` sentences each.
pub fn toy_corpus(num_docs: usize, min_sentences: usize, max_sentences: usize, rng: &mut Rng) -> Vec<Document> {
    (0..num_docs)
        .map(|_| {
            let topic = rng.random_range(0..TOPICS.len());
            let n = rng.random_range(min_sentences..=max_sentences.max(min_sentences));
            (0..n).map(|_| sentence(rng, topic)).collect()
        })
        .collect()
}

/// Contexts listing where people live; a fraction of questions ask about
/// someone absent from the context.
pub fn qa_records(n: usize, impossible_fraction: f64, rng: &mut Rng) -> Vec<QaRecord> {
    (0..n)
        .map(|i| {
            let facts = rng.random_range(2..=4);
            let mut people: Vec<&str> = Vec::with_capacity(facts + 1);
            while people.len() < facts + 1 {
                let p = pick(rng, &NAMES);
                if !people.contains(&p) {
                    people.push(p);
                }
            }
            let mut context = String::new();
            let mut homes = Vec::with_capacity(facts);
            for p in &people[..facts] {
                let city = pick(rng, &CITIES);
                if !context.is_empty() {
                    context.push(' ');
                }
                homes.push((context.chars().count() + p.len() + " lives in ".len(), city));
                context.push_str(&format!("{p} lives in {city} . {p} works as a {} .", pick(rng, &JOBS)));
            }
            let impossible = rng.random::<f64>() < impossible_fraction;
            let (question, answers) = if impossible {
                (format!("where does {} live ?", people[facts]), Vec::new())
            } else {
                let k = rng.random_range(0..facts);
                let (start, city) = homes[k];
                (format!("where does {} live ?", people[k]), alloc::vec![Answer { text: city.to_string(), start }])
            };
            QaRecord { id: format!("qa-{i}"), question, context, answers }
        })
        .collect()
}

pub fn nli_records(n: usize, rng: &mut Rng) -> Vec<NliRecord> {
    (0..n)
        .map(|_| {
            let name = pick(rng, &NAMES);
            let city = pick(rng, &CITIES);
            let premise = format!("{name} lives in {city} .");
            let label = NliLabel::ALL[rng.random_range(0..3)];
            let hypothesis = match label {
                NliLabel::Entailment => format!("someone lives in {city} ."),
                NliLabel::Contradiction => {
                    let mut other = pick(rng, &CITIES);
                    while other == city {
                        other = pick(rng, &CITIES);
                    }
                    format!("{name} lives in {other} .")
                }
                NliLabel::Neutral => format!("{name} works as a {} .", pick(rng, &JOBS)),
            };
            NliRecord { premise, hypothesis, label }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::finetune::build_qa_examples;
    use crate::datapipe::vocab::Vocab;
    use crate::rng::stream;

    #[test]
    fn documents_have_requested_sizes() {
        let docs = toy_corpus(10, 3, 6, &mut stream(1, "corpus", 0));
        assert_eq!(docs.len(), 10);
        assert!(docs.iter().all(|d| (3..=6).contains(&d.len())));
    }

    #[test]
    fn qa_answers_align_with_context() {
        let recs = qa_records(200, 0.2, &mut stream(2, "qa", 0));
        let texts: Vec<&str> = recs.iter().flat_map(|r| [r.question.as_str(), r.context.as_str()]).collect();
        let vocab = Vocab::build(texts, 1).unwrap();
        let (ex, stats) = build_qa_examples(&recs, &vocab, 384).unwrap();
        assert_eq!(stats.kept, 200);
        for e in ex.iter().filter(|e| !e.impossible) {
            assert_eq!(e.span_text(e.start, e.end), e.answers[0]);
        }
    }
}
