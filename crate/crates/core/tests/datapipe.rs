//! Structural invariants of pre-training example construction.

use hibert_core::datapipe::masking::is_eligible;
use hibert_core::datapipe::synth::toy_corpus;
use hibert_core::datapipe::{
    apply_bigram_shift, build_pretrain_examples, undo_bigram_shift, BigramConfig, Document, PipelineConfig, Vocab, IGNORE,
};
use hibert_core::rng::stream;
use proptest::prelude::*;

fn corpus(seed: u64, docs: usize) -> (Vec<Document>, Vocab) {
    let docs = toy_corpus(docs, 2, 6, &mut stream(seed, "corpus", 0));
    let vocab = Vocab::build(docs.iter().flatten().map(String::as_str), 1).unwrap();
    (docs, vocab)
}

fn with_bigram(rate: f64) -> PipelineConfig {
    PipelineConfig { bigram: BigramConfig { enabled: true, rate, ..BigramConfig::default() }, ..PipelineConfig::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn examples_are_well_formed(seed in 0u64..10_000, max_len in 7usize..40, bigram in any::<bool>()) {
        let (docs, vocab) = corpus(seed, 6);
        let cfg = if bigram { with_bigram(0.3) } else { PipelineConfig::default() };
        let (examples, stats) = build_pretrain_examples(&docs, &vocab, max_len, &cfg, seed).unwrap();
        prop_assert_eq!(stats.examples, examples.len());
        for e in &examples {
            prop_assert_eq!(e.token_ids.len(), max_len);
            prop_assert_eq!(e.segment_ids.len(), max_len);
            prop_assert_eq!(e.attention_mask.len(), max_len);
            prop_assert_eq!(e.mlm_labels.len(), max_len);
            prop_assert_eq!(e.bigram_labels.len(), max_len);
            let n = e.content_len();
            prop_assert!(e.attention_mask[..n].iter().all(|&m| m));
            prop_assert!(e.token_ids[n..].iter().all(|&t| t == Vocab::PAD));
            prop_assert_eq!(e.token_ids[0], Vocab::CLS);
            prop_assert_eq!(e.token_ids[n - 1], Vocab::SEP);
            let seps: Vec<usize> = (0..n).filter(|&i| e.token_ids[i] == Vocab::SEP).collect();
            prop_assert_eq!(seps.len(), 2);
            // segment 0 through the first [SEP], segment 1 after it
            for i in 0..n {
                prop_assert_eq!(e.segment_ids[i], usize::from(i > seps[0]));
            }
            prop_assert!(seps[0] >= 2 && seps[1] >= seps[0] + 2, "both sentences keep a token");
            for i in 0..max_len {
                if e.mlm_labels[i] != IGNORE {
                    prop_assert!(i < n && is_eligible(e.token_ids[i]));
                    prop_assert!(is_eligible(e.mlm_labels[i] as usize));
                }
                prop_assert_eq!(e.bigram_labels[i] == IGNORE, !(i < n && is_eligible(e.token_ids[i])));
            }
            prop_assert!(e.mlm_labels.iter().any(|&l| l != IGNORE));
            if !bigram {
                prop_assert!(e.bigram_labels.iter().all(|&l| l == IGNORE || l == 0));
            }
        }
    }

    #[test]
    fn same_seed_same_examples(seed in 0u64..10_000) {
        let (docs, vocab) = corpus(seed, 5);
        let a = build_pretrain_examples(&docs, &vocab, 24, &with_bigram(0.2), seed).unwrap();
        let b = build_pretrain_examples(&docs, &vocab, 24, &with_bigram(0.2), seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn long_examples_extend_short_ones(seed in 0u64..10_000) {
        // the same pairs, masks and swaps at both lengths when nothing is truncated
        let (docs, vocab) = corpus(seed, 5);
        let (short, s) = build_pretrain_examples(&docs, &vocab, 128, &with_bigram(0.2), seed).unwrap();
        let (long, _) = build_pretrain_examples(&docs, &vocab, 384, &with_bigram(0.2), seed).unwrap();
        prop_assume!(s.truncated == 0);
        prop_assert_eq!(short.len(), long.len());
        for (a, b) in short.iter().zip(&long) {
            prop_assert_eq!(&a.token_ids[..], &b.token_ids[..128]);
            prop_assert_eq!(&a.mlm_labels[..], &b.mlm_labels[..128]);
            prop_assert_eq!(a.nsp_label, b.nsp_label);
        }
    }

    #[test]
    fn truncation_respects_max_len(seed in 0u64..10_000, max_len in 5usize..12) {
        let (docs, vocab) = corpus(seed, 4);
        let (examples, stats) = build_pretrain_examples(&docs, &vocab, max_len, &PipelineConfig::default(), seed).unwrap();
        prop_assert!(stats.truncated > 0);
        prop_assert!(examples.iter().all(|e| e.content_len() <= max_len));
    }

    #[test]
    fn bigram_shift_is_an_involution_carrying_mlm_labels(
        tokens in proptest::collection::vec(0usize..12, 2..40),
        seed in 0u64..10_000,
        rate in 0.0f64..=1.0,
    ) {
        let mut shifted = tokens.clone();
        let mut labels: Vec<i64> = (0..tokens.len() as i64).collect();
        let cfg = BigramConfig { enabled: true, rate, ..BigramConfig::default() };
        let shift = apply_bigram_shift(&mut shifted, &mut labels, &cfg, &mut stream(seed, "b", 0));
        for (i, &l) in labels.iter().enumerate() {
            prop_assert_eq!(shifted[i], tokens[l as usize]);
        }
        for w in shift.swaps.windows(2) {
            prop_assert!(w[1] >= w[0] + 2);
        }
        for &i in &shift.swaps {
            prop_assert_ne!(shifted[i], shifted[i + 1]);
        }
        prop_assert!(shift.swaps.len() <= shift.candidates);
        undo_bigram_shift(&mut shifted, &shift.swaps);
        prop_assert_eq!(shifted, tokens);
    }
}

#[test]
fn sampling_rates_match_their_targets() {
    let (docs, vocab) = corpus(11, 400);
    let (examples, stats) = build_pretrain_examples(&docs, &vocab, 128, &with_bigram(0.15), 11).unwrap();
    let three_sigma = |p: f64, n: usize| 3.0 * (p * (1.0 - p) / n as f64).sqrt();

    let m = stats.masking;
    let rate = m.selected as f64 / m.eligible as f64;
    assert!((rate - 0.15).abs() < 0.01, "mask rate {rate} over {} tokens", m.eligible);
    let mask = m.to_mask as f64 / m.selected as f64;
    assert!((mask - 0.8).abs() < three_sigma(0.8, m.selected), "[MASK] share {mask}");
    let random = m.to_random as f64 / m.selected as f64;
    assert!((random - 0.1).abs() < three_sigma(0.1, m.selected), "random share {random}");

    let next = stats.is_next as f64 / examples.len() as f64;
    assert!((next - 0.5).abs() < three_sigma(0.5, examples.len()), "is-next share {next}");
    assert!(!stats.nsp_imbalanced);

    let swap = stats.bigram_swaps as f64 / stats.bigram_candidates as f64;
    assert!((swap - 0.15).abs() < three_sigma(0.15, stats.bigram_candidates), "swap rate {swap}");
}
