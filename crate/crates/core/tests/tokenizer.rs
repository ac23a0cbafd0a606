use kga2c::corpus;
use kga2c::tokenizer::{
    train_unigram, train_unigram_traced, SubwordModel, TokenizerError, SPECIALS, UNK_ID,
};
use proptest::prelude::*;
use std::sync::OnceLock;

fn model() -> &'static SubwordModel {
    static MODEL: OnceLock<SubwordModel> = OnceLock::new();
    MODEL.get_or_init(|| train_unigram(&corpus::tokenizer_lines(), 512).unwrap())
}

/// Log-likelihood of one piece, mirroring the model's unknown-character rule.
fn piece_lp(m: &SubwordModel, piece: &[char]) -> Option<f64> {
    let s: String = piece.iter().collect();
    match m.id(&s) {
        Some(id) if id >= SPECIALS.len() => m.log_prob(id),
        _ if piece.len() == 1 => Some(m.unknown_log_prob()),
        _ => None,
    }
}

/// Best total over every composition of `chars`, summing right to left.
fn exhaustive_best(m: &SubwordModel, chars: &[char]) -> f64 {
    let n = chars.len();
    if n == 0 {
        return 0.0;
    }
    let mut best = f64::NEG_INFINITY;
    for cuts in 0u32..(1 << (n - 1)) {
        let mut bounds = vec![0];
        bounds.extend((1..n).filter(|i| cuts & (1 << (i - 1)) != 0));
        bounds.push(n);
        let lps: Option<Vec<f64>> = bounds
            .windows(2)
            .map(|w| piece_lp(m, &chars[w[0]..w[1]]))
            .collect();
        if let Some(lps) = lps {
            let total = lps.iter().rev().fold(0.0, |acc, lp| lp + acc);
            best = best.max(total);
        }
    }
    best
}

#[test]
fn exact_size_and_determinism() {
    let lines = corpus::tokenizer_lines();
    let a = train_unigram(&lines, 512).unwrap();
    assert_eq!(a.len(), 512);
    assert_eq!(&a, model());
    assert_eq!(a.to_model_text(), model().to_model_text());
}

#[test]
fn encode_decode_examples() {
    let m = model();
    assert!(m.encode("").is_empty());
    assert_eq!(m.decode(&[]).unwrap(), "");
    assert_eq!(
        m.decode(&[m.len()]),
        Err(TokenizerError::UnknownId(m.len()))
    );
    for line in corpus::tokenizer_lines() {
        let normalized = line.split_whitespace().collect::<Vec<_>>().join(" ");
        assert_eq!(m.decode(&m.encode(&line)).unwrap(), normalized);
    }
    assert!(m.encode("zork☃").contains(&UNK_ID));
}

#[test]
fn tiny_corpus_keeps_only_characters() {
    let m = train_unigram(&["aaaa"], SPECIALS.len() + 2).unwrap();
    let pieces: Vec<&str> = m.pieces().map(|(p, _)| p).skip(SPECIALS.len()).collect();
    assert_eq!(pieces.len(), 2);
    assert!(pieces.iter().all(|p| p.chars().count() == 1));
    assert_eq!(
        train_unigram::<&str>(&[], 10),
        Err(TokenizerError::EmptyCorpus)
    );
    assert!(matches!(
        train_unigram(&["abc"], 3),
        Err(TokenizerError::TargetTooSmall { .. })
    ));
}

#[test]
fn pruning_is_monotone() {
    let (_, rounds) = train_unigram_traced(&corpus::tokenizer_lines(), 512).unwrap();
    assert!(!rounds.is_empty());
    for r in rounds {
        assert!(r.min_kept_loss >= r.max_pruned_loss, "{r:?}");
        assert!(r.size_after < r.size_before);
    }
}

#[test]
fn probabilities_sum_to_at_most_one() {
    let total: f64 = model()
        .pieces()
        .skip(SPECIALS.len())
        .map(|(_, lp)| lp.exp())
        .sum();
    assert!(total <= 1.0 + 1e-9, "{total}");
}

#[test]
fn model_file_round_trip_is_bit_exact() {
    let m = model();
    let back = SubwordModel::from_model_text(&m.to_model_text()).unwrap();
    assert_eq!(&back, m);
    for (a, b) in back.pieces().zip(m.pieces()) {
        assert_eq!(a.1.to_bits(), b.1.to_bits());
    }
}

proptest! {
    #[test]
    fn viterbi_matches_exhaustive(line in 0usize..10_000, start in 0usize..64, len in 1usize..=12) {
        let lines = corpus::tokenizer_lines();
        let chars: Vec<char> = lines[line % lines.len()].chars().collect();
        let start = start % chars.len();
        let sub: Vec<char> = chars[start..(start + len).min(chars.len())].to_vec();
        let text: String = sub.iter().collect();
        let seg = model().segment(&text);
        prop_assert_eq!(seg.log_likelihood, exhaustive_best(model(), &sub));
    }

    #[test]
    fn encode_covers_any_text(text in "\\PC{0,30}") {
        let ids = model().encode(&text);
        prop_assert!(ids.iter().all(|&i| i < model().len()));
        prop_assert_eq!(ids.is_empty(), text.split_whitespace().next().is_none());
    }
}
