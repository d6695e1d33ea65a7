//! Sub-query selection: cross-encoded pair scores, negative sampling and the
//! softmax negative log-likelihood over one positive and its negatives.

use std::collections::HashSet;

use rand::Rng;

use crate::encoder::Encoder;
use crate::rng;
use crate::tokenizer::{encode_pair, Vocab};
use crate::{Error, KeepMask, Query, Result};

pub const DEFAULT_NEGATIVES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub mask: KeepMask,
    pub score: f64,
}

/// `w_s · h_[CLS] + b_s` for the pair `[CLS] q [SEP] q' [SEP]`.
pub fn subquery_score(model: &Encoder, vocab: &Vocab, q: &Query, candidate: &KeepMask, max_len: usize) -> Result<f64> {
    let seq = encode_pair(q, candidate, vocab, max_len)?;
    let hidden = model.forward(&seq, None)?;
    Ok(model.sub_score(&hidden))
}

/// Number of masks eligible as negatives: non-empty, not all-true, not gold.
fn pool_size(len: usize, gold: &KeepMask) -> Option<u128> {
    (len < 127).then(|| {
        let nonempty = (1u128 << len) - 1;
        nonempty - 1 - u128::from(!gold.is_all())
    })
}

/// Uniform sample without replacement of up to `n` masks that keep at least
/// one term and are neither `gold` nor the original query. Returns every
/// eligible mask when there are at most `n`. Deterministic per
/// `(seed, epoch, query_index)`.
pub fn sample_negatives(gold: &KeepMask, n: usize, seed: u64, epoch: u64, query_index: u64) -> Result<Vec<KeepMask>> {
    if n == 0 {
        return Err(Error::Config("number of negatives must be at least 1".into()));
    }
    let len = gold.len();
    let eligible = |m: &KeepMask| m != gold && !m.is_all();
    match pool_size(len, gold) {
        Some(pool) if pool <= n as u128 => {
            // Small pools are enumerated in mask order.
            return Ok((1u128..1 << len)
                .map(|b| KeepMask::new((0..len).map(|i| b >> i & 1 == 1).collect()).expect("non-empty"))
                .filter(eligible)
                .collect());
        }
        _ => {}
    }
    let mut rng = rng::stream(seed, &[0x6e65_6773, epoch, query_index]);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        // Fair coin per bit is uniform over all masks; rejection removes
        // the empty, full and gold masks.
        let bits: Vec<bool> = (0..len).map(|_| rng.random_bool(0.5)).collect();
        let Ok(m) = KeepMask::new(bits) else { continue };
        if eligible(&m) && seen.insert(m.clone()) {
            out.push(m);
        }
    }
    Ok(out)
}

/// `−ln( e^pos / (e^pos + Σ e^neg) )`, max-shifted. Zero with no negatives.
pub fn selection_loss(pos_score: f64, neg_scores: &[f64]) -> f64 {
    let scores: Vec<f64> = std::iter::once(pos_score).chain(neg_scores.iter().copied()).collect();
    selection_loss_and_grad(&scores).0
}

/// Loss for `scores = [pos, neg...]` and its gradient `softmax − e_0`.
pub(crate) fn selection_loss_and_grad(scores: &[f64]) -> (f64, Vec<f64>) {
    if scores.len() <= 1 {
        return (0.0, vec![0.0; scores.len()]);
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = (max - scores[0]) + sum.ln();
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[0] -= 1.0;
    (loss.max(0.0), grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use proptest::prelude::*;

    fn mask(bits: &[u8]) -> KeepMask {
        KeepMask::new(bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn degenerate_head_scores_its_bias() {
        let q = Query::parse("a b c").unwrap();
        let v = Vocab::build(std::slice::from_ref(&q), 1).unwrap();
        let mut m = Encoder::init(EncoderConfig::toy(v.len(), 120)).unwrap();
        m.tensor_mut("head.sub.weight").unwrap().fill(0.0);
        m.tensor_mut("head.sub.bias").unwrap()[0] = 0.3;
        for bits in [[1, 0, 1], [0, 1, 0], [1, 1, 1]] {
            assert_eq!(subquery_score(&m, &v, &q, &mask(&bits), 120).unwrap(), 0.3);
        }
    }

    #[test]
    fn untrained_scores_are_deterministic() {
        let q = Query::parse("a b c").unwrap();
        let v = Vocab::build(std::slice::from_ref(&q), 1).unwrap();
        let m = Encoder::init(EncoderConfig::toy(v.len(), 120)).unwrap();
        let a = subquery_score(&m, &v, &q, &mask(&[1, 0, 1]), 120).unwrap();
        assert_eq!(a, subquery_score(&m, &v, &q, &mask(&[1, 0, 1]), 120).unwrap());
        assert_ne!(a, subquery_score(&m, &v, &q, &mask(&[0, 1, 1]), 120).unwrap());
    }

    #[test]
    fn negative_pools_by_enumeration() {
        let negs = sample_negatives(&mask(&[1, 0, 1]), 5, 0, 0, 0).unwrap();
        assert_eq!(negs.len(), 5);
        assert_eq!(negs.iter().collect::<HashSet<_>>().len(), 5);
        assert_eq!(sample_negatives(&mask(&[1, 0]), 5, 0, 0, 0).unwrap(), vec![mask(&[0, 1])]);
        assert!(sample_negatives(&mask(&[1]), 5, 0, 0, 0).unwrap().is_empty());
        assert!(sample_negatives(&mask(&[1, 0]), 0, 0, 0, 0).is_err());
    }

    #[test]
    fn sampling_is_deterministic_per_coordinates() {
        let gold = mask(&[1, 0, 1, 1, 0, 1, 0, 1]);
        let a = sample_negatives(&gold, 5, 7, 2, 11).unwrap();
        assert_eq!(a, sample_negatives(&gold, 5, 7, 2, 11).unwrap());
        assert_ne!(a, sample_negatives(&gold, 5, 7, 3, 11).unwrap());
        assert_ne!(a, sample_negatives(&gold, 5, 7, 2, 12).unwrap());
        // Long queries take the rejection path without enumeration.
        let long = KeepMask::new((0..200).map(|i| i % 3 != 0).collect()).unwrap();
        assert_eq!(sample_negatives(&long, 5, 0, 0, 0).unwrap().len(), 5);
    }

    #[test]
    fn sampled_negatives_are_roughly_uniform() {
        // |q| = 4 with gold of 2 bits leaves 13 eligible masks.
        let gold = mask(&[1, 0, 1, 0]);
        let mut counts = std::collections::HashMap::new();
        for qi in 0..2600 {
            for m in sample_negatives(&gold, 1, 1, 0, qi).unwrap() {
                *counts.entry(m).or_insert(0usize) += 1;
            }
        }
        assert_eq!(counts.len(), 13);
        // Expected 200 each; 5 sd ≈ 70.
        assert!(counts.values().all(|&c| (130..=270).contains(&c)), "{counts:?}");
    }

    #[test]
    fn exhaustive_exclusion_check() {
        for len in 1..=6usize {
            for g in 1u32..(1 << len) - 1 {
                let gold = KeepMask::new((0..len).map(|i| g >> i & 1 == 1).collect()).unwrap();
                for n in [1, 5, 100] {
                    let negs = sample_negatives(&gold, n, 3, 1, g as u64).unwrap();
                    let pool = (1usize << len) - 3;
                    assert_eq!(negs.len(), n.min(pool));
                    assert!(negs.iter().all(|m| m != &gold && !m.is_all() && m.kept() >= 1));
                    assert_eq!(negs.iter().collect::<HashSet<_>>().len(), negs.len());
                }
            }
        }
    }

    #[test]
    fn loss_examples() {
        assert!((selection_loss(0.0, &[0.0; 5]) - 6f64.ln()).abs() < 1e-12);
        assert!((selection_loss(0.0, &[0.0; 5]) - 1.7918).abs() < 1e-4);
        assert!(selection_loss(50.0, &[0.0, -3.0]) < 1e-20);
        assert_eq!(selection_loss(1.0, &[]), 0.0);
        // Overflow-prone magnitudes.
        assert!((selection_loss(1000.0, &[1000.0]) - 2f64.ln()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn shift_invariant(pos in -20.0f64..20.0, negs in prop::collection::vec(-20.0f64..20.0, 0..8), c in -50.0f64..50.0) {
            let shifted: Vec<f64> = negs.iter().map(|n| n + c).collect();
            let a = selection_loss(pos, &negs);
            prop_assert!(a >= 0.0);
            prop_assert!((selection_loss(pos + c, &shifted) - a).abs() < 1e-12);
        }

        #[test]
        fn equal_scores_give_log_count(s in -30.0f64..30.0, n in 0usize..10) {
            prop_assert!((selection_loss(s, &vec![s; n]) - ((n + 1) as f64).ln()).abs() < 1e-12);
        }
    }
}
