//! Core-term extraction: per-term retention probabilities from the core head,
//! the summed binary cross-entropy objective, threshold inference, and the
//! sub-query score derived from the term probabilities.

use crate::encoder::Encoder;
use crate::tokenizer::{encode_single, Vocab};
use crate::{Error, KeepMask, Query, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Retention probability per query term, each strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct TermScores(Vec<f64>);

impl TermScores {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("term scores"));
        }
        if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::Config(format!("term probability {p} outside (0, 1)")));
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Runs the encoder over `[CLS] q [SEP]` and reads `σ(w_c·h_i + b_c)` at each
/// term position. Fails if the query does not fit in `max_len`.
pub fn term_scores(model: &Encoder, vocab: &Vocab, q: &Query, max_len: usize) -> Result<TermScores> {
    let seq = encode_single(q, vocab, max_len);
    if seq.term_spans.len() < q.len() {
        return Err(Error::QueryTooLong {
            terms: q.len(),
            limit: seq.term_spans.len(),
        });
    }
    let hidden = model.forward(&seq, None)?;
    let probs = model
        .core_logits(&hidden, &seq.term_spans)
        .into_iter()
        // Saturated logits would leave (0, 1) in floating point.
        .map(|z| sigmoid(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
        .collect();
    TermScores::new(probs)
}

/// `−Σ_i [y_i ln ŷ_i + (1−y_i) ln(1−ŷ_i)]`, summed over terms.
pub fn core_loss(scores: &TermScores, gold: &KeepMask) -> Result<f64> {
    check_len(scores.len(), gold.len())?;
    Ok(scores
        .probs()
        .iter()
        .zip(gold.bits())
        .map(|(&p, &y)| if y { -p.ln() } else { -(1.0 - p).ln() })
        .sum())
}

/// The same loss computed from logits, with its gradient `ŷ_i − y_i`.
pub(crate) fn core_loss_from_logits(logits: &[f64], gold: &KeepMask) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(gold.bits())
        .map(|(&z, &y)| {
            let y = if y { 1.0 } else { 0.0 };
            // softplus(z) − y·z, stable for large |z|.
            loss += z.max(0.0) - y * z + (-z.abs()).exp().ln_1p();
            sigmoid(z) - y
        })
        .collect();
    (loss, grad)
}

/// Keeps terms with `ŷ_i ≥ threshold`; if none qualifies, keeps the single
/// highest-scoring term (lowest index on ties).
pub fn reduce_by_threshold(scores: &TermScores, threshold: f64) -> KeepMask {
    let bits: Vec<bool> = scores.probs().iter().map(|&p| p >= threshold).collect();
    KeepMask::new(bits).unwrap_or_else(|_| {
        let mut best = 0;
        for (i, &p) in scores.probs().iter().enumerate() {
            if p > scores.probs()[best] {
                best = i;
            }
        }
        let mut bits = vec![false; scores.len()];
        bits[best] = true;
        KeepMask::new(bits).expect("one bit set")
    })
}

/// Mean over terms of `ŷ_i` (kept) or `1 − ŷ_i` (removed).
pub fn score_subquery_core(scores: &TermScores, candidate: &KeepMask) -> Result<f64> {
    check_len(scores.len(), candidate.len())?;
    let total: f64 = scores
        .probs()
        .iter()
        .zip(candidate.bits())
        .map(|(&p, &keep)| if keep { p } else { 1.0 - p })
        .sum();
    Ok(total / scores.len() as f64)
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::LengthMismatch { expected, actual });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use proptest::prelude::*;

    fn ts(p: &[f64]) -> TermScores {
        TermScores::new(p.to_vec()).unwrap()
    }

    fn mask(bits: &[u8]) -> KeepMask {
        KeepMask::new(bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    fn fixture() -> (Encoder, Vocab, Query) {
        let q = Query::parse("cheap red shoes").unwrap();
        let v = Vocab::build(std::slice::from_ref(&q), 1).unwrap();
        let m = Encoder::init(EncoderConfig::toy(v.len(), 60)).unwrap();
        (m, v, q)
    }

    #[test]
    fn zero_head_gives_one_half() {
        let (mut m, v, q) = fixture();
        m.tensor_mut("head.core.weight").unwrap().fill(0.0);
        let s = term_scores(&m, &v, &q, 60).unwrap();
        assert_eq!(s.probs(), &[0.5, 0.5, 0.5]);
        m.tensor_mut("head.core.bias").unwrap()[0] = 1e6;
        let s = term_scores(&m, &v, &q, 60).unwrap();
        assert!(s.probs().iter().all(|&p| p > 1.0 - 1e-15 && p < 1.0));
    }

    #[test]
    fn term_scores_are_reproducible_and_bounded() {
        let (m, v, q) = fixture();
        assert_eq!(term_scores(&m, &v, &q, 60).unwrap(), term_scores(&m, &v, &q, 60).unwrap());
        let long = Query::new((0..70).map(|i| format!("t{i}"))).unwrap();
        assert!(matches!(term_scores(&m, &v, &long, 60), Err(Error::QueryTooLong { .. })));
    }

    #[test]
    fn core_loss_examples() {
        let l = core_loss(&ts(&[0.5, 0.5]), &mask(&[1, 0])).unwrap();
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((l - 1.3863).abs() < 1e-4);
        let l = core_loss(&ts(&[0.9]), &mask(&[1])).unwrap();
        assert!((l - 0.10536).abs() < 1e-5);
        let l = core_loss(&ts(&[1.0 - 1e-12, 1e-12]), &mask(&[1, 0])).unwrap();
        assert!(l < 1e-11);
        assert!(core_loss(&ts(&[0.5]), &mask(&[1, 0])).is_err());
    }

    #[test]
    fn logit_loss_matches_probability_loss() {
        let logits = [2.0, -1.0, 0.3];
        let gold = mask(&[1, 0, 0]);
        let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
        let (l, g) = core_loss_from_logits(&logits, &gold);
        assert!((l - core_loss(&ts(&probs), &gold).unwrap()).abs() < 1e-12);
        assert!((g[0] - (probs[0] - 1.0)).abs() < 1e-15);
        // Saturated logits stay finite.
        let (l, _) = core_loss_from_logits(&[800.0, -800.0], &mask(&[0, 1]));
        assert_eq!(l, 1600.0);
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(reduce_by_threshold(&ts(&[0.9, 0.2, 0.7]), 0.5), mask(&[1, 0, 1]));
        assert_eq!(reduce_by_threshold(&ts(&[0.1, 0.2]), 0.5), mask(&[0, 1]));
        assert_eq!(reduce_by_threshold(&ts(&[0.5, 0.5]), 0.5), mask(&[1, 1]));
        assert_eq!(reduce_by_threshold(&ts(&[0.3, 0.3]), 0.5), mask(&[1, 0]));
    }

    #[test]
    fn subquery_core_examples() {
        let s = ts(&[0.9, 0.2, 0.7]);
        assert!((score_subquery_core(&s, &mask(&[1, 0, 1])).unwrap() - 0.8).abs() < 1e-12);
        assert!((score_subquery_core(&s, &KeepMask::all(3)).unwrap() - 0.6).abs() < 1e-12);
        let half = ts(&[0.5; 4]);
        assert_eq!(score_subquery_core(&half, &mask(&[0, 1, 0, 0])).unwrap(), 0.5);
        assert!(score_subquery_core(&s, &mask(&[1, 0])).is_err());
    }

    fn all_masks(n: usize) -> impl Iterator<Item = KeepMask> {
        (1u32..1 << n).map(move |b| KeepMask::new((0..n).map(|i| b >> i & 1 == 1).collect()).unwrap())
    }

    proptest! {
        #[test]
        fn loss_nonnegative_and_monotone(p in prop::collection::vec(0.01f64..0.99, 1..8), bits in any::<u8>(), which in any::<prop::sample::Index>()) {
            let n = p.len();
            let mut gold: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
            gold[0] = true;
            let gold = KeepMask::new(gold).unwrap();
            let base = core_loss(&ts(&p), &gold).unwrap();
            prop_assert!(base >= 0.0);
            let i = which.index(n);
            let mut q = p.clone();
            let target = if gold.bits()[i] { 1.0 } else { 0.0 };
            q[i] += (target - q[i]) * 0.5;
            prop_assert!(core_loss(&ts(&q), &gold).unwrap() < base);
        }

        #[test]
        fn per_term_rule_maximizes_core_score(p in prop::collection::vec(0.001f64..0.999, 1..=10)) {
            let s = ts(&p);
            let best = all_masks(p.len())
                .map(|m| score_subquery_core(&s, &m).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            let rule: Vec<bool> = p.iter().map(|&x| x >= 0.5).collect();
            if let Ok(rule) = KeepMask::new(rule) {
                prop_assert!((score_subquery_core(&s, &rule).unwrap() - best).abs() < 1e-12);
            }
        }

        #[test]
        fn flipping_a_bit_has_closed_form_delta(p in prop::collection::vec(0.001f64..0.999, 2..10), i in any::<prop::sample::Index>()) {
            let n = p.len();
            let s = ts(&p);
            let full = KeepMask::all(n);
            let i = i.index(n);
            let dropped = full.without(i).unwrap();
            let delta = score_subquery_core(&s, &full).unwrap() - score_subquery_core(&s, &dropped).unwrap();
            prop_assert!((delta - (2.0 * p[i] - 1.0) / n as f64).abs() < 1e-12);
        }

        #[test]
        fn threshold_keeps_at_least_one(p in prop::collection::vec(0.001f64..0.999, 1..12), t in 0.0f64..1.0) {
            prop_assert!(reduce_by_threshold(&ts(&p), t).kept() >= 1);
        }
    }
}
