//! Inference: greedy sub-query search, its exhaustive oracle, pluggable
//! scorers, and the [`QueryReducer`] interface shared with the baselines.
//!
//! Greedy search starts from the original query. Each round scores the
//! current mask together with every mask obtained by deleting one kept term
//! and moves to the best; it stops as soon as the current mask wins its own
//! round. Ties prefer fewer kept terms, then the lexicographically smallest
//! mask, so results never depend on evaluation order.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::Mutex;

use crate::coreterm::{reduce_by_threshold, score_subquery_core, term_scores, TermScores};
use crate::encoder::Encoder;
use crate::querylog::gold_mask;
use crate::subselect::subquery_score;
use crate::tokenizer::Vocab;
use crate::{metrics, Error, KeepMask, Query, QueryPair, Result};

/// Weight of the core-view score in the aggregated score.
pub const DEFAULT_ALPHA: f64 = 4.0;
pub const BRUTE_FORCE_MAX_TERMS: usize = 12;

pub trait Scorer {
    fn score(&self, q: &Query, mask: &KeepMask) -> Result<f64>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score(&self, q: &Query, mask: &KeepMask) -> Result<f64> {
        (**self).score(q, mask)
    }
}

/// Adapts a plain function or closure.
pub struct FnScorer<F>(pub F);

impl<F: Fn(&Query, &KeepMask) -> f64> Scorer for FnScorer<F> {
    fn score(&self, q: &Query, mask: &KeepMask) -> Result<f64> {
        Ok((self.0)(q, mask))
    }
}

/// Core-view score from precomputed term probabilities (ignores the query
/// text; only its length must match).
pub struct FixedCoreScorer(pub TermScores);

impl Scorer for FixedCoreScorer {
    fn score(&self, _q: &Query, mask: &KeepMask) -> Result<f64> {
        score_subquery_core(&self.0, mask)
    }
}

/// Core-view score from a trained core model. The term probabilities of the
/// most recent query are cached.
pub struct CoreScorer<'a> {
    model: &'a Encoder,
    vocab: &'a Vocab,
    max_len: usize,
    cache: Mutex<Option<(Query, TermScores)>>,
}

impl<'a> CoreScorer<'a> {
    pub fn new(model: &'a Encoder, vocab: &'a Vocab, max_len: usize) -> Self {
        Self {
            model,
            vocab,
            max_len,
            cache: Mutex::new(None),
        }
    }

    pub fn term_scores(&self, q: &Query) -> Result<TermScores> {
        let mut cache = self.cache.lock().expect("cache lock");
        if let Some((cq, s)) = cache.as_ref() {
            if cq == q {
                return Ok(s.clone());
            }
        }
        let s = term_scores(self.model, self.vocab, q, self.max_len)?;
        *cache = Some((q.clone(), s.clone()));
        Ok(s)
    }
}

impl Scorer for CoreScorer<'_> {
    fn score(&self, q: &Query, mask: &KeepMask) -> Result<f64> {
        score_subquery_core(&self.term_scores(q)?, mask)
    }
}

/// Cross-encoder pair score from a trained sub-query model.
pub struct SubScorer<'a> {
    model: &'a Encoder,
    vocab: &'a Vocab,
    max_len: usize,
}

impl<'a> SubScorer<'a> {
    pub fn new(model: &'a Encoder, vocab: &'a Vocab, max_len: usize) -> Self {
        Self { model, vocab, max_len }
    }
}

impl Scorer for SubScorer<'_> {
    fn score(&self, q: &Query, mask: &KeepMask) -> Result<f64> {
        subquery_score(self.model, self.vocab, q, mask, self.max_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationWeight(f64);

impl AggregationWeight {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha >= 0.0 && alpha.is_finite() {
            Ok(Self(alpha))
        } else {
            Err(Error::Config(format!("aggregation weight {alpha} must be finite and non-negative")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for AggregationWeight {
    fn default() -> Self {
        Self(DEFAULT_ALPHA)
    }
}

pub fn aggregate_score(s_sub: f64, s_core: f64, alpha: AggregationWeight) -> f64 {
    s_sub + alpha.0 * s_core
}

/// `s_sub + α · s_core`.
pub struct AggregatedScorer<S, C> {
    pub sub: S,
    pub core: C,
    pub alpha: AggregationWeight,
}

impl<S: Scorer, C: Scorer> Scorer for AggregatedScorer<S, C> {
    fn score(&self, q: &Query, mask: &KeepMask) -> Result<f64> {
        Ok(aggregate_score(self.sub.score(q, mask)?, self.core.score(q, mask)?, self.alpha))
    }
}

/// True if `(a_score, a)` should be preferred over `(b_score, b)`.
fn better(a_score: f64, a: &KeepMask, b_score: f64, b: &KeepMask) -> bool {
    match a_score.partial_cmp(&b_score) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Less) => false,
        // Equal (or unordered): fewer kept terms, then smaller mask.
        _ => (a.kept(), a) < (b.kept(), b),
    }
}

/// One greedy round: the candidates considered and the winner.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyRound {
    pub candidates: Vec<(KeepMask, f64)>,
    pub best: KeepMask,
}

pub fn greedy_reduce<S: Scorer + ?Sized>(scorer: &S, q: &Query) -> Result<KeepMask> {
    Ok(greedy_reduce_traced(scorer, q)?.0)
}

/// Greedy search, also returning every round (at most `|q|`).
pub fn greedy_reduce_traced<S: Scorer + ?Sized>(scorer: &S, q: &Query) -> Result<(KeepMask, Vec<GreedyRound>)> {
    let mut memo: HashMap<KeepMask, f64> = HashMap::new();
    let mut score = |m: &KeepMask| -> Result<f64> {
        if let Some(&s) = memo.get(m) {
            return Ok(s);
        }
        let s = scorer.score(q, m)?;
        memo.insert(m.clone(), s);
        Ok(s)
    };
    let mut current = KeepMask::all(q.len());
    let mut rounds = Vec::new();
    loop {
        let mut candidates = vec![(current.clone(), score(&current)?)];
        for i in 0..q.len() {
            if let Some(m) = current.without(i) {
                let s = score(&m)?;
                candidates.push((m, s));
            }
        }
        let (mut best, mut best_score) = (&candidates[0].0, candidates[0].1);
        for (m, s) in &candidates[1..] {
            if better(*s, m, best_score, best) {
                best = m;
                best_score = *s;
            }
        }
        let best = best.clone();
        let done = best == current;
        rounds.push(GreedyRound {
            candidates,
            best: best.clone(),
        });
        if done {
            return Ok((current, rounds));
        }
        current = best;
    }
}

/// Scores every non-empty mask and returns the best under the greedy
/// tie-break. Limited to [`BRUTE_FORCE_MAX_TERMS`] terms.
pub fn brute_force_reduce<S: Scorer + ?Sized>(scorer: &S, q: &Query) -> Result<KeepMask> {
    let n = q.len();
    if n > BRUTE_FORCE_MAX_TERMS {
        return Err(Error::QueryTooLong {
            terms: n,
            limit: BRUTE_FORCE_MAX_TERMS,
        });
    }
    let mut best: Option<(KeepMask, f64)> = None;
    for bits in 1u32..1 << n {
        let m = KeepMask::new((0..n).map(|i| bits >> i & 1 == 1).collect()).expect("non-empty");
        let s = scorer.score(q, &m)?;
        match &best {
            Some((bm, bs)) if !better(s, &m, *bs, bm) => {}
            _ => best = Some((m, s)),
        }
    }
    Ok(best.expect("at least one mask").0)
}

/// Anything that maps a query to a keep-mask.
pub trait QueryReducer {
    fn reduce(&self, q: &Query) -> Result<KeepMask>;
}

/// Core-term extraction inference: per-term thresholding.
pub struct ThresholdReducer<'a> {
    pub scorer: CoreScorer<'a>,
    pub threshold: f64,
}

impl QueryReducer for ThresholdReducer<'_> {
    fn reduce(&self, q: &Query) -> Result<KeepMask> {
        Ok(reduce_by_threshold(&self.scorer.term_scores(q)?, self.threshold))
    }
}

/// Greedy search under any scorer.
pub struct GreedyReducer<S>(pub S);

impl<S: Scorer> QueryReducer for GreedyReducer<S> {
    fn reduce(&self, q: &Query) -> Result<KeepMask> {
        greedy_reduce(&self.0, q)
    }
}

/// Predicted masks for each pair's original, in order.
pub fn predict_all<R: QueryReducer + ?Sized>(reducer: &R, pairs: &[QueryPair]) -> Result<Vec<KeepMask>> {
    pairs.iter().map(|p| reducer.reduce(p.original())).collect()
}

/// Runs `reducer` over `pairs` and scores the predictions against the gold
/// masks.
pub fn evaluate<R: QueryReducer + ?Sized>(reducer: &R, pairs: &[QueryPair]) -> Result<metrics::MetricsReport> {
    let evals = pairs
        .iter()
        .map(|p| metrics::per_query_metrics(&reducer.reduce(p.original())?, &gold_mask(p)))
        .collect::<Result<Vec<_>>>()?;
    metrics::aggregate_report(&evals)
}
