//! Query-pair logs: types, TSV ingestion, evaluation filtering, splitting
//! and a synthetic generator.
//!
//! A log line is `session_id \t original_query \t reduced_query`. The reduced
//! query must be an order-preserving strict sub-sequence of the original.

mod synth;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub use synth::{generate_synthetic, NoisePlacement, SynthConfig, SynthCorpus};

/// A whitespace-tokenized query. Never empty; terms contain no whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Query(Vec<String>);

impl Query {
    pub fn new<S: Into<String>>(terms: impl IntoIterator<Item = S>) -> Result<Self> {
        let terms: Vec<String> = terms.into_iter().map(Into::into).collect();
        if terms.is_empty() {
            return Err(Error::InvalidQuery("query has no terms".into()));
        }
        if let Some(bad) = terms
            .iter()
            .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(Error::InvalidQuery(format!("bad term {bad:?}")));
        }
        Ok(Self(terms))
    }

    /// Splits on whitespace, which also normalizes runs of spaces and trims.
    pub fn parse(s: &str) -> Result<Self> {
        Self::new(s.split_whitespace())
    }

    pub fn terms(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The sub-query selected by `mask`.
    pub fn apply(&self, mask: &KeepMask) -> Result<Query> {
        if mask.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: mask.len(),
            });
        }
        Query::new(
            self.0
                .iter()
                .zip(mask.bits())
                .filter(|(_, &keep)| keep)
                .map(|(t, _)| t.clone()),
        )
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// Retention mask over the terms of an original query (`true` = kept).
///
/// Ordering is lexicographic over the bits with `false < true`; the reducers
/// rely on it for tie-breaking.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeepMask(Vec<bool>);

impl KeepMask {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if !bits.iter().any(|&b| b) {
            return Err(Error::InvalidQuery("mask keeps no term".into()));
        }
        Ok(Self(bits))
    }

    pub fn all(len: usize) -> Self {
        assert!(len > 0, "mask over an empty query");
        Self(vec![true; len])
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_all(&self) -> bool {
        self.0.iter().all(|&b| b)
    }

    /// Copy with bit `i` cleared, or `None` if that would empty the mask.
    pub fn without(&self, i: usize) -> Option<Self> {
        if !self.0[i] || self.kept() == 1 {
            return None;
        }
        let mut bits = self.0.clone();
        bits[i] = false;
        Some(Self(bits))
    }
}

impl fmt::Display for KeepMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Leftmost-greedy alignment of `reduced` into `original`, or `None` when
/// `reduced` is not an order-preserving sub-sequence.
fn align(original: &Query, reduced: &Query) -> Option<Vec<bool>> {
    let mut bits = vec![false; original.len()];
    let mut want = reduced.terms().iter().peekable();
    for (bit, term) in bits.iter_mut().zip(original.terms()) {
        if want.peek() == Some(&term) {
            *bit = true;
            want.next();
        }
    }
    want.peek().is_none().then_some(bits)
}

/// A session-stamped (original, reduced) observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryPair {
    session_id: String,
    original: Query,
    reduced: Query,
}

impl QueryPair {
    pub fn new(session_id: impl Into<String>, original: Query, reduced: Query) -> Result<Self> {
        if reduced.len() >= original.len() {
            return Err(Error::InvalidPair(format!(
                "reduced query `{reduced}` is not shorter than `{original}`"
            )));
        }
        if align(&original, &reduced).is_none() {
            return Err(Error::InvalidPair(format!(
                "`{reduced}` is not an order-preserving sub-sequence of `{original}`"
            )));
        }
        Ok(Self {
            session_id: session_id.into(),
            original,
            reduced,
        })
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn original(&self) -> &Query {
        &self.original
    }

    pub fn reduced(&self) -> &Query {
        &self.reduced
    }
}

/// Gold retention mask: bit `i` is set iff original term `i` is matched by
/// the leftmost-greedy alignment of the reduced query.
pub fn gold_mask(pair: &QueryPair) -> KeepMask {
    KeepMask(align(&pair.original, &pair.reduced).expect("QueryPair invariant"))
}

/// Parses a TSV log. Lines with invalid queries or pairs are skipped and
/// counted; a wrong field count is fatal. Blank lines are ignored.
pub fn parse_log<R: BufRead>(reader: R) -> Result<(Vec<QueryPair>, usize)> {
    let mut pairs = Vec::new();
    let mut rejected = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::FieldCount {
                line: idx + 1,
                found: fields.len(),
            });
        }
        let pair = Query::parse(fields[1])
            .and_then(|o| Query::parse(fields[2]).map(|r| (o, r)))
            .and_then(|(o, r)| QueryPair::new(fields[0], o, r));
        match pair {
            Ok(p) => pairs.push(p),
            Err(_) => rejected += 1,
        }
    }
    Ok((pairs, rejected))
}

pub fn write_log<W: Write>(mut w: W, pairs: &[QueryPair]) -> Result<()> {
    for p in pairs {
        writeln!(w, "{}\t{}\t{}", p.session_id, p.original, p.reduced)?;
    }
    Ok(())
}

/// Keeps every pair whose original is always reduced the same way and
/// occurs in at least two distinct sessions. Idempotent.
pub fn retain_consistent(pairs: &[QueryPair]) -> Vec<QueryPair> {
    #[derive(Default)]
    struct Group<'a> {
        reduced: Option<&'a Query>,
        consistent: bool,
        sessions: BTreeSet<&'a str>,
    }
    let mut groups: HashMap<&Query, Group> = HashMap::new();
    for p in pairs {
        let g = groups.entry(&p.original).or_insert_with(|| Group {
            consistent: true,
            ..Default::default()
        });
        match g.reduced {
            None => g.reduced = Some(&p.reduced),
            Some(r) if r != &p.reduced => g.consistent = false,
            Some(_) => {}
        }
        g.sessions.insert(&p.session_id);
    }
    pairs
        .iter()
        .filter(|p| {
            let g = &groups[&p.original];
            g.consistent && g.sessions.len() >= 2
        })
        .cloned()
        .collect()
}

/// Evaluation filter: one representative pair per surviving original (the
/// one with the lexicographically smallest session id), in order of the
/// original's first appearance.
pub fn filter_eval_pairs(pairs: &[QueryPair]) -> Vec<QueryPair> {
    let kept = retain_consistent(pairs);
    let mut best: HashMap<&Query, usize> = HashMap::new();
    let mut order = Vec::new();
    for (i, p) in kept.iter().enumerate() {
        match best.get_mut(&p.original) {
            None => {
                best.insert(&p.original, i);
                order.push(&p.original);
            }
            Some(j) if p.session_id < kept[*j].session_id => *j = i,
            Some(_) => {}
        }
    }
    order.iter().map(|q| kept[best[q]].clone()).collect()
}

/// Train/validation/test ratios plus the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub valid_ratio: f64,
    pub test_ratio: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_ratio: f64, valid_ratio: f64, test_ratio: f64, seed: u64) -> Result<Self> {
        let ratios = [train_ratio, valid_ratio, test_ratio];
        if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config(format!("split ratios {ratios:?} outside [0, 1]")));
        }
        if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {ratios:?} do not sum to 1")));
        }
        Ok(Self {
            train_ratio,
            valid_ratio,
            test_ratio,
            seed,
        })
    }

    /// Unique-query counts per partition: validation and test are floored,
    /// training takes the remainder.
    pub fn counts(&self, uniques: usize) -> (usize, usize, usize) {
        // The small offset absorbs products like 0.29 * 100 = 28.999999999999996.
        let floor = |r: f64| ((r * uniques as f64) + 1e-9).floor() as usize;
        let valid = floor(self.valid_ratio).min(uniques);
        let test = floor(self.test_ratio).min(uniques - valid);
        (uniques - valid - test, valid, test)
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_ratio: 0.8,
            valid_ratio: 0.1,
            test_ratio: 0.1,
            seed: 0,
        }
    }
}

pub struct Split {
    pub train: Vec<QueryPair>,
    pub valid: Vec<QueryPair>,
    pub test: Vec<QueryPair>,
}

/// Partitions pairs by their original query. Unique originals are shuffled
/// with the spec's seed, then cut into train/valid/test; each pair follows
/// its original. Pair order within a partition follows the input.
pub fn split_by_original(pairs: &[QueryPair], spec: &SplitSpec) -> Result<Split> {
    let mut seen = HashSet::new();
    let mut uniques: Vec<&Query> = Vec::new();
    for p in pairs {
        if seen.insert(&p.original) {
            uniques.push(&p.original);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    uniques.shuffle(&mut rng);

    let (n_train, n_valid, n_test) = spec.counts(uniques.len());
    let positive = [spec.train_ratio, spec.valid_ratio, spec.test_ratio]
        .iter()
        .filter(|&&r| r > 0.0)
        .count();
    if uniques.len() >= positive {
        for (name, ratio, n) in [
            ("train", spec.train_ratio, n_train),
            ("valid", spec.valid_ratio, n_valid),
            ("test", spec.test_ratio, n_test),
        ] {
            if ratio > 0.0 && n == 0 {
                return Err(Error::Config(format!(
                    "{name} partition would be empty with {} unique queries",
                    uniques.len()
                )));
            }
        }
    }

    let mut part: HashMap<&Query, u8> = HashMap::new();
    for (i, q) in uniques.iter().enumerate() {
        let p = if i < n_train {
            0
        } else if i < n_train + n_valid {
            1
        } else {
            2
        };
        part.insert(q, p);
    }
    let mut split = Split {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for p in pairs {
        match part[&p.original] {
            0 => split.train.push(p.clone()),
            1 => split.valid.push(p.clone()),
            _ => split.test.push(p.clone()),
        }
    }
    Ok(split)
}

/// [`split_by_original`], then [`filter_eval_pairs`] on the validation and
/// test partitions. Training pairs are left as logged.
pub fn split_for_training(pairs: &[QueryPair], spec: &SplitSpec) -> Result<Split> {
    let split = split_by_original(pairs, spec)?;
    Ok(Split {
        valid: filter_eval_pairs(&split.valid),
        test: filter_eval_pairs(&split.test),
        train: split.train,
    })
}
