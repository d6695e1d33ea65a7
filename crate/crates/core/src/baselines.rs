//! Rule-based reducers: delete terms from either end, or delete the terms
//! most often deleted in training, backing off to the rightmost rule when no
//! term of the query has statistics.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::querylog::gold_mask;
use crate::reducer::QueryReducer;
use crate::{Error, KeepMask, Query, QueryPair, Result};

pub const DEFAULT_NQ: usize = 1;

fn clamp(q: &Query, n_q: usize) -> usize {
    n_q.min(q.len().saturating_sub(1))
}

/// Deletes `min(n_q, |q|−1)` terms from the left.
pub fn leftmost(q: &Query, n_q: usize) -> KeepMask {
    let d = clamp(q, n_q);
    KeepMask::new((0..q.len()).map(|i| i >= d).collect()).expect("at least one kept")
}

/// Deletes `min(n_q, |q|−1)` terms from the right.
pub fn rightmost(q: &Query, n_q: usize) -> KeepMask {
    let keep = q.len() - clamp(q, n_q);
    KeepMask::new((0..q.len()).map(|i| i < keep).collect()).expect("at least one kept")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TermCounts {
    pub deletions: u64,
    pub appearances: u64,
}

/// Per-term deletion and appearance counts over training pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeletionStats(BTreeMap<String, TermCounts>);

impl DeletionStats {
    pub fn build(pairs: &[QueryPair]) -> Self {
        let mut map: BTreeMap<String, TermCounts> = BTreeMap::new();
        for pair in pairs {
            let gold = gold_mask(pair);
            for (term, &kept) in pair.original().terms().iter().zip(gold.bits()) {
                let c = map.entry(term.clone()).or_default();
                c.appearances += 1;
                c.deletions += u64::from(!kept);
            }
        }
        Self(map)
    }

    pub fn get(&self, term: &str) -> Option<TermCounts> {
        self.0.get(term).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `term \t deletions \t appearances`, sorted by term.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for (term, c) in &self.0 {
            writeln!(w, "{term}\t{}\t{}", c.deletions, c.appearances)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Format {
                what: "deletion stats",
                line: i + 1,
                msg,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [term, del, app] = fields[..] else {
                return Err(err(format!("expected 3 fields, found {}", fields.len())));
            };
            let parse = |s: &str| s.parse::<u64>().map_err(|e| err(format!("{s:?}: {e}")));
            let c = TermCounts {
                deletions: parse(del)?,
                appearances: parse(app)?,
            };
            if c.deletions > c.appearances {
                return Err(err(format!("{term}: deletions exceed appearances")));
            }
            if map.insert(term.to_string(), c).is_some() {
                return Err(err(format!("duplicate term {term:?}")));
            }
        }
        Ok(Self(map))
    }
}

/// Deletes the `n_q` highest-ranked terms. Unseen terms rank below every
/// seen term; among equal ranks the rightmost is deleted first.
fn delete_ranked(q: &Query, stats: &DeletionStats, n_q: usize, rank: impl Fn(TermCounts) -> f64) -> KeepMask {
    let ranks: Vec<Option<f64>> = q.terms().iter().map(|t| stats.get(t).map(&rank)).collect();
    if ranks.iter().all(Option::is_none) {
        return rightmost(q, n_q);
    }
    let mut order: Vec<usize> = (0..q.len()).collect();
    // Option<f64> orders None first, so descending puts unseen terms last.
    order.sort_by(|&a, &b| {
        ranks[b]
            .partial_cmp(&ranks[a])
            .expect("finite ranks")
            .then(b.cmp(&a))
    });
    let mut bits = vec![true; q.len()];
    for &i in &order[..clamp(q, n_q)] {
        bits[i] = false;
    }
    KeepMask::new(bits).expect("at least one kept")
}

/// DF;RM: rank by deletion count.
pub fn df_rm(q: &Query, stats: &DeletionStats, n_q: usize) -> KeepMask {
    delete_ranked(q, stats, n_q, |c| c.deletions as f64)
}

/// CDF;RM: rank by deletions / appearances.
pub fn cdf_rm(q: &Query, stats: &DeletionStats, n_q: usize) -> KeepMask {
    delete_ranked(q, stats, n_q, |c| {
        if c.appearances == 0 {
            0.0
        } else {
            c.deletions as f64 / c.appearances as f64
        }
    })
}

#[derive(Debug, Clone)]
pub enum Baseline {
    Leftmost { n_q: usize },
    Rightmost { n_q: usize },
    DfRm { n_q: usize, stats: DeletionStats },
    CdfRm { n_q: usize, stats: DeletionStats },
}

impl QueryReducer for Baseline {
    fn reduce(&self, q: &Query) -> Result<KeepMask> {
        Ok(match self {
            Baseline::Leftmost { n_q } => leftmost(q, *n_q),
            Baseline::Rightmost { n_q } => rightmost(q, *n_q),
            Baseline::DfRm { n_q, stats } => df_rm(q, stats, *n_q),
            Baseline::CdfRm { n_q, stats } => cdf_rm(q, stats, *n_q),
        })
    }
}
