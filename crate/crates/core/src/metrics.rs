//! Per-query evaluation with retention as the positive class, macro
//! averaging, and the single- vs multi-term deletion breakdown.

use serde::{Deserialize, Serialize};

use crate::{Error, KeepMask, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryEval {
    pub em: f64,
    pub acc: f64,
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub gold_deletions: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn per_query_metrics(pred: &KeepMask, gold: &KeepMask) -> Result<QueryEval> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch {
            expected: gold.len(),
            actual: pred.len(),
        });
    }
    let n = gold.len();
    let pairs = || pred.bits().iter().zip(gold.bits());
    let agree = pairs().filter(|(a, b)| a == b).count();
    let tp = pairs().filter(|(a, b)| **a && **b).count();
    let p = ratio(tp, pred.kept());
    let r = ratio(tp, gold.kept());
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    Ok(QueryEval {
        em: if pred == gold { 1.0 } else { 0.0 },
        acc: ratio(agree, n),
        p,
        r,
        f1,
        gold_deletions: n - gold.kept(),
    })
}

/// Macro means over a bucket of queries. All zeros when `n == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub em: f64,
    pub acc: f64,
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub n: usize,
}

impl Summary {
    fn of<'a>(evals: impl Iterator<Item = &'a QueryEval>) -> Self {
        let mut s = Summary {
            em: 0.0,
            acc: 0.0,
            p: 0.0,
            r: 0.0,
            f1: 0.0,
            n: 0,
        };
        for e in evals {
            s.em += e.em;
            s.acc += e.acc;
            s.p += e.p;
            s.r += e.r;
            s.f1 += e.f1;
            s.n += 1;
        }
        if s.n > 0 {
            let n = s.n as f64;
            s.em /= n;
            s.acc /= n;
            s.p /= n;
            s.r /= n;
            s.f1 /= n;
        }
        s
    }
}

/// `single` holds queries whose gold reduction deletes exactly one term,
/// `multi` those deleting two or more. Queries whose gold keeps every term
/// count only towards `overall`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: Summary,
    pub single: Summary,
    pub multi: Summary,
}

pub fn aggregate_report(evals: &[QueryEval]) -> Result<MetricsReport> {
    if evals.is_empty() {
        return Err(Error::Empty("evaluation list"));
    }
    Ok(MetricsReport {
        overall: Summary::of(evals.iter()),
        single: Summary::of(evals.iter().filter(|e| e.gold_deletions == 1)),
        multi: Summary::of(evals.iter().filter(|e| e.gold_deletions >= 2)),
    })
}
