//! Central finite-difference verification of the analytic gradients.

use std::collections::BTreeSet;

use rand::seq::index;
use rand_distr::{Distribution, Normal};

use super::{Encoder, Grads, Objective};
use crate::rng;
use crate::{Error, Result};

pub const GRAD_CHECK_MIN_PARAMS: usize = 200;
const DENOM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Flat index of the worst parameter.
    pub worst: usize,
}

/// Compares backprop against `(f(θ+ε) − f(θ−ε)) / 2ε` on a random sample of
/// `n_params` parameters (at least [`GRAD_CHECK_MIN_PARAMS`]), with dropout
/// disabled.
pub fn grad_check(model: &Encoder, obj: &Objective, eps: f64, n_params: usize, seed: u64) -> Result<GradCheckReport> {
    let (_, analytic) = model.loss_and_grad(obj, None)?;
    compare_gradients(model, obj, &analytic, eps, n_params, seed)
}

/// Like [`grad_check`] but against a caller-supplied gradient.
pub fn compare_gradients(
    model: &Encoder,
    obj: &Objective,
    analytic: &Grads,
    eps: f64,
    n_params: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("finite-difference step {eps} must be positive")));
    }
    let pool = candidate_params(model, obj);
    let n = n_params.max(GRAD_CHECK_MIN_PARAMS).min(pool.len());
    let mut rng = rng::stream(seed, &[0x6772_6164]);
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: n,
        worst: 0,
    };
    for pick in index::sample(&mut rng, pool.len(), n) {
        let i = pool[pick];
        let orig = probe.params[i];
        probe.params[i] = orig + eps;
        let up = probe.loss(obj, None)?;
        probe.params[i] = orig - eps;
        let down = probe.loss(obj, None)?;
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.0[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOM_FLOOR);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = i;
        }
    }
    Ok(report)
}

/// Adds `N(0, std²)` noise to every parameter. At the initialization scale
/// most gradients are around 1e-7, where finite-difference round-off alone
/// exceeds a 1e-4 relative tolerance; checking at a perturbed point keeps
/// gradients well above that floor.
pub fn perturb_params(model: &mut Encoder, std: f64, seed: u64) -> Result<()> {
    let normal = Normal::new(0.0, std).map_err(|e| Error::Config(format!("perturbation std {std}: {e}")))?;
    let mut rng = rng::stream(seed, &[0x7065_7274]);
    for p in model.params_mut() {
        *p += normal.sample(&mut rng);
    }
    Ok(())
}

/// Every parameter the objective can reach: embedding rows for the tokens,
/// positions and segments it uses, plus all dense parameters.
fn candidate_params(model: &Encoder, obj: &Objective) -> Vec<usize> {
    let seqs: Vec<_> = match *obj {
        Objective::Core { seq, .. } => vec![seq],
        Objective::Sub { positive, negatives } => std::iter::once(positive).chain(negatives).collect(),
    };
    let k = model.config.hidden;
    let tokens: BTreeSet<usize> = seqs.iter().flat_map(|s| s.ids.iter().map(|&i| i as usize)).collect();
    let segs: BTreeSet<usize> = seqs.iter().flat_map(|s| s.segments.iter().map(|&g| g as usize)).collect();
    let max_pos = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    let ix = model.idx;

    let mut rows: Vec<usize> = tokens.iter().map(|t| ix.tok + t * k).collect();
    rows.extend((0..max_pos).map(|p| ix.pos + p * k));
    rows.extend(segs.iter().map(|g| ix.seg + g * k));
    let mut pool: Vec<usize> = rows.iter().flat_map(|&r| r..r + k).collect();
    pool.extend(ix.ln_g..model.layout.total);
    pool
}
