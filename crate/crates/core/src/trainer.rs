//! Training loops for either head: mini-batch Adam with linear warmup and
//! decay, optional truncated loss, and best-validation checkpoint selection.
//!
//! Truncation works per mini-batch. Each sample's loss is computed first;
//! the `⌊ε(T)·B⌋` largest are discarded and the batch loss is the mean over
//! the rest.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::coreterm::DEFAULT_THRESHOLD;
use crate::encoder::{Encoder, Grads, Objective};
use crate::querylog::gold_mask;
use crate::reducer::{evaluate, GreedyReducer, SubScorer, ThresholdReducer};
use crate::reducer::CoreScorer;
use crate::rng;
use crate::subselect::{sample_negatives, DEFAULT_NEGATIVES};
use crate::tokenizer::{encode_pair, encode_single, TokenSeq, Vocab};
use crate::{Error, QueryPair, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropRateSchedule {
    pub eps_max: f64,
    pub gamma: f64,
    pub eps_n: f64,
}

impl DropRateSchedule {
    pub fn new(eps_max: f64, gamma: f64, eps_n: f64) -> Result<Self> {
        let s = Self { eps_max, gamma, eps_n };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_max > 0.0 && self.eps_max < 1.0) {
            return Err(Error::Config(format!("eps_max {} must lie in (0, 1)", self.eps_max)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma {} must be positive", self.gamma)));
        }
        if !(self.eps_n > 1.0 && self.eps_n.is_finite()) {
            return Err(Error::Config(format!("eps_n {} must exceed 1", self.eps_n)));
        }
        Ok(())
    }

    /// `min(ε_max^γ / (ε_N − 1) · (T − 1), ε_max)` for epoch `t ≥ 1`.
    pub fn drop_rate(&self, t: usize) -> Result<f64> {
        if t < 1 {
            return Err(Error::Config("epoch index starts at 1".into()));
        }
        let ramp = self.eps_max.powf(self.gamma) / (self.eps_n - 1.0) * (t - 1) as f64;
        Ok(ramp.min(self.eps_max))
    }
}

impl Default for DropRateSchedule {
    fn default() -> Self {
        Self {
            eps_max: 0.3,
            gamma: 2.0,
            eps_n: 4.0,
        }
    }
}

/// Number of samples dropped from a batch of `batch` at rate `eps`.
pub fn dropped_count(batch: usize, eps: f64) -> usize {
    ((eps * batch as f64).floor() as usize).min(batch)
}

/// Indices kept after discarding the `⌊eps·B⌋` largest losses, in their
/// original order. Among equal losses the higher index is dropped first.
pub fn truncate_batch(losses: &[f64], eps: f64) -> Vec<usize> {
    let drop = dropped_count(losses.len(), eps);
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(b.cmp(&a)));
    let mut keep = vec![true; losses.len()];
    for &i in &order[..drop] {
        keep[i] = false;
    }
    (0..losses.len()).filter(|&i| keep[i]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainObjective {
    Core,
    Sub,
}

impl fmt::Display for TrainObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainObjective::Core => "core",
            TrainObjective::Sub => "sub",
        })
    }
}

impl FromStr for TrainObjective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "core" => Ok(TrainObjective::Core),
            "sub" => Ok(TrainObjective::Sub),
            _ => Err(Error::Config(format!("unknown objective {s:?} (expected core or sub)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub objective: TrainObjective,
    pub denoise: bool,
    pub negatives_n: usize,
}

impl TrainConfig {
    /// Batch 32, learning rate 1e-5, warmup 0.2, five epochs. Tuned for
    /// fine-tuning a pretrained encoder.
    pub fn paper(objective: TrainObjective) -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-5,
            warmup_ratio: 0.2,
            max_epochs: 5,
            seed: 0,
            objective,
            denoise: false,
            negatives_n: DEFAULT_NEGATIVES,
        }
    }

    /// For the toy encoder trained from scratch: a larger learning rate, and
    /// batches large enough that the epoch-2 drop rate removes a sample.
    pub fn synthetic(objective: TrainObjective) -> Self {
        Self {
            batch_size: 64,
            learning_rate: 1e-3,
            ..Self::paper(objective)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max epochs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config(format!("warmup ratio {} outside [0, 1]", self.warmup_ratio)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.objective == TrainObjective::Sub && self.negatives_n == 0 {
            return Err(Error::Config("number of negatives must be at least 1".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss over the samples kept after truncation.
    pub mean_loss: f64,
    pub dropped: usize,
    /// `None` without a validation set.
    pub valid_em: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Linear warmup over the first `warmup_ratio` of steps, then linear decay
/// to zero. `step` counts from 0.
pub fn learning_rate_at(step: usize, total: usize, base: f64, warmup_ratio: f64) -> f64 {
    let warm = (warmup_ratio * total as f64).floor() as usize;
    if step < warm {
        base * (step + 1) as f64 / warm as f64
    } else {
        base * (total - step) as f64 / (total - warm) as f64
    }
}

const DROPOUT_STREAM: u64 = 0x6472_6f70;

fn encode_core(pairs: &[QueryPair], vocab: &Vocab, max_len: usize) -> Result<Vec<TokenSeq>> {
    pairs
        .iter()
        .map(|p| {
            let q = p.original();
            let seq = encode_single(q, vocab, max_len);
            if seq.term_spans.len() < q.len() {
                return Err(Error::QueryTooLong {
                    terms: q.len(),
                    limit: max_len.saturating_sub(2),
                });
            }
            Ok(seq)
        })
        .collect()
}

fn check_pair_budget(pairs: &[QueryPair], max_len: usize) -> Result<()> {
    // The original must fit whole next to at least one sub-query term.
    let limit = max_len.saturating_sub(4);
    match pairs.iter().find(|p| p.original().len() > limit) {
        Some(p) => Err(Error::QueryTooLong {
            terms: p.original().len(),
            limit,
        }),
        None => Ok(()),
    }
}

/// Validation EM of `model` as a reducer for `objective`.
pub fn validation_em(model: &Encoder, vocab: &Vocab, objective: TrainObjective, pairs: &[QueryPair]) -> Result<f64> {
    let max_len = model.config().max_len;
    let report = match objective {
        TrainObjective::Core => evaluate(
            &ThresholdReducer {
                scorer: CoreScorer::new(model, vocab, max_len),
                threshold: DEFAULT_THRESHOLD,
            },
            pairs,
        )?,
        TrainObjective::Sub => evaluate(&GreedyReducer(SubScorer::new(model, vocab, max_len)), pairs)?,
    };
    Ok(report.overall.em)
}

/// Trains `model` on `train` and returns the parameters with the best
/// validation EM (latest epoch on ties, so the last epoch when `valid` is
/// empty). Deterministic in `cfg` and the initial model.
pub fn train(
    mut model: Encoder,
    vocab: &Vocab,
    train: &[QueryPair],
    valid: &[QueryPair],
    cfg: &TrainConfig,
    sched: &DropRateSchedule,
) -> Result<(Encoder, TrainStats)> {
    cfg.validate()?;
    sched.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if model.config().vocab_size < vocab.len() {
        return Err(Error::Config(format!(
            "encoder vocabulary {} smaller than tokenizer vocabulary {}",
            model.config().vocab_size,
            vocab.len()
        )));
    }
    let max_len = model.config().max_len;
    let golds: Vec<_> = train.iter().map(gold_mask).collect();
    let core_seqs = match cfg.objective {
        TrainObjective::Core => encode_core(train, vocab, max_len)?,
        TrainObjective::Sub => {
            check_pair_budget(train, max_len)?;
            Vec::new()
        }
    };

    let steps_per_epoch = cfg.steps_per_epoch(train.len());
    let total_steps = steps_per_epoch * cfg.max_epochs;
    let mut adam = Adam::new(model.params().len());
    let mut step = 0;
    let mut epochs = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(f64, usize, Encoder)> = None;

    for epoch in 1..=cfg.max_epochs {
        let eps = if cfg.denoise { sched.drop_rate(epoch)? } else { 0.0 };
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &[epoch as u64]));

        let mut loss_sum = 0.0;
        let mut kept_total = 0;
        let mut dropped = 0;
        for batch in order.chunks(cfg.batch_size) {
            let mut losses = Vec::with_capacity(batch.len());
            let mut grads = Vec::with_capacity(batch.len());
            for &i in batch {
                let mut drop_rng = rng::stream(cfg.seed, &[DROPOUT_STREAM, epoch as u64, i as u64]);
                let (loss, g) = match cfg.objective {
                    TrainObjective::Core => {
                        let obj = Objective::Core {
                            seq: &core_seqs[i],
                            gold: &golds[i],
                        };
                        model.loss_and_grad(&obj, Some(&mut drop_rng))?
                    }
                    TrainObjective::Sub => {
                        let q = train[i].original();
                        let positive = encode_pair(q, &golds[i], vocab, max_len)?;
                        let negatives = sample_negatives(&golds[i], cfg.negatives_n, cfg.seed, epoch as u64, i as u64)?
                            .iter()
                            .map(|m| encode_pair(q, m, vocab, max_len))
                            .collect::<Result<Vec<_>>>()?;
                        let obj = Objective::Sub {
                            positive: &positive,
                            negatives: &negatives,
                        };
                        model.loss_and_grad(&obj, Some(&mut drop_rng))?
                    }
                };
                losses.push(loss);
                grads.push(g);
            }
            let kept = truncate_batch(&losses, eps);
            dropped += batch.len() - kept.len();
            let mut total: Grads = model.zero_grads();
            for &k in &kept {
                total.add_assign(&grads[k]);
                loss_sum += losses[k];
            }
            kept_total += kept.len();
            total.scale(1.0 / kept.len() as f64);
            let lr = learning_rate_at(step, total_steps, cfg.learning_rate, cfg.warmup_ratio);
            adam.step(model.params_mut(), &total.0, lr);
            step += 1;
        }

        let valid_em = if valid.is_empty() {
            None
        } else {
            Some(validation_em(&model, vocab, cfg.objective, valid)?)
        };
        // Later epochs win ties: they have seen more updates (and, when
        // denoising, more truncation) for the same validation score.
        let score = valid_em.unwrap_or(f64::INFINITY);
        let improves = match &best {
            None => true,
            Some((b, _, _)) => score >= *b,
        };
        if improves {
            best = Some((score, epoch, model.clone()));
        }
        epochs.push(EpochStats {
            epoch,
            mean_loss: loss_sum / kept_total as f64,
            dropped,
            valid_em,
        });
    }
    let (_, best_epoch, best_model) = best.expect("at least one epoch");
    Ok((best_model, TrainStats { epochs, best_epoch }))
}

/// Samples discarded in one epoch of `n` samples at rate `eps`, as
/// [`train`] computes them.
pub fn expected_dropped(n: usize, batch_size: usize, eps: f64) -> usize {
    let full = n / batch_size;
    let rest = n % batch_size;
    full * dropped_count(batch_size, eps) + if rest > 0 { dropped_count(rest, eps) } else { 0 }
}
