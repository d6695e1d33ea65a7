//! A small post-LN transformer encoder trained from scratch, with both
//! scoring heads and exact backpropagation.
//!
//! ```text
//! tok + pos + seg ─ LN ─ dropout ─┬─ [ MHSA ─ dropout ─(+)─ LN ─ FFN(GELU) ─ dropout ─(+)─ LN ] × L ─ h
//!                                 └──────────────────────┘         └──────────────────────┘
//! core head: ŷ_i = σ(w_c · h_i + b_c)        sub head: s = w_s · h_[CLS] + b_s
//! ```
//!
//! All parameters live in one flat `f64` buffer described by a [`Layout`];
//! gradients share the layout, which keeps the optimizer, the gradient check
//! and the checkpoint format trivial.

mod checkpoint;
mod gradcheck;
pub(crate) mod ops;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tokenizer::TokenSeq;
use crate::{Error, KeepMask, Result};
use ops::LayerNormCache;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use gradcheck::{compare_gradients, grad_check, perturb_params, GradCheckReport, GRAD_CHECK_MIN_PARAMS};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl EncoderConfig {
    /// Toy defaults: k=64, two layers, four heads, d_ff=128, dropout 0.2.
    pub fn toy(vocab_size: usize, max_len: usize) -> Self {
        Self {
            hidden: 64,
            layers: 2,
            heads: 4,
            ff: 128,
            vocab_size,
            max_len,
            dropout: 0.2,
            seed: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ff", self.ff),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("encoder {name} must be at least 1")));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
}

impl Layout {
    fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let offset = self.total;
        let info = TensorInfo {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
        };
        self.total += info.numel();
        self.tensors.push(info);
        offset
    }
}

/// Offsets of one layer's tensors in the flat buffer.
#[derive(Debug, Clone, Copy)]
struct LayerIdx {
    wq: usize,
    bq: usize,
    wk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln1_g: usize,
    ln1_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ln2_g: usize,
    ln2_b: usize,
}

#[derive(Debug, Clone, Copy)]
struct HeadIdx {
    tok: usize,
    pos: usize,
    seg: usize,
    ln_g: usize,
    ln_b: usize,
    core_w: usize,
    core_b: usize,
    sub_w: usize,
    sub_b: usize,
}

fn build_layout(cfg: &EncoderConfig) -> (Layout, HeadIdx, Vec<LayerIdx>) {
    let (k, f) = (cfg.hidden, cfg.ff);
    let mut l = Layout {
        tensors: Vec::new(),
        total: 0,
    };
    let tok = l.push("embeddings.token", &[cfg.vocab_size, k]);
    let pos = l.push("embeddings.position", &[cfg.max_len, k]);
    let seg = l.push("embeddings.segment", &[2, k]);
    let ln_g = l.push("embeddings.norm.gamma", &[k]);
    let ln_b = l.push("embeddings.norm.beta", &[k]);
    let layers = (0..cfg.layers)
        .map(|i| {
            let p = |s: &str| format!("layers.{i}.{s}");
            // No key bias: it shifts every logit of a row equally and has
            // identically zero gradient under softmax.
            LayerIdx {
                wq: l.push(p("attn.query.weight"), &[k, k]),
                bq: l.push(p("attn.query.bias"), &[k]),
                wk: l.push(p("attn.key.weight"), &[k, k]),
                wv: l.push(p("attn.value.weight"), &[k, k]),
                bv: l.push(p("attn.value.bias"), &[k]),
                wo: l.push(p("attn.output.weight"), &[k, k]),
                bo: l.push(p("attn.output.bias"), &[k]),
                ln1_g: l.push(p("attn.norm.gamma"), &[k]),
                ln1_b: l.push(p("attn.norm.beta"), &[k]),
                w1: l.push(p("ffn.in.weight"), &[k, f]),
                b1: l.push(p("ffn.in.bias"), &[f]),
                w2: l.push(p("ffn.out.weight"), &[f, k]),
                b2: l.push(p("ffn.out.bias"), &[k]),
                ln2_g: l.push(p("ffn.norm.gamma"), &[k]),
                ln2_b: l.push(p("ffn.norm.beta"), &[k]),
            }
        })
        .collect();
    let core_w = l.push("head.core.weight", &[k]);
    let core_b = l.push("head.core.bias", &[1]);
    let sub_w = l.push("head.sub.weight", &[k]);
    let sub_b = l.push("head.sub.bias", &[1]);
    let idx = HeadIdx {
        tok,
        pos,
        seg,
        ln_g,
        ln_b,
        core_w,
        core_b,
        sub_w,
        sub_b,
    };
    (l, idx, layers)
}

/// Per-position hidden vectors, `len × hidden`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub len: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl HiddenStates {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Gradient buffer laid out like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<f64>);

impl Grads {
    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|g| *g *= s);
    }
}

/// A differentiable training target built on the encoder.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Summed per-term binary cross-entropy of the core head.
    Core { seq: &'a TokenSeq, gold: &'a KeepMask },
    /// Softmax negative log-likelihood of the positive pair among negatives,
    /// scored by the sub head.
    Sub {
        positive: &'a TokenSeq,
        negatives: &'a [TokenSeq],
    },
}

struct LayerCache {
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    drop1: Option<Vec<f64>>,
    ln1: LayerNormCache,
    y1: Vec<f64>,
    f_pre: Vec<f64>,
    f_act: Vec<f64>,
    drop2: Option<Vec<f64>>,
    ln2: LayerNormCache,
}

struct ForwardCache {
    ids: Vec<u32>,
    segments: Vec<u8>,
    ln_emb: LayerNormCache,
    drop_emb: Option<Vec<f64>>,
    layers: Vec<LayerCache>,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    layout: Layout,
    params: Vec<f64>,
    idx: HeadIdx,
    layer_idx: Vec<LayerIdx>,
}

impl Encoder {
    /// Weights ~ N(0, 0.02²), biases and layer-norm offsets 0, layer-norm
    /// scales 1. Deterministic in `config.seed`.
    pub fn init(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let (layout, idx, layer_idx) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut params = vec![0.0; layout.total];
        for t in &layout.tensors {
            let slot = &mut params[t.offset..t.offset + t.numel()];
            if t.name.ends_with(".gamma") {
                slot.fill(1.0);
            } else if t.name.ends_with(".bias") || t.name.ends_with(".beta") {
                slot.fill(0.0);
            } else {
                slot.iter_mut().for_each(|p| *p = normal.sample(&mut rng));
            }
        }
        Ok(Self {
            config,
            layout,
            params,
            idx,
            layer_idx,
        })
    }

    pub(crate) fn from_parts(config: EncoderConfig, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::init(config)?;
        if params.len() != model.params.len() {
            return Err(Error::LengthMismatch {
                expected: model.params.len(),
                actual: params.len(),
            });
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn zero_grads(&self) -> Grads {
        Grads(vec![0.0; self.layout.total])
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        let t = self.layout.tensors.iter().find(|t| t.name == name)?;
        Some(&self.params[t.offset..t.offset + t.numel()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let t = self.layout.tensors.iter().find(|t| t.name == name)?;
        let range = t.offset..t.offset + t.numel();
        Some(&mut self.params[range])
    }

    fn p(&self, offset: usize, len: usize) -> &[f64] {
        &self.params[offset..offset + len]
    }

    fn validate_input(&self, seq: &TokenSeq) -> Result<()> {
        if seq.is_empty() || seq.len() > self.config.max_len {
            return Err(Error::SequenceTooLong {
                len: seq.len(),
                max: self.config.max_len,
            });
        }
        if seq.segments.len() != seq.ids.len() {
            return Err(Error::LengthMismatch {
                expected: seq.ids.len(),
                actual: seq.segments.len(),
            });
        }
        if let Some(&id) = seq.ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab: self.config.vocab_size,
            });
        }
        if seq.segments.iter().any(|&s| s > 1) {
            return Err(Error::Config("segment ids must be 0 or 1".into()));
        }
        Ok(())
    }

    /// Hidden states for `seq`. Dropout is applied iff an RNG is supplied.
    pub fn forward(&self, seq: &TokenSeq, dropout: Option<&mut ChaCha8Rng>) -> Result<HiddenStates> {
        self.validate_input(seq)?;
        Ok(self.forward_cached(seq, dropout).0)
    }

    fn forward_cached(&self, seq: &TokenSeq, mut rng: Option<&mut ChaCha8Rng>) -> (HiddenStates, ForwardCache) {
        let k = self.config.hidden;
        let n = seq.len();
        let rate = self.config.dropout;
        let ix = self.idx;

        let mut e = vec![0.0; n * k];
        for (i, row) in e.chunks_exact_mut(k).enumerate() {
            let tok = self.p(ix.tok + seq.ids[i] as usize * k, k);
            let pos = self.p(ix.pos + i * k, k);
            let seg = self.p(ix.seg + seq.segments[i] as usize * k, k);
            for c in 0..k {
                row[c] = tok[c] + pos[c] + seg[c];
            }
        }
        let (mut x, ln_emb) = ops::layer_norm(&e, k, self.p(ix.ln_g, k), self.p(ix.ln_b, k));
        let drop_emb = ops::dropout(&mut x, rate, rng.as_deref_mut());

        let mut layers = Vec::with_capacity(self.config.layers);
        for li in &self.layer_idx {
            let (out, cache) = self.layer_forward(li, x, n, rng.as_deref_mut());
            layers.push(cache);
            x = out;
        }
        let hidden = HiddenStates {
            len: n,
            dim: k,
            data: x,
        };
        let cache = ForwardCache {
            ids: seq.ids.clone(),
            segments: seq.segments.clone(),
            ln_emb,
            drop_emb,
            layers,
        };
        (hidden, cache)
    }

    fn layer_forward(&self, li: &LayerIdx, x: Vec<f64>, n: usize, mut rng: Option<&mut ChaCha8Rng>) -> (Vec<f64>, LayerCache) {
        let k = self.config.hidden;
        let f = self.config.ff;
        let heads = self.config.heads;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let rate = self.config.dropout;

        let q = ops::linear(&x, n, k, self.p(li.wq, k * k), Some(self.p(li.bq, k)), k);
        let kk = ops::linear(&x, n, k, self.p(li.wk, k * k), None, k);
        let v = ops::linear(&x, n, k, self.p(li.wv, k * k), Some(self.p(li.bv, k)), k);

        let mut probs = vec![0.0; heads * n * n];
        let mut ctx = vec![0.0; n * k];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let row = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
                let qi = &q[i * k + off..i * k + off + dh];
                for (j, s) in row.iter_mut().enumerate() {
                    let kj = &kk[j * k + off..j * k + off + dh];
                    *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                ops::softmax_row(row);
                let ci = &mut ctx[i * k + off..i * k + off + dh];
                for (j, &pij) in row.iter().enumerate() {
                    let vj = &v[j * k + off..j * k + off + dh];
                    for (c, &vv) in ci.iter_mut().zip(vj) {
                        *c += pij * vv;
                    }
                }
            }
        }
        let mut attn = ops::linear(&ctx, n, k, self.p(li.wo, k * k), Some(self.p(li.bo, k)), k);
        let drop1 = ops::dropout(&mut attn, rate, rng.as_deref_mut());
        let r1: Vec<f64> = x.iter().zip(&attn).map(|(a, b)| a + b).collect();
        let (y1, ln1) = ops::layer_norm(&r1, k, self.p(li.ln1_g, k), self.p(li.ln1_b, k));

        let f_pre = ops::linear(&y1, n, k, self.p(li.w1, k * f), Some(self.p(li.b1, f)), f);
        let f_act: Vec<f64> = f_pre.iter().map(|&z| ops::gelu(z)).collect();
        let mut ffn = ops::linear(&f_act, n, f, self.p(li.w2, f * k), Some(self.p(li.b2, k)), k);
        let drop2 = ops::dropout(&mut ffn, rate, rng);
        let r2: Vec<f64> = y1.iter().zip(&ffn).map(|(a, b)| a + b).collect();
        let (out, ln2) = ops::layer_norm(&r2, k, self.p(li.ln2_g, k), self.p(li.ln2_b, k));

        let cache = LayerCache {
            x,
            q,
            k: kk,
            v,
            probs,
            ctx,
            drop1,
            ln1,
            y1,
            f_pre,
            f_act,
            drop2,
            ln2,
        };
        (out, cache)
    }

    /// Backpropagates `d_hidden` (gradient w.r.t. the final hidden states)
    /// into `grads`.
    fn backward(&self, cache: &ForwardCache, d_hidden: Vec<f64>, grads: &mut Grads) {
        let k = self.config.hidden;
        let ix = self.idx;
        let mut dx = d_hidden;
        for (li, lc) in self.layer_idx.iter().zip(&cache.layers).rev() {
            dx = self.layer_backward(li, lc, dx, grads);
        }
        ops::apply_mask(&mut dx, &cache.drop_emb);
        let (gamma, g) = (self.p(ix.ln_g, k), &mut grads.0);
        let (gg, gb) = g[ix.ln_g..ix.ln_b + k].split_at_mut(k);
        let de = ops::layer_norm_backward(&dx, k, gamma, &cache.ln_emb, gg, gb);
        for (i, row) in de.chunks_exact(k).enumerate() {
            let t = ix.tok + cache.ids[i] as usize * k;
            let p = ix.pos + i * k;
            let s = ix.seg + cache.segments[i] as usize * k;
            for c in 0..k {
                g[t + c] += row[c];
                g[p + c] += row[c];
                g[s + c] += row[c];
            }
        }
    }

    fn layer_backward(&self, li: &LayerIdx, lc: &LayerCache, d_out: Vec<f64>, grads: &mut Grads) -> Vec<f64> {
        let k = self.config.hidden;
        let f = self.config.ff;
        let n = d_out.len() / k;
        let heads = self.config.heads;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let g = &mut grads.0;

        let (gg, gb) = g[li.ln2_g..li.ln2_b + k].split_at_mut(k);
        let d_r2 = ops::layer_norm_backward(&d_out, k, self.p(li.ln2_g, k), &lc.ln2, gg, gb);
        let mut d_ffn = d_r2.clone();
        ops::apply_mask(&mut d_ffn, &lc.drop2);
        let (gw2, rest) = g[li.w2..].split_at_mut(f * k);
        let gb2 = &mut rest[li.b2 - li.w2 - f * k..][..k];
        let mut d_act = ops::linear_backward(&lc.f_act, &d_ffn, f, k, self.p(li.w2, f * k), gw2, Some(gb2));
        for (d, &z) in d_act.iter_mut().zip(&lc.f_pre) {
            *d *= ops::gelu_grad(z);
        }
        let (gw1, rest) = g[li.w1..].split_at_mut(k * f);
        let gb1 = &mut rest[li.b1 - li.w1 - k * f..][..f];
        let d_y1_ffn = ops::linear_backward(&lc.y1, &d_act, k, f, self.p(li.w1, k * f), gw1, Some(gb1));
        let d_y1: Vec<f64> = d_r2.iter().zip(&d_y1_ffn).map(|(a, b)| a + b).collect();

        let (gg, gb) = g[li.ln1_g..li.ln1_b + k].split_at_mut(k);
        let d_r1 = ops::layer_norm_backward(&d_y1, k, self.p(li.ln1_g, k), &lc.ln1, gg, gb);
        let mut d_attn = d_r1.clone();
        ops::apply_mask(&mut d_attn, &lc.drop1);
        let (gwo, rest) = g[li.wo..].split_at_mut(k * k);
        let gbo = &mut rest[li.bo - li.wo - k * k..][..k];
        let d_ctx = ops::linear_backward(&lc.ctx, &d_attn, k, k, self.p(li.wo, k * k), gwo, Some(gbo));

        let mut dq = vec![0.0; n * k];
        let mut dk = vec![0.0; n * k];
        let mut dv = vec![0.0; n * k];
        let mut dp = vec![0.0; n];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let p_row = &lc.probs[(h * n + i) * n..(h * n + i + 1) * n];
                let dci = &d_ctx[i * k + off..i * k + off + dh];
                for j in 0..n {
                    let vj = &lc.v[j * k + off..j * k + off + dh];
                    dp[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                    let dvj = &mut dv[j * k + off..j * k + off + dh];
                    for (d, &c) in dvj.iter_mut().zip(dci) {
                        *d += p_row[j] * c;
                    }
                }
                let dot: f64 = p_row.iter().zip(&dp).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    let ds = p_row[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..dh {
                        dq[i * k + off + c] += ds * lc.k[j * k + off + c];
                        dk[j * k + off + c] += ds * lc.q[i * k + off + c];
                    }
                }
            }
        }

        let (gwq, rest) = g[li.wq..].split_at_mut(k * k);
        let gbq = &mut rest[li.bq - li.wq - k * k..][..k];
        let dx_q = ops::linear_backward(&lc.x, &dq, k, k, self.p(li.wq, k * k), gwq, Some(gbq));
        let dx_k = ops::linear_backward(&lc.x, &dk, k, k, self.p(li.wk, k * k), &mut g[li.wk..li.wk + k * k], None);
        let (gwv, rest) = g[li.wv..].split_at_mut(k * k);
        let gbv = &mut rest[li.bv - li.wv - k * k..][..k];
        let dx_v = ops::linear_backward(&lc.x, &dv, k, k, self.p(li.wv, k * k), gwv, Some(gbv));

        let mut dx = d_r1;
        for i in 0..dx.len() {
            dx[i] += dx_q[i] + dx_k[i] + dx_v[i];
        }
        dx
    }

    /// Core-head logits `w_c · h_i + b_c` at each term position.
    pub fn core_logits(&self, hidden: &HiddenStates, positions: &[usize]) -> Vec<f64> {
        let k = self.config.hidden;
        let w = self.p(self.idx.core_w, k);
        let b = self.params[self.idx.core_b];
        positions
            .iter()
            .map(|&p| dot(w, hidden.row(p)) + b)
            .collect()
    }

    /// Sub-head score `w_s · h_[CLS] + b_s`.
    pub fn sub_score(&self, hidden: &HiddenStates) -> f64 {
        let k = self.config.hidden;
        dot(self.p(self.idx.sub_w, k), hidden.row(0)) + self.params[self.idx.sub_b]
    }

    fn objective_inputs<'a>(&self, obj: &Objective<'a>) -> Result<Vec<&'a TokenSeq>> {
        let seqs: Vec<&TokenSeq> = match *obj {
            Objective::Core { seq, gold } => {
                if seq.term_spans.len() != gold.len() {
                    return Err(Error::LengthMismatch {
                        expected: gold.len(),
                        actual: seq.term_spans.len(),
                    });
                }
                vec![seq]
            }
            Objective::Sub { positive, negatives } => std::iter::once(positive).chain(negatives).collect(),
        };
        for s in &seqs {
            self.validate_input(s)?;
        }
        Ok(seqs)
    }

    /// Loss value only.
    pub fn loss(&self, obj: &Objective, mut rng: Option<&mut ChaCha8Rng>) -> Result<f64> {
        let seqs = self.objective_inputs(obj)?;
        Ok(match *obj {
            Objective::Core { seq, gold } => {
                let h = self.forward_cached(seq, rng).0;
                crate::coreterm::core_loss_from_logits(&self.core_logits(&h, &seq.term_spans), gold).0
            }
            Objective::Sub { .. } => {
                let scores: Vec<f64> = seqs
                    .iter()
                    .map(|s| self.sub_score(&self.forward_cached(s, rng.as_deref_mut()).0))
                    .collect();
                crate::subselect::selection_loss_and_grad(&scores).0
            }
        })
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, obj: &Objective, mut rng: Option<&mut ChaCha8Rng>) -> Result<(f64, Grads)> {
        let seqs = self.objective_inputs(obj)?;
        let k = self.config.hidden;
        let mut grads = self.zero_grads();
        let loss = match *obj {
            Objective::Core { seq, gold } => {
                let (h, cache) = self.forward_cached(seq, rng);
                let logits = self.core_logits(&h, &seq.term_spans);
                let (loss, d_logits) = crate::coreterm::core_loss_from_logits(&logits, gold);
                let mut dh = vec![0.0; h.data.len()];
                let w = self.p(self.idx.core_w, k);
                for (&p, &dz) in seq.term_spans.iter().zip(&d_logits) {
                    let row = h.row(p);
                    for c in 0..k {
                        grads.0[self.idx.core_w + c] += dz * row[c];
                        dh[p * k + c] += dz * w[c];
                    }
                    grads.0[self.idx.core_b] += dz;
                }
                self.backward(&cache, dh, &mut grads);
                loss
            }
            Objective::Sub { .. } => {
                let runs: Vec<_> = seqs
                    .iter()
                    .map(|s| self.forward_cached(s, rng.as_deref_mut()))
                    .collect();
                let scores: Vec<f64> = runs.iter().map(|(h, _)| self.sub_score(h)).collect();
                let (loss, d_scores) = crate::subselect::selection_loss_and_grad(&scores);
                let w = self.p(self.idx.sub_w, k).to_vec();
                for ((h, cache), &ds) in runs.iter().zip(&d_scores) {
                    let mut dh = vec![0.0; h.data.len()];
                    let cls = h.row(0);
                    for c in 0..k {
                        grads.0[self.idx.sub_w + c] += ds * cls[c];
                        dh[c] = ds * w[c];
                    }
                    grads.0[self.idx.sub_b] += ds;
                    self.backward(cache, dh, &mut grads);
                }
                loss
            }
        };
        Ok((loss, grads))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
