//! Dense row-major kernels with hand-written backward passes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub(crate) const LN_EPS: f64 = 1e-12;

/// `y = x W (+ b)` with `x: n×din`, `W: din×dout`.
pub(crate) fn linear(x: &[f64], n: usize, din: usize, w: &[f64], b: Option<&[f64]>, dout: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), n * din);
    debug_assert_eq!(w.len(), din * dout);
    let mut y = vec![0.0; n * dout];
    for (yi, xi) in y.chunks_exact_mut(dout).zip(x.chunks_exact(din)) {
        if let Some(b) = b {
            yi.copy_from_slice(b);
        }
        for (&xik, wk) in xi.iter().zip(w.chunks_exact(dout)) {
            for (yj, &wkj) in yi.iter_mut().zip(wk) {
                *yj += xik * wkj;
            }
        }
    }
    y
}

/// Accumulates `dW += xᵀ dy`, `db += Σ dy`, returns `dx = dy Wᵀ`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward(
    x: &[f64],
    dy: &[f64],
    din: usize,
    dout: usize,
    w: &[f64],
    gw: &mut [f64],
    gb: Option<&mut [f64]>,
) -> Vec<f64> {
    let n = dy.len() / dout;
    let mut dx = vec![0.0; n * din];
    for ((dxi, xi), dyi) in dx
        .chunks_exact_mut(din)
        .zip(x.chunks_exact(din))
        .zip(dy.chunks_exact(dout))
    {
        for (k, (wk, gwk)) in w.chunks_exact(dout).zip(gw.chunks_exact_mut(dout)).enumerate() {
            let xik = xi[k];
            let mut acc = 0.0;
            for ((&d, &wkj), g) in dyi.iter().zip(wk).zip(gwk.iter_mut()) {
                acc += d * wkj;
                *g += xik * d;
            }
            dxi[k] = acc;
        }
    }
    if let Some(gb) = gb {
        for dyi in dy.chunks_exact(dout) {
            for (g, &d) in gb.iter_mut().zip(dyi) {
                *g += d;
            }
        }
    }
    dx
}

pub(crate) struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm(x: &[f64], dim: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, LayerNormCache) {
    let n = x.len() / dim;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; n];
    for r in 0..n {
        let row = &x[r * dim..(r + 1) * dim];
        let mean = row.iter().sum::<f64>() / dim as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = inv;
        for c in 0..dim {
            let h = (row[c] - mean) * inv;
            xhat[r * dim + c] = h;
            y[r * dim + c] = gamma[c] * h + beta[c];
        }
    }
    (y, LayerNormCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward(
    dy: &[f64],
    dim: usize,
    gamma: &[f64],
    cache: &LayerNormCache,
    ggamma: &mut [f64],
    gbeta: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; dim];
    for (r, &inv) in cache.inv_std.iter().enumerate() {
        let dyr = &dy[r * dim..(r + 1) * dim];
        let xh = &cache.xhat[r * dim..(r + 1) * dim];
        for c in 0..dim {
            ggamma[c] += dyr[c] * xh[c];
            gbeta[c] += dyr[c];
            dxhat[c] = dyr[c] * gamma[c];
        }
        let mean_d = dxhat.iter().sum::<f64>() / dim as f64;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / dim as f64;
        for c in 0..dim {
            dx[r * dim + c] = inv * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// In-place numerically stable softmax of one row.
pub(crate) fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Inverted dropout. Returns the per-element scale (0 or 1/(1-p)), or
/// `None` when disabled.
pub(crate) fn dropout(x: &mut [f64], rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    for (v, m) in x.iter_mut().zip(&mask) {
        *v *= m;
    }
    Some(mask)
}

pub(crate) fn apply_mask(dx: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(mask) = mask {
        for (d, m) in dx.iter_mut().zip(mask) {
            *d *= m;
        }
    }
}
