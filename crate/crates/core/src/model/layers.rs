//! Layers with explicit forward caches and backward passes.
//!
//! All sequences are time-major `[frames × channels]`. Every operation that
//! mixes time steps only looks backwards, so row `t` of any output is a
//! function of input rows `≤ t` alone.

use rand::Rng;

use super::params::{Grads, Init, ParamId, ParamStore};
use crate::tensor::{accumulate_col_sums, add_row_bias, gemm, Mat};

const SQRT_2_OVER_PI: f32 = 0.797_884_6;
const GELU_C: f32 = 0.044_715;

// ---------------------------------------------------------------- linear

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub(crate) fn new<R: Rng + ?Sized>(
        ps: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let w = ps.register(
            format!("{name}.weight"),
            vec![out_dim, in_dim],
            Init::Scaled { fan_in: in_dim },
            rng,
        );
        // non-zero so all-zero (padded) inputs do not reach a LayerNorm as an exact zero vector
        let b = ps.register(format!("{name}.bias"), vec![out_dim], Init::Uniform { fan_in: in_dim }, rng);
        Linear { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Mat) -> Mat {
        debug_assert_eq!(x.cols, self.in_dim);
        let mut y = Mat::zeros(x.rows, self.out_dim);
        gemm(x.rows, self.in_dim, self.out_dim, &x.data, false, ps.get(self.w), true, &mut y.data, false);
        add_row_bias(&mut y, ps.get(self.b));
        y
    }

    /// Accumulates parameter gradients and returns `dx`.
    pub fn backward(&self, ps: &ParamStore, x: &Mat, dy: &Mat, grads: &mut Grads) -> Mat {
        self.backward_params(x, dy, grads);
        let mut dx = Mat::zeros(x.rows, self.in_dim);
        gemm(dy.rows, self.out_dim, self.in_dim, &dy.data, false, ps.get(self.w), false, &mut dx.data, false);
        dx
    }

    pub fn backward_params(&self, x: &Mat, dy: &Mat, grads: &mut Grads) {
        gemm(self.out_dim, x.rows, self.in_dim, &dy.data, true, &x.data, false, grads.get_mut(self.w), true);
        accumulate_col_sums(dy, grads.get_mut(self.b));
    }
}

// ---------------------------------------------------------------- conv1d

/// Strided, optionally grouped 1-D convolution over time with left-only
/// padding. Weight layout is `[out_ch × kernel × in_per_group]`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub groups: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new<R: Rng + ?Sized>(
        ps: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad_left: usize,
        groups: usize,
        rng: &mut R,
    ) -> Self {
        assert!(in_ch % groups == 0 && out_ch % groups == 0);
        let ipg = in_ch / groups;
        let w = ps.register(
            format!("{name}.weight"),
            vec![out_ch, kernel, ipg],
            Init::Scaled { fan_in: kernel * ipg },
            rng,
        );
        let b = ps.register(format!("{name}.bias"), vec![out_ch], Init::Uniform { fan_in: kernel * ipg }, rng);
        Conv1d { w, b, in_ch, out_ch, kernel, stride, pad_left, groups }
    }

    pub fn out_len(&self, t: usize) -> usize {
        let padded = t + self.pad_left;
        if padded < self.kernel {
            0
        } else {
            (padded - self.kernel) / self.stride + 1
        }
    }

    fn im2col(&self, x: &Mat, group: usize, cols: &mut [f32]) {
        let ipg = self.in_ch / self.groups;
        let width = self.kernel * ipg;
        let f = self.out_len(x.rows);
        let c0 = group * ipg;
        for o in 0..f {
            let row = &mut cols[o * width..(o + 1) * width];
            let base = (o * self.stride) as isize - self.pad_left as isize;
            for kk in 0..self.kernel {
                let t = base + kk as isize;
                let dst = &mut row[kk * ipg..(kk + 1) * ipg];
                if t < 0 || t as usize >= x.rows {
                    dst.fill(0.0);
                } else {
                    let src = x.row(t as usize);
                    dst.copy_from_slice(&src[c0..c0 + ipg]);
                }
            }
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Mat) -> Mat {
        debug_assert_eq!(x.cols, self.in_ch);
        let f = self.out_len(x.rows);
        let ipg = self.in_ch / self.groups;
        let opg = self.out_ch / self.groups;
        let width = self.kernel * ipg;
        let w = ps.get(self.w);
        let mut y = Mat::zeros(f, self.out_ch);
        let mut cols = vec![0.0; f * width];
        if self.groups == 1 {
            self.im2col(x, 0, &mut cols);
            gemm(f, width, self.out_ch, &cols, false, w, true, &mut y.data, false);
        } else {
            let mut yg = vec![0.0; f * opg];
            for g in 0..self.groups {
                self.im2col(x, g, &mut cols);
                let wg = &w[g * opg * width..(g + 1) * opg * width];
                gemm(f, width, opg, &cols, false, wg, true, &mut yg, false);
                for o in 0..f {
                    y.row_mut(o)[g * opg..(g + 1) * opg].copy_from_slice(&yg[o * opg..(o + 1) * opg]);
                }
            }
        }
        add_row_bias(&mut y, ps.get(self.b));
        y
    }

    /// Accumulates parameter gradients; returns `dx` when `need_dx`.
    pub fn backward(
        &self,
        ps: &ParamStore,
        x: &Mat,
        dy: &Mat,
        grads: &mut Grads,
        need_dx: bool,
    ) -> Option<Mat> {
        let f = dy.rows;
        let ipg = self.in_ch / self.groups;
        let opg = self.out_ch / self.groups;
        let width = self.kernel * ipg;
        let w = ps.get(self.w);
        let mut cols = vec![0.0; f * width];
        let mut dcols = vec![0.0; f * width];
        let mut dyg = vec![0.0; f * opg];
        let mut dx = need_dx.then(|| Mat::zeros(x.rows, self.in_ch));
        for g in 0..self.groups {
            self.im2col(x, g, &mut cols);
            for o in 0..f {
                dyg[o * opg..(o + 1) * opg].copy_from_slice(&dy.row(o)[g * opg..(g + 1) * opg]);
            }
            let dw = &mut grads.get_mut(self.w)[g * opg * width..(g + 1) * opg * width];
            gemm(opg, f, width, &dyg, true, &cols, false, dw, true);
            if let Some(dx) = dx.as_mut() {
                let wg = &w[g * opg * width..(g + 1) * opg * width];
                gemm(f, opg, width, &dyg, false, wg, false, &mut dcols, false);
                let c0 = g * ipg;
                for o in 0..f {
                    let base = (o * self.stride) as isize - self.pad_left as isize;
                    for kk in 0..self.kernel {
                        let t = base + kk as isize;
                        if t < 0 || t as usize >= x.rows {
                            continue;
                        }
                        let src = &dcols[o * width + kk * ipg..o * width + (kk + 1) * ipg];
                        let dst = &mut dx.row_mut(t as usize)[c0..c0 + ipg];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
        accumulate_col_sums(dy, grads.get_mut(self.b));
        dx
    }
}

// ---------------------------------------------------------------- running instance norm

/// Instance normalization over time using running statistics: row `t` is
/// normalized with the mean and variance of rows `0..=t` of its channel.
#[derive(Clone, Debug)]
pub struct RunningInstanceNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
    pub eps: f32,
}

pub struct RunningInstanceNormCache {
    x: Mat,
    mean: Mat,
    rstd: Mat,
}

impl RunningInstanceNorm {
    pub(crate) fn new<R: Rng + ?Sized>(ps: &mut ParamStore, name: &str, channels: usize, rng: &mut R) -> Self {
        let gamma = ps.register(format!("{name}.weight"), vec![channels], Init::Ones, rng);
        let beta = ps.register(format!("{name}.bias"), vec![channels], Init::Zeros, rng);
        RunningInstanceNorm { gamma, beta, channels, eps: 1e-5 }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Mat) -> (Mat, RunningInstanceNormCache) {
        let c = self.channels;
        let g = ps.get(self.gamma);
        let b = ps.get(self.beta);
        let mut y = Mat::zeros(x.rows, c);
        let mut mean = Mat::zeros(x.rows, c);
        let mut rstd = Mat::zeros(x.rows, c);
        let mut sum = vec![0.0f64; c];
        let mut sumsq = vec![0.0f64; c];
        for t in 0..x.rows {
            let n = (t + 1) as f64;
            let xr = x.row(t);
            for ch in 0..c {
                let v = xr[ch] as f64;
                sum[ch] += v;
                sumsq[ch] += v * v;
                let m = sum[ch] / n;
                let var = (sumsq[ch] / n - m * m).max(0.0);
                let r = 1.0 / (var + self.eps as f64).sqrt();
                mean.data[t * c + ch] = m as f32;
                rstd.data[t * c + ch] = r as f32;
                y.data[t * c + ch] = g[ch] * (((v - m) * r) as f32) + b[ch];
            }
        }
        (y, RunningInstanceNormCache { x: x.clone(), mean, rstd })
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &RunningInstanceNormCache,
        dy: &Mat,
        grads: &mut Grads,
    ) -> Mat {
        let c = self.channels;
        let rows = dy.rows;
        let g = ps.get(self.gamma);
        let mut dgamma = vec![0.0f32; c];
        let mut dbeta = vec![0.0f32; c];
        let mut dx = Mat::zeros(rows, c);
        // dx_j = dxhat_j r_j - Σ_{i≥j} A_i - x_j Σ_{i≥j} B_i + Σ_{i≥j} B_i m_i
        // with A_i = dxhat_i r_i / n_i and B_i = dxhat_i xhat_i r_i² / n_i.
        for ch in 0..c {
            let (mut sa, mut sb, mut sbm) = (0.0f64, 0.0f64, 0.0f64);
            for i in (0..rows).rev() {
                let idx = i * c + ch;
                let x = cache.x.data[idx] as f64;
                let m = cache.mean.data[idx] as f64;
                let r = cache.rstd.data[idx] as f64;
                let xhat = (x - m) * r;
                let d = dy.data[idx] as f64;
                dgamma[ch] += (d * xhat) as f32;
                dbeta[ch] += d as f32;
                let dxhat = d * g[ch] as f64;
                let n = (i + 1) as f64;
                sa += dxhat * r / n;
                let bi = dxhat * xhat * r * r / n;
                sb += bi;
                sbm += bi * m;
                dx.data[idx] = (dxhat * r - sa - x * sb + sbm) as f32;
            }
        }
        for (a, v) in grads.get_mut(self.gamma).iter_mut().zip(&dgamma) {
            *a += v;
        }
        for (a, v) in grads.get_mut(self.beta).iter_mut().zip(&dbeta) {
            *a += v;
        }
        dx
    }
}

// ---------------------------------------------------------------- layer norm

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
    pub eps: f32,
}

pub struct LayerNormCache {
    xhat: Mat,
    rstd: Vec<f32>,
}

impl LayerNorm {
    pub(crate) fn new<R: Rng + ?Sized>(ps: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Self {
        let gamma = ps.register(format!("{name}.weight"), vec![dim], Init::Ones, rng);
        let beta = ps.register(format!("{name}.bias"), vec![dim], Init::Zeros, rng);
        LayerNorm { gamma, beta, dim, eps: 1e-5 }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Mat) -> (Mat, LayerNormCache) {
        let d = self.dim;
        let g = ps.get(self.gamma);
        let b = ps.get(self.beta);
        let mut y = Mat::zeros(x.rows, d);
        let mut xhat = Mat::zeros(x.rows, d);
        let mut rstd = vec![0.0; x.rows];
        for t in 0..x.rows {
            let xr = x.row(t);
            let mean = xr.iter().sum::<f32>() / d as f32;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let r = 1.0 / (var + self.eps).sqrt();
            rstd[t] = r;
            let hr = xhat.row_mut(t);
            for i in 0..d {
                hr[i] = (xr[i] - mean) * r;
            }
            let yr = y.row_mut(t);
            for i in 0..d {
                yr[i] = g[i] * xhat.data[t * d + i] + b[i];
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward(&self, ps: &ParamStore, cache: &LayerNormCache, dy: &Mat, grads: &mut Grads) -> Mat {
        let d = self.dim;
        let g = ps.get(self.gamma);
        let mut dx = Mat::zeros(dy.rows, d);
        let mut dgamma = vec![0.0f32; d];
        let mut dbeta = vec![0.0f32; d];
        let mut dxhat = vec![0.0f32; d];
        for t in 0..dy.rows {
            let dyr = dy.row(t);
            let xh = cache.xhat.row(t);
            for i in 0..d {
                dgamma[i] += dyr[i] * xh[i];
                dbeta[i] += dyr[i];
                dxhat[i] = dyr[i] * g[i];
            }
            let mean_d = dxhat.iter().sum::<f32>() / d as f32;
            let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f32>() / d as f32;
            let r = cache.rstd[t];
            let out = dx.row_mut(t);
            for i in 0..d {
                out[i] = r * (dxhat[i] - mean_d - xh[i] * mean_dx);
            }
        }
        for (a, v) in grads.get_mut(self.gamma).iter_mut().zip(&dgamma) {
            *a += v;
        }
        for (a, v) in grads.get_mut(self.beta).iter_mut().zip(&dbeta) {
            *a += v;
        }
        dx
    }
}

// ---------------------------------------------------------------- gelu

/// GELU, tanh approximation.
pub fn gelu(x: &Mat) -> Mat {
    Mat::from_vec(
        x.rows,
        x.cols,
        x.data
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (SQRT_2_OVER_PI * (v + GELU_C * v * v * v)).tanh()))
            .collect(),
    )
}

pub fn gelu_backward(x: &Mat, dy: &Mat) -> Mat {
    Mat::from_vec(
        x.rows,
        x.cols,
        x.data
            .iter()
            .zip(&dy.data)
            .map(|(&v, &d)| {
                let u = SQRT_2_OVER_PI * (v + GELU_C * v * v * v);
                let th = u.tanh();
                let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * v * v);
                d * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du)
            })
            .collect(),
    )
}

// ---------------------------------------------------------------- dropout

/// Inverted-dropout mask: each entry is `0` or `1/(1-p)`. `None` means identity.
pub type DropMask = Option<Vec<f32>>;

pub fn dropout<R: Rng + ?Sized>(x: &mut Mat, p: f32, rng: Option<&mut R>) -> DropMask {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f32> = (0..x.data.len())
        .map(|_| if rng.random::<f32>() < p { 0.0 } else { keep })
        .collect();
    for (v, m) in x.data.iter_mut().zip(&mask) {
        *v *= m;
    }
    Some(mask)
}

pub fn dropout_backward(dy: &mut Mat, mask: &DropMask) {
    if let Some(mask) = mask {
        for (v, m) in dy.data.iter_mut().zip(mask) {
            *v *= m;
        }
    }
}

// ---------------------------------------------------------------- attention

#[derive(Clone, Debug)]
pub struct Attention {
    pub qkv: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
    pub causal: bool,
}

pub struct AttentionCache {
    x: Mat,
    qkv: Mat,
    /// Per head, `[F × F]` softmax probabilities before dropout.
    probs: Vec<Vec<f32>>,
    masks: Vec<DropMask>,
    ctx: Mat,
}

impl Attention {
    pub(crate) fn new<R: Rng + ?Sized>(
        ps: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        causal: bool,
        rng: &mut R,
    ) -> Self {
        Attention {
            qkv: Linear::new(ps, &format!("{name}.qkv"), dim, 3 * dim, rng),
            out: Linear::new(ps, &format!("{name}.out"), dim, dim, rng),
            heads,
            dim,
            causal,
        }
    }

    fn head_slice(src: &Mat, offset: usize, dh: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(src.rows * dh);
        for t in 0..src.rows {
            out.extend_from_slice(&src.row(t)[offset..offset + dh]);
        }
        out
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        ps: &ParamStore,
        x: &Mat,
        attn_dropout: f32,
        mut rng: Option<&mut R>,
    ) -> (Mat, AttentionCache) {
        let f = x.rows;
        let d = self.dim;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let qkv = self.qkv.forward(ps, x);
        let mut ctx = Mat::zeros(f, d);
        let mut probs = Vec::with_capacity(self.heads);
        let mut masks = Vec::with_capacity(self.heads);
        let mut scores = vec![0.0f32; f * f];
        let mut ctx_h = vec![0.0f32; f * dh];
        for h in 0..self.heads {
            let q = Self::head_slice(&qkv, h * dh, dh);
            let k = Self::head_slice(&qkv, d + h * dh, dh);
            let v = Self::head_slice(&qkv, 2 * d + h * dh, dh);
            gemm(f, dh, f, &q, false, &k, true, &mut scores, false);
            let mut p = vec![0.0f32; f * f];
            for t in 0..f {
                let lim = if self.causal { t + 1 } else { f };
                let row = &scores[t * f..t * f + lim];
                let mx = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b * scale));
                let pr = &mut p[t * f..t * f + lim];
                let mut z = 0.0f32;
                for (o, &s) in pr.iter_mut().zip(row) {
                    *o = (s * scale - mx).exp();
                    z += *o;
                }
                pr.iter_mut().for_each(|o| *o /= z);
            }
            let mut pd = Mat::from_vec(f, f, p.clone());
            let mask = dropout(&mut pd, attn_dropout, rng.as_deref_mut());
            gemm(f, f, dh, &pd.data, false, &v, false, &mut ctx_h, false);
            for t in 0..f {
                ctx.row_mut(t)[h * dh..(h + 1) * dh].copy_from_slice(&ctx_h[t * dh..(t + 1) * dh]);
            }
            probs.push(p);
            masks.push(mask);
        }
        let y = self.out.forward(ps, &ctx);
        (
            y,
            AttentionCache { x: x.clone(), qkv, probs, masks, ctx },
        )
    }

    pub fn backward(&self, ps: &ParamStore, cache: &AttentionCache, dy: &Mat, grads: &mut Grads) -> Mat {
        let f = dy.rows;
        let d = self.dim;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let dctx = self.out.backward(ps, &cache.ctx, dy, grads);
        let mut dqkv = Mat::zeros(f, 3 * d);
        let mut dp = vec![0.0f32; f * f];
        let mut buf = vec![0.0f32; f * dh];
        for h in 0..self.heads {
            let q = Self::head_slice(&cache.qkv, h * dh, dh);
            let k = Self::head_slice(&cache.qkv, d + h * dh, dh);
            let v = Self::head_slice(&cache.qkv, 2 * d + h * dh, dh);
            let dctx_h = Self::head_slice(&dctx, h * dh, dh);
            let p = &cache.probs[h];
            let pd: Vec<f32> = match &cache.masks[h] {
                Some(m) => p.iter().zip(m).map(|(a, b)| a * b).collect(),
                None => p.clone(),
            };
            // dV = P'^T dctx
            gemm(f, f, dh, &pd, true, &dctx_h, false, &mut buf, false);
            for t in 0..f {
                dqkv.row_mut(t)[2 * d + h * dh..2 * d + (h + 1) * dh].copy_from_slice(&buf[t * dh..(t + 1) * dh]);
            }
            // dP' = dctx V^T, then through dropout and softmax
            gemm(f, dh, f, &dctx_h, false, &v, true, &mut dp, false);
            if let Some(m) = &cache.masks[h] {
                for (a, b) in dp.iter_mut().zip(m) {
                    *a *= b;
                }
            }
            for t in 0..f {
                let lim = if self.causal { t + 1 } else { f };
                let pr = &p[t * f..t * f + lim];
                let dr = &mut dp[t * f..(t + 1) * f];
                let dot: f32 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                for u in 0..lim {
                    dr[u] = pr[u] * (dr[u] - dot) * scale;
                }
                dr[lim..].fill(0.0);
            }
            // dQ = dS K, dK = dS^T Q
            gemm(f, f, dh, &dp, false, &k, false, &mut buf, false);
            for t in 0..f {
                dqkv.row_mut(t)[h * dh..(h + 1) * dh].copy_from_slice(&buf[t * dh..(t + 1) * dh]);
            }
            gemm(f, f, dh, &dp, true, &q, false, &mut buf, false);
            for t in 0..f {
                dqkv.row_mut(t)[d + h * dh..d + (h + 1) * dh].copy_from_slice(&buf[t * dh..(t + 1) * dh]);
            }
        }
        self.qkv.backward(ps, &cache.x, &dqkv, grads)
    }
}
