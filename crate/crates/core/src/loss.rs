//! Training losses: CTC, temperature-scaled logit distillation, and their
//! normalized weighted combination.
//!
//! Everything here runs in `f64` on row-major `[frames × vocab]` slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::BLANK;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Distillation weight.
    pub alpha: f64,
    /// Task (CTC) weight.
    pub beta: f64,
    pub temperature: f64,
    pub ctc_zero_infinity: bool,
    /// Multiply the distillation term by T². Off by default.
    pub hinton_t2_scaling: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.5,
            beta: 1.0,
            temperature: 2.0,
            ctc_zero_infinity: true,
            hinton_t2_scaling: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) || !(self.alpha + self.beta > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "loss weights must be non-negative with alpha + beta > 0 (alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Row-wise log-softmax of `x / temperature`.
pub fn log_softmax(x: &[f64], vocab: usize, temperature: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks_exact(vocab).zip(out.chunks_exact_mut(vocab)) {
        let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b / temperature));
        let lse = row.iter().map(|&v| (v / temperature - mx).exp()).sum::<f64>().ln() + mx;
        for (oi, &v) in o.iter_mut().zip(row) {
            *oi = v / temperature - lse;
        }
    }
    out
}

pub fn softmax(x: &[f64], vocab: usize, temperature: f64) -> Vec<f64> {
    log_softmax(x, vocab, temperature).into_iter().map(f64::exp).collect()
}

/// A loss value with its gradient, laid out like the input.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Negative log-likelihood of `target` under CTC, with `∂loss/∂log_probs`.
///
/// `log_probs` must already be log-softmax normalized per frame. Only the
/// first `input_len` frames take part; gradient rows beyond it are zero.
/// When no alignment fits (`target.len()` plus its adjacent repeats exceeds
/// `input_len`) the loss is `+∞`, or `0` with a zero gradient when
/// `zero_infinity` is set.
pub fn ctc_loss(
    log_probs: &[f64],
    vocab: usize,
    target: &[u32],
    input_len: usize,
    zero_infinity: bool,
) -> Result<LossGrad> {
    if vocab == 0 || log_probs.len() % vocab != 0 {
        return Err(Error::Shape(format!(
            "log_probs length {} is not a multiple of vocab {vocab}",
            log_probs.len()
        )));
    }
    let frames = log_probs.len() / vocab;
    if input_len > frames {
        return Err(Error::Shape(format!("input_len {input_len} exceeds {frames} frames")));
    }
    if let Some(&s) = target.iter().find(|&&s| s as usize >= vocab || s == BLANK) {
        return Err(Error::SymbolOutOfVocab { symbol: s, vocab_size: vocab });
    }

    let mut grad = vec![0.0; log_probs.len()];
    let repeats = target.windows(2).filter(|w| w[0] == w[1]).count();
    let infeasible = LossGrad {
        loss: if zero_infinity { 0.0 } else { f64::INFINITY },
        grad: grad.clone(),
    };
    if target.len() + repeats > input_len {
        return Ok(infeasible);
    }
    if input_len == 0 {
        // empty target over zero frames: the empty alignment has probability 1
        return Ok(LossGrad { loss: 0.0, grad });
    }

    // Blank-augmented label sequence: −, l1, −, l2, …, lL, −
    let s_len = 2 * target.len() + 1;
    let label = |s: usize| if s % 2 == 0 { BLANK } else { target[s / 2] };
    let can_skip = |s: usize| s >= 2 && label(s) != BLANK && label(s) != label(s - 2);
    let lp = |t: usize, s: usize| log_probs[t * vocab + label(s) as usize];
    let t_len = input_len;
    let neg = f64::NEG_INFINITY;

    let mut alpha = vec![neg; t_len * s_len];
    alpha[0] = lp(0, 0);
    if s_len > 1 {
        alpha[1] = lp(0, 1);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if can_skip(s) {
                a = log_add(a, prev[s - 2]);
            }
            alpha[t * s_len + s] = if a == neg { neg } else { a + lp(t, s) };
        }
    }

    let mut beta = vec![neg; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = lp(t_len - 1, s_len - 1);
    if s_len > 1 {
        beta[last + s_len - 2] = lp(t_len - 1, s_len - 2);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut b = next[s];
            if s + 1 < s_len {
                b = log_add(b, next[s + 1]);
            }
            if s + 2 < s_len && can_skip(s + 2) {
                b = log_add(b, next[s + 2]);
            }
            beta[t * s_len + s] = if b == neg { neg } else { b + lp(t, s) };
        }
    }

    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[last + s_len - 2]);
    }
    if !log_p.is_finite() {
        return Ok(infeasible);
    }

    // ∂(−log P)/∂lp[t,k] = −Σ_{s: label(s)=k} α_t(s) β_t(s) / (P · y_t(k))
    for t in 0..t_len {
        for s in 0..s_len {
            let ab = alpha[t * s_len + s] + beta[t * s_len + s];
            if ab == neg {
                continue;
            }
            let k = label(s) as usize;
            grad[t * vocab + k] -= (ab - log_probs[t * vocab + k] - log_p).exp();
        }
    }
    Ok(LossGrad { loss: -log_p, grad })
}

/// CTC on raw logits: log-softmax is applied per frame and the returned
/// gradient is with respect to the logits.
pub fn ctc_loss_from_logits(
    logits: &[f64],
    vocab: usize,
    target: &[u32],
    input_len: usize,
    zero_infinity: bool,
) -> Result<LossGrad> {
    let lp = log_softmax(logits, vocab, 1.0);
    let out = ctc_loss(&lp, vocab, target, input_len, zero_infinity)?;
    let mut grad = vec![0.0; logits.len()];
    for ((g, glp), lrow) in grad
        .chunks_exact_mut(vocab)
        .zip(out.grad.chunks_exact(vocab))
        .zip(lp.chunks_exact(vocab))
    {
        let sum: f64 = glp.iter().sum();
        if sum == 0.0 && glp.iter().all(|&v| v == 0.0) {
            continue;
        }
        for ((gi, &d), &l) in g.iter_mut().zip(glp).zip(lrow) {
            *gi = d - l.exp() * sum;
        }
    }
    Ok(LossGrad { loss: out.loss, grad })
}

/// Mean over frames of the cross-entropy between the teacher's and the
/// student's temperature-softened distributions, with `∂loss/∂student_logits`.
///
/// With `hinton_t2` the loss and gradient are multiplied by `T²`.
pub fn distill_loss(
    student_logits: &[f64],
    teacher_logits: &[f64],
    vocab: usize,
    temperature: f64,
    hinton_t2: bool,
) -> Result<LossGrad> {
    if student_logits.len() != teacher_logits.len() || vocab == 0 || student_logits.len() % vocab != 0 {
        return Err(Error::Shape(format!(
            "student ({}) and teacher ({}) logits must both be [frames × {vocab}]",
            student_logits.len(),
            teacher_logits.len()
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidConfig("temperature must be positive".into()));
    }
    let frames = student_logits.len() / vocab;
    if frames == 0 {
        return Ok(LossGrad { loss: 0.0, grad: Vec::new() });
    }
    let p = softmax(teacher_logits, vocab, temperature);
    let log_q = log_softmax(student_logits, vocab, temperature);
    let scale = if hinton_t2 { temperature * temperature } else { 1.0 };
    let loss = -p.iter().zip(&log_q).map(|(a, b)| a * b).sum::<f64>() / frames as f64;
    let g = scale / (temperature * frames as f64);
    let grad = p.iter().zip(&log_q).map(|(pi, lq)| (lq.exp() - pi) * g).collect();
    Ok(LossGrad { loss: loss * scale, grad })
}

/// `(α·distill + β·task) / (α + β)`.
///
/// Computed with normalized weights `α/(α+β)` and `β/(α+β)` so that rescaling
/// `(α, β)` by any factor that keeps them exactly representable gives a
/// bit-identical result.
pub fn combined_loss(l_task: f64, l_distill: f64, cfg: &LossConfig) -> Result<f64> {
    let (w_d, w_t) = combine_weights(cfg)?;
    if w_d == 0.0 {
        return Ok(l_task);
    }
    if w_t == 0.0 {
        return Ok(l_distill);
    }
    Ok(w_d * l_distill + w_t * l_task)
}

/// Normalized `(distill, task)` weights.
pub fn combine_weights(cfg: &LossConfig) -> Result<(f64, f64)> {
    let sum = cfg.alpha + cfg.beta;
    if !(cfg.alpha >= 0.0 && cfg.beta >= 0.0 && sum > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha + beta must be positive (alpha={}, beta={})",
            cfg.alpha, cfg.beta
        )));
    }
    Ok((cfg.alpha / sum, cfg.beta / sum))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn uniform(frames: usize, vocab: usize) -> Vec<f64> {
        vec![-(vocab as f64).ln(); frames * vocab]
    }

    #[test]
    fn ctc_worked_examples() {
        let lp = uniform(2, 2);
        let one = ctc_loss(&lp, 2, &[1], 2, true).unwrap();
        assert!((one.loss - (-(0.75f64).ln())).abs() < 1e-12);
        assert!((one.loss - 0.287682).abs() < 1e-6);
        let two = ctc_loss(&lp, 2, &[1, 1], 2, true).unwrap();
        assert_eq!(two.loss, 0.0);
        assert!(two.grad.iter().all(|&g| g == 0.0));
        let inf = ctc_loss(&lp, 2, &[1, 1], 2, false).unwrap();
        assert_eq!(inf.loss, f64::INFINITY);
        let empty = ctc_loss(&lp, 2, &[], 2, true).unwrap();
        assert!((empty.loss - 2.0 * LN2).abs() < 1e-12);
    }

    #[test]
    fn ctc_rejects_blank_and_out_of_vocab_targets() {
        let lp = uniform(3, 3);
        assert!(ctc_loss(&lp, 3, &[0], 3, true).is_err());
        assert!(ctc_loss(&lp, 3, &[3], 3, true).is_err());
        assert!(ctc_loss(&lp, 3, &[1], 4, true).is_err());
    }

    #[test]
    fn ctc_occupancy_sums_to_one_per_frame() {
        let lp = log_softmax(&[0.3, -1.0, 2.0, 0.1, 0.5, -0.2, 1.0, 1.0, 0.0, -2.0, 0.4, 0.9], 3, 1.0);
        let out = ctc_loss(&lp, 3, &[1, 2], 4, true).unwrap();
        for row in out.grad.chunks_exact(3) {
            assert!((row.iter().sum::<f64>() + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ctc_respects_input_len() {
        let lp = uniform(4, 2);
        let full = ctc_loss(&lp, 2, &[1], 2, true).unwrap();
        assert!((full.loss - (-(0.75f64).ln())).abs() < 1e-12);
        assert!(full.grad[4..].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn distill_fixtures() {
        let t = vec![0.0; 4];
        let out = distill_loss(&t, &t, 4, 2.0, false).unwrap();
        assert!((out.loss - 4f64.ln()).abs() < 1e-12);
        assert!(out.grad.iter().all(|&g| g.abs() < 1e-15));
        let p = softmax(&[2.0, 0.0], 2, 2.0);
        assert!((p[0] - 0.731059).abs() < 1e-6 && (p[1] - 0.268941).abs() < 1e-6);
        assert!(distill_loss(&[0.0; 4], &[0.0; 6], 2, 2.0, false).is_err());
    }

    #[test]
    fn hinton_scaling_multiplies_by_t_squared() {
        let s = [0.3, -0.2, 1.0, 0.0];
        let t = [1.0, 0.5, -1.0, 2.0];
        let a = distill_loss(&s, &t, 2, 2.0, false).unwrap();
        let b = distill_loss(&s, &t, 2, 2.0, true).unwrap();
        assert!((b.loss - 4.0 * a.loss).abs() < 1e-12);
        for (x, y) in a.grad.iter().zip(&b.grad) {
            assert!((y - 4.0 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn combined_fixtures() {
        let cfg = LossConfig::default();
        assert_eq!(combined_loss(3.0, 3.0, &cfg).unwrap(), 3.0);
        assert_eq!(combined_loss(1.5, 0.0, &cfg).unwrap(), 1.0);
        let off = LossConfig { alpha: 0.0, ..cfg.clone() };
        assert_eq!(combined_loss(1.234567, 99.0, &off).unwrap(), 1.234567);
        let zero = LossConfig { alpha: 0.0, beta: 0.0, ..cfg };
        assert!(combined_loss(1.0, 1.0, &zero).is_err());
    }

    /// `-ln` of the summed probability of every path collapsing to `target`.
    fn enumerate_paths(lp: &[f64], vocab: usize, target: &[u32]) -> f64 {
        let frames = lp.len() / vocab;
        let mut total = 0.0;
        for code in 0..vocab.pow(frames as u32) {
            let path: Vec<u32> = (0..frames).map(|t| (code / vocab.pow(t as u32) % vocab) as u32).collect();
            let mut out = Vec::new();
            for (t, &k) in path.iter().enumerate() {
                if k != BLANK && (t == 0 || path[t - 1] != k) {
                    out.push(k);
                }
            }
            if out == target {
                total += path.iter().enumerate().map(|(t, &k)| lp[t * vocab + k as usize]).sum::<f64>().exp();
            }
        }
        -total.ln()
    }

    fn instance() -> impl Strategy<Value = (usize, Vec<f64>, Vec<u32>)> {
        (2usize..=4, 1usize..=6).prop_flat_map(|(vocab, frames)| {
            (
                Just(vocab),
                prop::collection::vec(-3.0f64..3.0, vocab * frames),
                prop::collection::vec(1..vocab as u32, 0..=3),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ctc_matches_path_enumeration((vocab, logits, target) in instance()) {
            let lp = log_softmax(&logits, vocab, 1.0);
            let frames = lp.len() / vocab;
            let dp = ctc_loss(&lp, vocab, &target, frames, false).unwrap().loss;
            let bf = enumerate_paths(&lp, vocab, &target);
            if bf.is_infinite() {
                prop_assert_eq!(dp, f64::INFINITY);
            } else {
                prop_assert!((dp - bf).abs() < 1e-6, "{} vs {}", dp, bf);
            }
        }

        #[test]
        fn distill_is_bounded_below_by_teacher_entropy(
            (vocab, s, _) in instance(),
            shift in -2.0f64..2.0,
            t in 0.5f64..4.0,
        ) {
            let teacher: Vec<f64> = s.iter().enumerate().map(|(i, v)| v * 0.7 + shift * (i % 3) as f64).collect();
            let p = softmax(&teacher, vocab, t);
            let frames = p.len() / vocab;
            let entropy = -p.iter().map(|&q| q * q.ln()).sum::<f64>() / frames as f64;
            let kd = distill_loss(&s, &teacher, vocab, t, false).unwrap();
            prop_assert!(kd.loss >= entropy - 1e-12);
            let own = distill_loss(&teacher, &teacher, vocab, t, false).unwrap();
            prop_assert!((own.loss - entropy).abs() < 1e-12);
        }

        #[test]
        fn combined_loss_ignores_weight_scale(
            task in 0.0f64..50.0,
            kd in 0.0f64..50.0,
            alpha in 0.0f64..4.0,
            beta in 0.01f64..4.0,
            exp in -8i32..8,
        ) {
            let c = 2f64.powi(exp);
            let base = LossConfig { alpha, beta, ..Default::default() };
            let scaled = LossConfig { alpha: alpha * c, beta: beta * c, ..Default::default() };
            prop_assert_eq!(combined_loss(task, kd, &base).unwrap(), combined_loss(task, kd, &scaled).unwrap());
        }
    }
}
