//! Signal → frame featurizers: the strided raw-signal CNN and the
//! log-spectrogram + MLP alternative.

use rand::Rng;
use rustfft::num_complex::Complex32;
use rustfft::FftPlanner;

use super::config::{FeaturizerConfig, FeaturizerKind};
use super::layers::{gelu, gelu_backward, Conv1d, Linear, RunningInstanceNorm, RunningInstanceNormCache};
use super::params::{Grads, ParamStore};
use crate::tensor::Mat;

#[derive(Clone, Debug)]
pub enum Featurizer {
    RawCnn {
        convs: Vec<Conv1d>,
        norm: Option<RunningInstanceNorm>,
    },
    SpectrogramMlp {
        fft_size: usize,
        hop: usize,
        layers: Vec<Linear>,
    },
}

pub enum FeaturizerTape {
    RawCnn {
        inputs: Vec<Mat>,
        pre_act: Vec<Mat>,
        norm: Option<RunningInstanceNormCache>,
    },
    SpectrogramMlp {
        inputs: Vec<Mat>,
        pre_act: Vec<Mat>,
    },
}

impl Featurizer {
    pub(crate) fn new<R: Rng + ?Sized>(cfg: &FeaturizerConfig, ps: &mut ParamStore, rng: &mut R) -> Self {
        match cfg.kind {
            FeaturizerKind::RawCnn => {
                let mut convs = Vec::new();
                let mut norm = None;
                let mut in_ch = cfg.in_channels;
                for (i, ((&ch, &k), &s)) in cfg
                    .cnn_channels
                    .iter()
                    .zip(&cfg.cnn_kernels)
                    .zip(&cfg.cnn_strides)
                    .enumerate()
                {
                    // Left-only padding of k - s keeps frames causal and makes
                    // the output length exactly floor(T / s).
                    convs.push(Conv1d::new(ps, &format!("featurizer.conv{i}"), in_ch, ch, k, s, k - s, 1, rng));
                    if i == 0 && cfg.instance_norm_after_first {
                        norm = Some(RunningInstanceNorm::new(ps, "featurizer.instance_norm", ch, rng));
                    }
                    in_ch = ch;
                }
                Featurizer::RawCnn { convs, norm }
            }
            FeaturizerKind::SpectrogramMlp => {
                let bins = cfg.fft_size / 2 + 1;
                let mut in_dim = cfg.in_channels * bins;
                let layers = cfg
                    .mlp_dims
                    .iter()
                    .enumerate()
                    .map(|(i, &d)| {
                        let l = Linear::new(ps, &format!("featurizer.mlp{i}"), in_dim, d, rng);
                        in_dim = d;
                        l
                    })
                    .collect();
                Featurizer::SpectrogramMlp {
                    fft_size: cfg.fft_size,
                    hop: cfg.downsample(),
                    layers,
                }
            }
        }
    }

    pub fn num_frames(&self, samples: usize) -> usize {
        match self {
            Featurizer::RawCnn { convs, .. } => convs.iter().fold(samples, |t, c| c.out_len(t)),
            Featurizer::SpectrogramMlp { hop, .. } => samples / hop,
        }
    }

    pub fn forward(&self, ps: &ParamStore, signal: &Mat) -> (Mat, FeaturizerTape) {
        match self {
            Featurizer::RawCnn { convs, norm } => {
                let mut inputs = Vec::with_capacity(convs.len());
                let mut pre_act = Vec::with_capacity(convs.len());
                let mut norm_cache = None;
                let mut x = signal.clone();
                for (i, conv) in convs.iter().enumerate() {
                    let mut y = conv.forward(ps, &x);
                    if i == 0 {
                        if let Some(n) = norm {
                            let (z, c) = n.forward(ps, &y);
                            y = z;
                            norm_cache = Some(c);
                        }
                    }
                    let next = gelu(&y);
                    inputs.push(std::mem::replace(&mut x, next));
                    pre_act.push(y);
                }
                (
                    x,
                    FeaturizerTape::RawCnn { inputs, pre_act, norm: norm_cache },
                )
            }
            Featurizer::SpectrogramMlp { fft_size, hop, layers } => {
                let mut x = log_spectrogram(signal, *fft_size, *hop);
                let mut inputs = Vec::with_capacity(layers.len());
                let mut pre_act = Vec::with_capacity(layers.len());
                for l in layers {
                    let y = l.forward(ps, &x);
                    let next = gelu(&y);
                    inputs.push(std::mem::replace(&mut x, next));
                    pre_act.push(y);
                }
                (x, FeaturizerTape::SpectrogramMlp { inputs, pre_act })
            }
        }
    }

    /// Accumulates parameter gradients. The raw signal needs no gradient.
    pub fn backward(&self, ps: &ParamStore, tape: &FeaturizerTape, dout: Mat, grads: &mut Grads) {
        match (self, tape) {
            (Featurizer::RawCnn { convs, norm }, FeaturizerTape::RawCnn { inputs, pre_act, norm: nc }) => {
                let mut d = dout;
                for i in (0..convs.len()).rev() {
                    let mut dy = gelu_backward(&pre_act[i], &d);
                    if i == 0 {
                        if let (Some(n), Some(c)) = (norm, nc) {
                            dy = n.backward(ps, c, &dy, grads);
                        }
                    }
                    match convs[i].backward(ps, &inputs[i], &dy, grads, i > 0) {
                        Some(dx) => d = dx,
                        None => break,
                    }
                }
            }
            (Featurizer::SpectrogramMlp { layers, .. }, FeaturizerTape::SpectrogramMlp { inputs, pre_act }) => {
                let mut d = dout;
                for i in (0..layers.len()).rev() {
                    let dy = gelu_backward(&pre_act[i], &d);
                    if i == 0 {
                        layers[i].backward_params(&inputs[i], &dy, grads);
                    } else {
                        d = layers[i].backward(ps, &inputs[i], &dy, grads);
                    }
                }
            }
            _ => unreachable!("featurizer tape does not match featurizer kind"),
        }
    }
}

/// Per-channel log power spectrogram, one frame per `hop` samples.
///
/// Frame `m` covers the `fft_size` samples ending at sample `hop·(m+1) − 1`
/// (zero before the signal start), Hann-windowed. Output columns are
/// channel-major: `[c · bins + b]`.
pub fn log_spectrogram(signal: &Mat, fft_size: usize, hop: usize) -> Mat {
    let frames = signal.rows / hop;
    let bins = fft_size / 2 + 1;
    let ch = signal.cols;
    let window: Vec<f32> = (0..fft_size)
        .map(|i| {
            let s = (std::f32::consts::PI * i as f32 / fft_size as f32).sin();
            s * s
        })
        .collect();
    let fft = FftPlanner::<f32>::new().plan_fft_forward(fft_size);
    let mut buf = vec![Complex32::new(0.0, 0.0); fft_size];
    let mut out = Mat::zeros(frames, ch * bins);
    for m in 0..frames {
        let end = hop * (m + 1);
        let start = end as isize - fft_size as isize;
        let row = out.row_mut(m);
        for c in 0..ch {
            for (i, b) in buf.iter_mut().enumerate() {
                let t = start + i as isize;
                let v = if t < 0 { 0.0 } else { signal.at(t as usize, c) };
                *b = Complex32::new(v * window[i], 0.0);
            }
            fft.process(&mut buf);
            for b in 0..bins {
                row[c * bins + b] = (buf[b].norm_sqr() + 1e-6).ln();
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectrogram_frame_rate_and_causality() {
        let sig = Mat::from_vec(200, 2, (0..400).map(|i| (i as f32 * 0.3).sin()).collect());
        let s = log_spectrogram(&sig, 64, 20);
        assert_eq!(s.shape(), (10, 2 * 33));
        let mut pert = sig.clone();
        for v in &mut pert.data[180 * 2..] {
            *v += 1.0;
        }
        let p = log_spectrogram(&pert, 64, 20);
        assert_eq!(s.data[..9 * 66], p.data[..9 * 66]);
        assert_ne!(s.row(9), p.row(9));
    }

    #[test]
    fn spectrogram_peaks_at_tone_bin() {
        // 8 cycles per 64 samples → bin 8
        let sig = Mat::from_vec(
            128,
            1,
            (0..128).map(|i| (2.0 * std::f32::consts::PI * 8.0 * i as f32 / 64.0).sin()).collect(),
        );
        let s = log_spectrogram(&sig, 64, 64);
        let last = s.row(1);
        assert_eq!(crate::tensor::argmax(last), 8);
    }
}
