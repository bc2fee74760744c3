//! Inference timing (mean over `runs`, median over `trials`) and naive
//! streaming inference, which re-runs a full window per hop and keeps only the
//! trailing frames.

use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Checkpoint, Model, DOWNSAMPLE};
use crate::tensor::Mat;

pub const WARMUP_RUNS: usize = 10;

/// Published single-window latencies (ms) for the named architectures.
pub fn reference_latency_ms(name: &str) -> Option<f64> {
    match name {
        "Tiny" => Some(6.1),
        "Small" => Some(5.7002),
        "Large" => Some(26.966),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub model_id: String,
    pub arch: String,
    pub params: usize,
    /// `[samples, channels]`.
    pub window_shape: [usize; 2],
    pub runs: usize,
    pub trials: usize,
    pub warmup_runs: usize,
    pub trial_means_ms: Vec<f64>,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub hardware: String,
    /// Informational only; measured on different hardware.
    pub reference_ms: Option<f64>,
}

impl TimingReport {
    /// Recomputes the summary from `trial_means_ms` and checks every field.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("timing report: {m}")));
        if self.runs == 0 || self.trials == 0 || self.trial_means_ms.len() != self.trials {
            return bad(format!("{} trial means for {} trials of {} runs", self.trial_means_ms.len(), self.trials, self.runs));
        }
        if self.trial_means_ms.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return bad("latencies must be positive and finite".into());
        }
        let (lo, hi) = min_max(&self.trial_means_ms);
        if median(&self.trial_means_ms) != self.median_ms || lo != self.min_ms || hi != self.max_ms {
            return bad("summary does not match trial means".into());
        }
        if !(self.min_ms <= self.median_ms && self.median_ms <= self.max_ms) {
            return bad("median outside [min, max]".into());
        }
        Ok(())
    }
}

/// Median; mean of the two middle values for even lengths.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// OS, architecture, CPU model and visible parallelism.
pub fn hardware_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{}-{} | {cpu} | {threads} threads | rayon pool {}", std::env::consts::OS, std::env::consts::ARCH, rayon::current_num_threads())
}

/// Times single-window inference: `WARMUP_RUNS` untimed forwards, then
/// `trials` trials of `runs` timed forwards each.
pub fn bench_inference(ckpt: &Checkpoint, window: &Mat, runs: usize, trials: usize) -> Result<TimingReport> {
    if runs == 0 || trials == 0 {
        return Err(Error::InvalidConfig("runs and trials must both be at least 1".into()));
    }
    let model = &ckpt.model;
    model.forward(window)?;
    let mut trial_means_ms = Vec::with_capacity(trials);
    for _ in 0..trials {
        for _ in 0..WARMUP_RUNS {
            black_box(model.forward(black_box(window))?);
        }
        let mut total = 0.0f64;
        for _ in 0..runs {
            let t0 = Instant::now();
            black_box(model.forward(black_box(window))?);
            total += t0.elapsed().as_secs_f64() * 1e3;
        }
        trial_means_ms.push(total / runs as f64);
    }
    let (min_ms, max_ms) = min_max(&trial_means_ms);
    Ok(TimingReport {
        model_id: ckpt.id().to_string(),
        arch: model.cfg.label(),
        params: model.params.num_scalars(),
        window_shape: [window.rows, window.cols],
        runs,
        trials,
        warmup_runs: WARMUP_RUNS,
        median_ms: median(&trial_means_ms),
        trial_means_ms,
        min_ms,
        max_ms,
        hardware: hardware_descriptor(),
        reference_ms: model.cfg.name.as_deref().and_then(reference_latency_ms),
    })
}

/// One per-frame decision: argmax token at a global frame index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Emission {
    pub frame: usize,
    pub token: u32,
}

/// Sliding-window streaming decoder.
///
/// The buffer holds the most recent `window_samples` samples and starts
/// zero-filled, like a session edge. Every `emit_last_n · 20` pushed samples it
/// runs one full-window forward and emits argmax tokens for the last
/// `emit_last_n` frames.
pub struct StreamingDecoder<'a> {
    model: &'a Model,
    buffer: Mat,
    emit_last_n: usize,
    hop: usize,
    since_last: usize,
    consumed: usize,
    forward_passes: usize,
}

impl<'a> StreamingDecoder<'a> {
    pub fn new(model: &'a Model, window_samples: usize, emit_last_n: usize) -> Result<Self> {
        if window_samples == 0 || window_samples % DOWNSAMPLE != 0 {
            return Err(Error::InvalidConfig(format!(
                "streaming window of {window_samples} samples must be a positive multiple of {DOWNSAMPLE}"
            )));
        }
        let frames = model.num_frames(window_samples);
        if emit_last_n == 0 || emit_last_n > frames {
            return Err(Error::InvalidConfig(format!(
                "emit_last_n = {emit_last_n} must lie in [1, {frames}] (frames per window)"
            )));
        }
        Ok(StreamingDecoder {
            model,
            buffer: Mat::zeros(window_samples, model.cfg.featurizer.in_channels),
            emit_last_n,
            hop: emit_last_n * DOWNSAMPLE,
            since_last: 0,
            consumed: 0,
            forward_passes: 0,
        })
    }

    pub fn forward_passes(&self) -> usize {
        self.forward_passes
    }

    /// Appends one time step; returns emissions when a hop completes.
    pub fn push(&mut self, sample: &[f32]) -> Result<Option<Vec<Emission>>> {
        let c = self.buffer.cols;
        if sample.len() != c {
            return Err(Error::Shape(format!("sample has {} channels, stream expects {c}", sample.len())));
        }
        self.buffer.data.copy_within(c.., 0);
        let n = self.buffer.data.len();
        self.buffer.data[n - c..].copy_from_slice(sample);
        self.consumed += 1;
        self.since_last += 1;
        if self.since_last < self.hop {
            return Ok(None);
        }
        self.since_last = 0;
        self.forward_passes += 1;
        let logits = self.model.forward(&self.buffer)?;
        let end_frame = self.consumed / DOWNSAMPLE;
        let f = logits.rows;
        Ok(Some(
            (f - self.emit_last_n..f)
                .zip(end_frame - self.emit_last_n..end_frame)
                .map(|(row, frame)| Emission { frame, token: logits.argmax_row(row) as u32 })
                .collect(),
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamOutput {
    pub emissions: Vec<Emission>,
    pub forward_passes: usize,
    pub emit_last_n: usize,
}

/// Streams every row of `signal` through a [`StreamingDecoder`].
pub fn stream_infer(model: &Model, signal: &Mat, window_samples: usize, emit_last_n: usize) -> Result<StreamOutput> {
    let mut dec = StreamingDecoder::new(model, window_samples, emit_last_n)?;
    let mut emissions = Vec::new();
    for t in 0..signal.rows {
        if let Some(e) = dec.push(signal.row(t))? {
            emissions.extend(e);
        }
    }
    Ok(StreamOutput { emissions, forward_passes: dec.forward_passes(), emit_last_n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ArchConfig, Provenance};

    fn micro() -> Model {
        build_model(&ArchConfig::micro(16, 1, 5), 3).unwrap()
    }

    #[test]
    fn median_of_three() {
        assert_eq!(median(&[6.0, 6.2, 5.9]), 6.0);
        assert_eq!(median(&[1.0, 3.0]), 2.0);
    }

    #[test]
    fn report_is_self_consistent() {
        let ckpt = Checkpoint::new(micro(), Provenance::Init, None, None);
        let w = Mat::zeros(200, 32);
        let r = bench_inference(&ckpt, &w, 3, 3).unwrap();
        r.validate().unwrap();
        assert_eq!(r.window_shape, [200, 32]);
        let mut broken = r.clone();
        broken.median_ms = broken.max_ms + 1.0;
        assert!(broken.validate().is_err());
        assert!(bench_inference(&ckpt, &w, 0, 3).is_err());
    }

    #[test]
    fn streaming_final_frame_matches_offline() {
        let m = micro();
        let mut sig = Mat::zeros(400, 32);
        sig.data.iter_mut().enumerate().for_each(|(i, v)| *v = ((i * 7919) % 13) as f32 / 13.0 - 0.5);
        let out = stream_infer(&m, &sig, 200, 1).unwrap();
        assert_eq!(out.forward_passes, 20);
        let last = out.emissions.last().unwrap();
        let offline = m.forward(&sig.slice_rows(200, 400)).unwrap();
        assert_eq!(last.frame, 19);
        assert_eq!(last.token, offline.argmax_row(offline.rows - 1) as u32);
    }

    #[test]
    fn emit_last_n_validation() {
        let m = micro();
        assert!(StreamingDecoder::new(&m, 200, 11).is_err());
        assert!(StreamingDecoder::new(&m, 210, 1).is_err());
        assert!(StreamingDecoder::new(&m, 200, 10).is_ok());
    }
}
