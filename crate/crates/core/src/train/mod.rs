//! Supervised CTC training, distillation from a frozen teacher, per-user
//! fine-tuning, and learning-rate selection across runs.

pub mod schedule;
mod trainer;

pub use schedule::{clip_grad_norm, lr_at, warmup_steps, AdamW, AdamWConfig, ClipStats};
pub use trainer::{distill_train, personalize, train, TrainData, TrainOutcome};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    Supervised,
    Distill,
    Personalize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    /// Samples per forward group; gradients of `accum_steps` groups are averaged
    /// into one update, so the effective batch is `micro_batch · accum_steps`.
    pub micro_batch: usize,
    pub accum_steps: usize,
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub optimizer: AdamWConfig,
    /// Split into an initialization seed and a data-order/augmentation seed.
    pub seed: u64,
    pub teacher_checkpoint: Option<String>,
    pub init_checkpoint: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Supervised,
            epochs: 200,
            micro_batch: 64,
            accum_steps: 10,
            peak_lr: 1e-3,
            warmup_ratio: 0.05,
            weight_decay: 0.2,
            grad_clip: 0.1,
            optimizer: AdamWConfig::default(),
            seed: 0,
            teacher_checkpoint: None,
            init_checkpoint: None,
        }
    }
}

/// Peak learning rates swept per architecture.
pub const LR_GRID: [f64; 4] = [3e-3, 1e-3, 3e-4, 1e-4];

impl TrainConfig {
    pub fn supervised() -> Self {
        TrainConfig::default()
    }

    pub fn distill() -> Self {
        TrainConfig { mode: TrainMode::Distill, weight_decay: 0.1, ..Default::default() }
    }

    pub fn personalize() -> Self {
        TrainConfig { mode: TrainMode::Personalize, epochs: 100, weight_decay: 0.0, ..Default::default() }
    }

    pub fn effective_batch(&self) -> usize {
        self.micro_batch * self.accum_steps
    }

    pub fn init_seed(&self) -> u64 {
        crate::derive_seed(self.seed, 1)
    }

    pub fn data_seed(&self) -> u64 {
        crate::derive_seed(self.seed, 2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.micro_batch == 0 || self.accum_steps == 0 {
            return bad("train.micro_batch and train.accum_steps must be positive");
        }
        if !(self.warmup_ratio > 0.0 && self.warmup_ratio < 1.0) {
            return bad("train.warmup_ratio must lie in (0, 1)");
        }
        if !(self.grad_clip > 0.0) {
            return bad("train.grad_clip must be positive");
        }
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            return bad("train.peak_lr must be finite and non-negative");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("train.weight_decay must be non-negative");
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return bad("train.optimizer betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_cer: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub clip: ClipStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: TrainMode,
    pub peak_lr: f64,
    pub seed: u64,
    pub epochs: Vec<EpochLog>,
    pub steps: Vec<StepLog>,
    /// Epoch with the lowest validation CER (earliest on ties); 0 when no
    /// epochs ran.
    pub selected_epoch: usize,
    pub val_cer: f64,
    pub test_cer: Option<f64>,
    pub checkpoint_id: String,
    pub wall_clock_s: f64,
}

impl RunRecord {
    /// Writes `epoch,train_loss,val_cer` rows.
    pub fn write_curve_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,val_cer")?;
        for e in &self.epochs {
            writeln!(w, "{},{},{}", e.epoch, e.train_loss, e.val_cer)?;
        }
        Ok(())
    }

    /// Equality of everything except wall-clock time.
    pub fn same_trace(&self, other: &RunRecord) -> bool {
        RunRecord { wall_clock_s: 0.0, ..self.clone() } == RunRecord { wall_clock_s: 0.0, ..other.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub peak_lr: f64,
    pub mean_val_cer: f64,
    pub num_runs: usize,
    pub test_cer_mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single run.
    pub test_cer_stdev: f64,
    /// Population standard deviation (n).
    pub test_cer_stdev_population: f64,
}

/// Averages validation CER per learning rate across seeds, picks the lowest
/// (first seen on ties), and summarizes test CER at that learning rate.
pub fn select_best(records: &[RunRecord]) -> Result<Selection> {
    let mut groups: Vec<(f64, Vec<&RunRecord>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|(lr, _)| lr.to_bits() == r.peak_lr.to_bits()) {
            Some((_, g)) => g.push(r),
            None => groups.push((r.peak_lr, vec![r])),
        }
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mut best: Option<(f64, f64, &Vec<&RunRecord>)> = None;
    for (lr, g) in &groups {
        let v = mean(&g.iter().map(|r| r.val_cer).collect::<Vec<_>>());
        if best.is_none_or(|(_, bv, _)| v < bv) {
            best = Some((*lr, v, g));
        }
    }
    let (peak_lr, mean_val_cer, g) = best.ok_or_else(|| Error::EmptyManifest("no run records".into()))?;
    let tests = g
        .iter()
        .map(|r| r.test_cer.ok_or_else(|| Error::InvalidConfig("run record lacks a test CER".into())))
        .collect::<Result<Vec<f64>>>()?;
    let m = mean(&tests);
    let ss: f64 = tests.iter().map(|t| (t - m) * (t - m)).sum();
    let n = tests.len() as f64;
    Ok(Selection {
        peak_lr,
        mean_val_cer,
        num_runs: tests.len(),
        test_cer_mean: m,
        test_cer_stdev: if tests.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 },
        test_cer_stdev_population: (ss / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(lr: f64, val: f64, test: f64) -> RunRecord {
        RunRecord {
            mode: TrainMode::Supervised,
            peak_lr: lr,
            seed: 0,
            epochs: vec![],
            steps: vec![],
            selected_epoch: 1,
            val_cer: val,
            test_cer: Some(test),
            checkpoint_id: String::new(),
            wall_clock_s: 0.0,
        }
    }

    #[test]
    fn select_single_record() {
        let s = select_best(&[rec(1e-3, 20.0, 25.0)]).unwrap();
        assert_eq!((s.peak_lr, s.test_cer_mean, s.test_cer_stdev), (1e-3, 25.0, 0.0));
    }

    #[test]
    fn select_argmin_lr() {
        let s = select_best(&[rec(1e-3, 35.0, 1.0), rec(3e-4, 34.0, 2.0)]).unwrap();
        assert_eq!(s.peak_lr, 3e-4);
    }

    #[test]
    fn select_stdev_conventions() {
        let s = select_best(&[rec(1e-3, 1.0, 30.0), rec(1e-3, 1.0, 31.0), rec(1e-3, 1.0, 32.0)]).unwrap();
        assert_eq!(s.test_cer_mean, 31.0);
        assert_eq!(s.test_cer_stdev, 1.0);
        assert!((s.test_cer_stdev_population - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(select_best(&[]).is_err());
    }

    #[test]
    fn presets() {
        assert_eq!(TrainConfig::supervised().effective_batch(), 640);
        assert_eq!(TrainConfig::distill().weight_decay, 0.1);
        let p = TrainConfig::personalize();
        assert_eq!((p.epochs, p.weight_decay), (100, 0.0));
        assert_ne!(p.init_seed(), p.data_seed());
    }
}
