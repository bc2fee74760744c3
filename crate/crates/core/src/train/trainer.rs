use std::borrow::Cow;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{lr_at, clip_grad_norm, AdamW, EpochLog, RunRecord, StepLog, TrainConfig, TrainMode};
use crate::augment::{self, rotate_channels, AugmentConfig};
use crate::data::{SessionWindows, WindowedSample};
use crate::error::{Error, Result};
use crate::eval::corpus_cer;
use crate::loss::{combine_weights, ctc_loss_from_logits, distill_loss, LossConfig};
use crate::model::{build_model, ArchConfig, Checkpoint, Grads, Model, Provenance, TrainForward};
use crate::tensor::Mat;
use crate::derive_seed;

/// Windowed sessions for one training run.
#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub train: Vec<SessionWindows>,
    pub val: Vec<SessionWindows>,
    pub test: Vec<SessionWindows>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights from the selected epoch.
    pub checkpoint: Checkpoint,
    pub record: RunRecord,
}

/// Supervised CTC training from a fresh initialization.
pub fn train(
    arch: &ArchConfig,
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    loss: &LossConfig,
    data: &TrainData,
) -> Result<TrainOutcome> {
    expect_mode(cfg, TrainMode::Supervised)?;
    let model = build_model(arch, cfg.init_seed())?;
    let init_id = Checkpoint::new(model.clone(), Provenance::Init, None, None).header.checkpoint_id;
    run(model, None, cfg, aug, loss, data, Provenance::Supervised, Some(init_id), None)
}

/// Student training against a frozen teacher's softened logits mixed with CTC.
///
/// Teacher and student see the identical augmented input; the teacher runs
/// without dropout and draws no randomness, so `alpha = 0` reproduces
/// [`train`] exactly.
pub fn distill_train(
    arch: &ArchConfig,
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    loss: &LossConfig,
    teacher: &Checkpoint,
    data: &TrainData,
) -> Result<TrainOutcome> {
    expect_mode(cfg, TrainMode::Distill)?;
    let model = build_model(arch, cfg.init_seed())?;
    let t = &teacher.model;
    if t.cfg.vocab_size != arch.vocab_size || t.cfg.featurizer.downsample() != arch.featurizer.downsample() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "teacher ({} classes, stride {}) does not match student ({} classes, stride {})",
            t.cfg.vocab_size,
            t.cfg.featurizer.downsample(),
            arch.vocab_size,
            arch.featurizer.downsample()
        )));
    }
    run(model, Some(t), cfg, aug, loss, data, Provenance::Distilled, Some(teacher.id().to_string()), None)
}

/// Fine-tunes every weight of `init` on one held-out user's sessions.
pub fn personalize(
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    loss: &LossConfig,
    init: &Checkpoint,
    data: &TrainData,
) -> Result<TrainOutcome> {
    expect_mode(cfg, TrainMode::Personalize)?;
    let origin = match init.header.provenance {
        Provenance::Personalized => init.header.init_origin,
        p => Some(p),
    };
    run(
        init.model.clone(),
        None,
        cfg,
        aug,
        loss,
        data,
        Provenance::Personalized,
        Some(init.id().to_string()),
        origin,
    )
}

fn expect_mode(cfg: &TrainConfig, mode: TrainMode) -> Result<()> {
    cfg.validate()?;
    if cfg.mode != mode {
        return Err(Error::InvalidConfig(format!("train.mode is {:?}, expected {mode:?}", cfg.mode)));
    }
    Ok(())
}

fn check_vocab(sets: &[&[SessionWindows]], vocab: usize) -> Result<()> {
    for s in sets.iter().flat_map(|s| s.iter()) {
        for w in &s.windows {
            if let Some(&symbol) = w.target.iter().find(|&&k| k as usize >= vocab || k == crate::BLANK) {
                return Err(Error::SymbolOutOfVocab { symbol, vocab_size: vocab });
            }
        }
    }
    Ok(())
}

struct SampleCtx<'a> {
    model: &'a Model,
    teacher: Option<&'a Model>,
    aug: &'a AugmentConfig,
    loss: &'a LossConfig,
    /// Normalized (distill, task) weights.
    weights: (f64, f64),
}

impl SampleCtx<'_> {
    fn loss_and_grads(&self, w: &WindowedSample, seed: u64) -> Result<(f64, Grads)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = self.model.num_frames(w.signal.rows);
        let draw = augment::draw(self.aug, frames, &mut rng);
        let signal = if draw.rotation == 0 {
            Cow::Borrowed(&w.signal)
        } else {
            Cow::Owned(rotate_channels(&w.signal, draw.rotation, self.aug.band_size)?)
        };
        let opts = TrainForward { masks: &draw.masks, dropout_seed: Some(rng.random()) };
        let (logits, tape) = self.model.forward_train(&signal, &opts);
        let vocab = logits.cols;
        let lf: Vec<f64> = logits.data.iter().map(|&v| v as f64).collect();
        let ctc = ctc_loss_from_logits(&lf, vocab, &w.target, frames, self.loss.ctc_zero_infinity)?;
        let (w_d, w_t) = self.weights;
        let (loss, grad) = match self.teacher {
            Some(teacher) if w_d > 0.0 => {
                let frozen = TrainForward { masks: &draw.masks, dropout_seed: None };
                let (tl, _) = teacher.forward_train(&signal, &frozen);
                let tf: Vec<f64> = tl.data.iter().map(|&v| v as f64).collect();
                let kd = distill_loss(&lf, &tf, vocab, self.loss.temperature, self.loss.hinton_t2_scaling)?;
                let g = kd.grad.iter().zip(&ctc.grad).map(|(d, t)| w_d * d + w_t * t).collect();
                (w_d * kd.loss + w_t * ctc.loss, g)
            }
            _ => (ctc.loss, ctc.grad),
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss {loss} on window starting at sample {}", w.start)));
        }
        let dlogits = Mat::from_vec(frames, vocab, grad.into_iter().map(|v| v as f32).collect());
        Ok((loss, self.model.backward(&tape, &dlogits)))
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    mut model: Model,
    teacher: Option<&Model>,
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    loss: &LossConfig,
    data: &TrainData,
    provenance: Provenance,
    parent_id: Option<String>,
    init_origin: Option<Provenance>,
) -> Result<TrainOutcome> {
    let started = Instant::now();
    aug.validate()?;
    loss.validate()?;
    let weights = if teacher.is_some() { combine_weights(loss)? } else { (0.0, 1.0) };
    check_vocab(&[&data.train, &data.val, &data.test], model.cfg.vocab_size)?;
    let samples: Vec<&WindowedSample> = data.train.iter().flat_map(|s| &s.windows).collect();
    if samples.is_empty() {
        return Err(Error::EmptyManifest("no training windows".into()));
    }
    if data.val.is_empty() {
        return Err(Error::EmptyManifest("no validation sessions".into()));
    }
    let batch = cfg.effective_batch();
    let steps_per_epoch = samples.len().div_ceil(batch);
    let total_steps = cfg.epochs * steps_per_epoch;
    let data_seed = cfg.data_seed();

    let mut opt = AdamW::new(&model.params, cfg.optimizer);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut steps = Vec::with_capacity(total_steps);
    let mut best = (0usize, corpus_cer(&model, &data.val)?.cer, model.params.clone());
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 1..=cfg.epochs {
        let epoch_seed = derive_seed(data_seed, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch) {
            let ctx = SampleCtx { model: &model, teacher, aug, loss, weights };
            let mut grads = model.params.zero_grads();
            let mut step_loss = 0.0;
            for micro in chunk.chunks(cfg.micro_batch) {
                let results: Vec<(f64, Grads)> = micro
                    .par_iter()
                    .map(|&i| ctx.loss_and_grads(samples[i], derive_seed(epoch_seed, i as u64)))
                    .collect::<Result<_>>()?;
                for (l, g) in &results {
                    step_loss += l;
                    grads.add_assign(g);
                }
            }
            grads.scale(1.0 / chunk.len() as f32);
            let clip = clip_grad_norm(&mut grads, cfg.grad_clip);
            let step = steps.len();
            let lr = lr_at(step, total_steps, cfg.peak_lr, cfg.warmup_ratio)?;
            opt.step(&mut model.params, &grads, lr, cfg.weight_decay);
            loss_sum += step_loss;
            steps.push(StepLog { step, lr, loss: step_loss / chunk.len() as f64, clip });
        }
        if !model.params.is_finite() {
            return Err(Error::NonFinite(format!("weights diverged during epoch {epoch}")));
        }
        let val_cer = corpus_cer(&model, &data.val)?.cer;
        let train_loss = loss_sum / samples.len() as f64;
        log::info!("epoch {epoch}/{}: train_loss {train_loss:.4} val_cer {val_cer:.2}", cfg.epochs);
        epochs.push(EpochLog { epoch, train_loss, val_cer });
        if best.0 == 0 || val_cer < best.1 {
            best = (epoch, val_cer, model.params.clone());
        }
    }

    let (selected_epoch, val_cer, params) = best;
    model.params = params;
    let test_cer = if data.test.is_empty() { None } else { Some(corpus_cer(&model, &data.test)?.cer) };
    let checkpoint = Checkpoint::new(model, provenance, parent_id, init_origin);
    let record = RunRecord {
        mode: cfg.mode,
        peak_lr: cfg.peak_lr,
        seed: cfg.seed,
        epochs,
        steps,
        selected_epoch,
        val_cer,
        test_cer,
        checkpoint_id: checkpoint.id().to_string(),
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { checkpoint, record })
}
