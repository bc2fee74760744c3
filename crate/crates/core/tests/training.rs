use std::path::Path;

use semg::augment::AugmentConfig;
use semg::data::{load_windows, split_dataset, synth_dataset, SplitMode, SynthConfig, WindowConfig, MANIFEST_FILE};
use semg::eval::corpus_cer;
use semg::loss::{distill_loss, softmax, LossConfig};
use semg::model::{build_model, ArchConfig, Checkpoint, Provenance};
use semg::train::{distill_train, personalize, train, TrainConfig, TrainData, TrainMode};

fn tiny_corpus(dir: &Path) -> SynthConfig {
    let cfg = SynthConfig {
        num_train_users: 2,
        num_test_users: 1,
        sessions_per_user: 5,
        session_duration_s: 4.0,
        ..Default::default()
    };
    synth_dataset(&cfg, dir).unwrap();
    cfg
}

fn load(dir: &Path, mode: SplitMode, user: Option<&str>) -> TrainData {
    let s = split_dataset(dir.join(MANIFEST_FILE), mode, user).unwrap();
    let w = WindowConfig { window_len: 2000, pad_past: 400, pad_future: 200, hop: None };
    TrainData {
        train: load_windows(&s.train, &w).unwrap(),
        val: load_windows(&s.val, &w).unwrap(),
        test: load_windows(&s.test, &w).unwrap(),
    }
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, micro_batch: 4, accum_steps: 2, peak_lr: 3e-3, seed: 3, ..TrainConfig::supervised() }
}

fn small() -> ArchConfig {
    ArchConfig::micro(16, 1, 11)
}

#[test]
fn zero_epochs_return_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    tiny_corpus(tmp.path());
    let data = load(tmp.path(), SplitMode::Generic, None);
    let cfg = quick(0);
    let out = train(&small(), &cfg, &AugmentConfig::default(), &LossConfig::default(), &data).unwrap();
    let init = build_model(&small(), cfg.init_seed()).unwrap();
    assert_eq!(out.checkpoint.model.params, init.params);
    assert_eq!(out.record.selected_epoch, 0);
    assert!(out.record.steps.is_empty());
    assert_eq!(out.record.val_cer, corpus_cer(&init, &data.val).unwrap().cer);
}

#[test]
fn two_epochs_lower_the_training_loss() {
    let tmp = tempfile::tempdir().unwrap();
    tiny_corpus(tmp.path());
    let data = load(tmp.path(), SplitMode::Generic, None);
    // four optimizer steps per epoch; the first has lr 0
    let cfg = TrainConfig { micro_batch: 2, accum_steps: 1, ..quick(2) };
    let out = train(&ArchConfig::micro(32, 2, 11), &cfg, &AugmentConfig::default(), &LossConfig::default(), &data).unwrap();
    let e = &out.record.epochs;
    assert_eq!(e.len(), 2);
    assert!(e[1].train_loss < e[0].train_loss, "{} then {}", e[0].train_loss, e[1].train_loss);
}

#[test]
fn training_is_deterministic_and_selects_the_best_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    tiny_corpus(tmp.path());
    let data = load(tmp.path(), SplitMode::Generic, None);
    let (aug, loss) = (AugmentConfig::default(), LossConfig::default());
    let a = train(&small(), &quick(3), &aug, &loss, &data).unwrap();
    let b = train(&small(), &quick(3), &aug, &loss, &data).unwrap();
    assert!(a.record.same_trace(&b.record));
    assert_eq!(a.checkpoint.to_bytes().unwrap(), b.checkpoint.to_bytes().unwrap());

    let c = train(&small(), &TrainConfig { seed: 4, ..quick(3) }, &aug, &loss, &data).unwrap();
    assert_ne!(c.checkpoint.model.params, a.checkpoint.model.params);

    // the reported CERs belong to the epoch with minimal validation CER
    let r = &a.record;
    let min = r.epochs.iter().map(|e| e.val_cer).fold(f64::INFINITY, f64::min);
    assert!(r.val_cer <= min);
    assert_eq!(corpus_cer(&a.checkpoint.model, &data.val).unwrap().cer, r.val_cer);
    assert_eq!(corpus_cer(&a.checkpoint.model, &data.test).unwrap().cer, r.test_cer.unwrap());
    for s in &r.steps {
        if s.clip.pre_norm > 0.1 {
            assert!(s.clip.clipped && s.clip.post_norm <= 0.1 + 1e-9, "{:?}", s.clip);
        }
    }
}

#[test]
fn zero_alpha_distillation_reproduces_supervised_training() {
    let tmp = tempfile::tempdir().unwrap();
    tiny_corpus(tmp.path());
    let data = load(tmp.path(), SplitMode::Generic, None);
    let aug = AugmentConfig::default();
    let teacher = train(&ArchConfig::micro(32, 1, 11), &quick(1), &aug, &LossConfig::default(), &data).unwrap();
    let sup = train(&small(), &quick(2), &aug, &LossConfig::default(), &data).unwrap();
    let off = LossConfig { alpha: 0.0, ..Default::default() };
    let dcfg = TrainConfig { mode: TrainMode::Distill, ..quick(2) };
    let dis = distill_train(&small(), &dcfg, &aug, &off, &teacher.checkpoint, &data).unwrap();
    assert_eq!(dis.checkpoint.model.params, sup.checkpoint.model.params);
    assert_eq!(dis.record.steps, sup.record.steps);
    assert_eq!(dis.record.epochs, sup.record.epochs);
    assert_eq!(dis.checkpoint.header.provenance, Provenance::Distilled);

    let wrong_vocab = build_model(&ArchConfig::micro(16, 1, 7), 0).unwrap();
    let wrong = Checkpoint::new(wrong_vocab, Provenance::Init, None, None);
    assert!(distill_train(&small(), &dcfg, &aug, &off, &wrong, &data).is_err());
    assert!(distill_train(&small(), &quick(1), &aug, &off, &teacher.checkpoint, &data).is_err());
}

#[test]
fn distilling_from_a_copy_costs_the_teacher_entropy() {
    let tmp = tempfile::tempdir().unwrap();
    tiny_corpus(tmp.path());
    let data = load(tmp.path(), SplitMode::Generic, None);
    let teacher = build_model(&ArchConfig::micro(32, 2, 11), 1).unwrap();
    let x = &data.train[0].windows[0].signal;
    let logits: Vec<f64> = teacher.forward(x).unwrap().data.iter().map(|&v| v as f64).collect();
    let t = 2.0;
    let kd = distill_loss(&logits, &logits, 11, t, false).unwrap();
    let p = softmax(&logits, 11, t);
    let frames = p.len() / 11;
    let entropy = -p.iter().map(|&q| if q > 0.0 { q * q.ln() } else { 0.0 }).sum::<f64>() / frames as f64;
    assert!((kd.loss - entropy).abs() < 1e-9, "{} vs {entropy}", kd.loss);
    assert!(kd.grad.iter().all(|g| g.abs() < 1e-12));
}

#[test]
fn personalization_records_its_origin() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = tiny_corpus(tmp.path());
    let generic = load(tmp.path(), SplitMode::Generic, None);
    let aug = AugmentConfig::default();
    let loss = LossConfig::default();
    let base = train(&small(), &quick(1), &aug, &loss, &generic).unwrap();
    let user = synth.user_id(synth.num_train_users);
    let data = load(tmp.path(), SplitMode::Personalization, Some(&user));
    let pcfg = TrainConfig { epochs: 0, micro_batch: 4, accum_steps: 1, ..TrainConfig::personalize() };
    let p = personalize(&pcfg, &aug, &loss, &base.checkpoint, &data).unwrap();
    let h = &p.checkpoint.header;
    assert_eq!(h.provenance, Provenance::Personalized);
    assert_eq!(h.parent_id.as_deref(), Some(base.checkpoint.id()));
    assert_eq!(h.init_origin, Some(Provenance::Supervised));
    assert_eq!(p.record.test_cer.unwrap(), corpus_cer(&base.checkpoint.model, &data.test).unwrap().cer);

    let p1 = personalize(&TrainConfig { epochs: 1, ..pcfg.clone() }, &aug, &loss, &base.checkpoint, &data).unwrap();
    let again = personalize(&TrainConfig { epochs: 0, ..pcfg.clone() }, &aug, &loss, &p1.checkpoint, &data).unwrap();
    assert_eq!(again.checkpoint.header.init_origin, Some(Provenance::Supervised));

    let train_user = synth.user_id(0);
    assert!(split_dataset(tmp.path().join(MANIFEST_FILE), SplitMode::Personalization, Some(&train_user)).is_err());
    assert!(personalize(&quick(0), &aug, &loss, &base.checkpoint, &data).is_err());
}
