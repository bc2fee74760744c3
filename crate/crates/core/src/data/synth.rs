//! Synthetic sEMG typing corpus.
//!
//! Every key symbol owns a spatial pattern over the electrodes and a carrier
//! frequency. A keystroke renders as a Hann-windowed burst of that carrier,
//! shaped by the key pattern and by a per-user channel gain. Users therefore
//! share the task but differ in how it looks on the electrodes.

use std::collections::BTreeMap;
use std::f32::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::session::{save_session, KeyEvent, Session};
use super::split::{allocate_sessions, session_path, SplitManifest};
use crate::error::{Error, Result};
use crate::tensor::Mat;
use crate::{derive_seed, BAND_SIZE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_train_users: usize,
    pub num_test_users: usize,
    pub sessions_per_user: usize,
    pub session_duration_s: f64,
    /// Including the blank, so `vocab_size - 1` distinct keys.
    pub vocab_size: usize,
    pub keys_per_minute: f64,
    pub noise_std: f32,
    /// Log-normal spread of per-user, per-channel gains.
    pub gain_jitter: f32,
    /// Per-user additive perturbation of every key's spatial pattern.
    pub pattern_jitter: f32,
    pub sample_rate_hz: u32,
    pub num_channels: usize,
    pub burst_ms: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_train_users: 10,
            num_test_users: 2,
            sessions_per_user: 6,
            session_duration_s: 15.0,
            vocab_size: 11,
            keys_per_minute: 265.0,
            noise_std: 0.1,
            gain_jitter: 0.3,
            pattern_jitter: 0.0,
            sample_rate_hz: 2000,
            num_channels: 32,
            burst_ms: 100.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.vocab_size < 2 {
            return bad("vocab_size must be at least 2 (blank plus one key)");
        }
        if self.num_train_users == 0 || self.num_test_users == 0 || self.sessions_per_user == 0 {
            return bad("user and session counts must be positive");
        }
        if !(self.session_duration_s > 0.0) || !(self.keys_per_minute > 0.0) {
            return bad("session_duration_s and keys_per_minute must be positive");
        }
        if !(self.noise_std >= 0.0) || !(self.gain_jitter >= 0.0) || !(self.pattern_jitter >= 0.0) {
            return bad("noise_std and jitters must be non-negative");
        }
        if self.sample_rate_hz == 0 || self.num_channels == 0 || self.num_channels % BAND_SIZE != 0 {
            return bad("sample_rate_hz must be positive and num_channels a multiple of 16");
        }
        if !(self.burst_ms > 0.0) {
            return bad("burst_ms must be positive");
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        (self.session_duration_s * self.sample_rate_hz as f64).round() as usize
    }

    fn burst_len(&self) -> usize {
        ((self.burst_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize).max(1)
    }

    pub fn user_id(&self, user: usize) -> String {
        format!("u{user:02}")
    }

    pub fn session_id(&self, user: usize, session: usize) -> String {
        format!("u{user:02}_s{session}")
    }
}

/// Per-key rendering parameters shared by all users.
#[derive(Clone, Debug)]
struct KeyShape {
    pattern: Vec<f32>,
    freq_hz: f32,
}

/// Per-user electrode characteristics.
#[derive(Clone, Debug)]
pub struct UserProfile {
    gains: Vec<f32>,
    /// `[key][channel]` additive pattern offsets.
    pattern_offsets: Vec<Vec<f32>>,
}

/// Deterministic renderer for one [`SynthConfig`].
pub struct Synthesizer {
    cfg: SynthConfig,
    keys: Vec<KeyShape>,
}

impl Synthesizer {
    pub fn new(cfg: SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x6b65_7973));
        let c = cfg.num_channels;
        let keys = (0..cfg.vocab_size)
            .map(|_| {
                let mut pattern: Vec<f32> = (0..c).map(|_| StandardNormal.sample(&mut rng)).collect();
                let rms = (pattern.iter().map(|v| v * v).sum::<f32>() / c as f32).sqrt();
                pattern.iter_mut().for_each(|v| *v /= rms);
                KeyShape {
                    pattern,
                    freq_hz: rng.random_range(30.0..150.0),
                }
            })
            .collect();
        Ok(Synthesizer { cfg, keys })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    pub fn user_profile(&self, user: usize) -> UserProfile {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, 0x1000 + user as u64));
        let c = self.cfg.num_channels;
        let gains = (0..c)
            .map(|_| {
                let z: f32 = StandardNormal.sample(&mut rng);
                (self.cfg.gain_jitter * z).exp()
            })
            .collect();
        let pattern_offsets = (0..self.cfg.vocab_size)
            .map(|_| {
                (0..c)
                    .map(|_| {
                        let z: f32 = StandardNormal.sample(&mut rng);
                        self.cfg.pattern_jitter * z
                    })
                    .collect()
            })
            .collect();
        UserProfile { gains, pattern_offsets }
    }

    /// Keystroke schedule: inter-key intervals uniform in ±40% of the mean
    /// interval, never shorter than one burst, bursts fully inside the session.
    pub fn schedule(&self, rng: &mut ChaCha8Rng) -> Vec<KeyEvent> {
        let n = self.cfg.num_samples();
        let burst = self.cfg.burst_len();
        let mean = 60.0 / self.cfg.keys_per_minute * self.cfg.sample_rate_hz as f64;
        let mut t = rng.random_range(0.0..mean);
        let mut events = Vec::new();
        while (t as usize) + burst <= n {
            events.push(KeyEvent {
                symbol: rng.random_range(1..self.cfg.vocab_size as u32),
                timestamp: t as u64,
            });
            t += (mean * rng.random_range(0.6..1.4)).max(burst as f64);
        }
        events
    }

    /// Renders `events` for `user` into `num_samples × num_channels`, adding noise from `rng`.
    pub fn render(
        &self,
        profile: &UserProfile,
        events: &[KeyEvent],
        num_samples: usize,
        rng: &mut ChaCha8Rng,
    ) -> Mat {
        let c = self.cfg.num_channels;
        let burst = self.cfg.burst_len();
        let sr = self.cfg.sample_rate_hz as f32;
        let mut x = Mat::zeros(num_samples, c);
        for ev in events {
            let key = &self.keys[ev.symbol as usize];
            let offs = &profile.pattern_offsets[ev.symbol as usize];
            let start = ev.timestamp as usize;
            for tau in 0..burst.min(num_samples.saturating_sub(start)) {
                let env = (PI * tau as f32 / burst as f32).sin().powi(2);
                let carrier = (2.0 * PI * key.freq_hz * tau as f32 / sr).sin();
                let row = x.row_mut(start + tau);
                for ch in 0..c {
                    row[ch] += profile.gains[ch] * (key.pattern[ch] + offs[ch]) * env * carrier;
                }
            }
        }
        if self.cfg.noise_std > 0.0 {
            let noise = Normal::new(0.0f32, self.cfg.noise_std).expect("validated noise_std");
            for v in &mut x.data {
                *v += noise.sample(rng);
            }
        }
        x
    }

    pub fn generate_session(&self, user: usize, session: usize) -> Session {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.cfg.seed,
            ((user as u64) << 32) | session as u64,
        ));
        let profile = self.user_profile(user);
        let labels = self.schedule(&mut rng);
        let samples = self.render(&profile, &labels, self.cfg.num_samples(), &mut rng);
        Session {
            user_id: self.cfg.user_id(user),
            session_id: self.cfg.session_id(user, session),
            sample_rate_hz: self.cfg.sample_rate_hz,
            samples,
            labels,
        }
    }
}

/// What [`synth_dataset`] wrote.
#[derive(Clone, Debug)]
pub struct SynthSummary {
    pub manifest: SplitManifest,
    /// Scheduled keystrokes per session id.
    pub event_counts: BTreeMap<String, usize>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes a full synthetic corpus plus `manifest.json` into `out_dir`.
///
/// The first `num_train_users` users form the generic training pool; the rest
/// are held out.
pub fn synth_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthSummary> {
    let synth = Synthesizer::new(cfg.clone())?;
    let mut manifest = SplitManifest::default();
    let mut event_counts = BTreeMap::new();
    for user in 0..cfg.num_train_users + cfg.num_test_users {
        let uid = cfg.user_id(user);
        let mut ids = Vec::with_capacity(cfg.sessions_per_user);
        for s in 0..cfg.sessions_per_user {
            let session = synth.generate_session(user, s);
            save_session(&session, session_path(out_dir, &uid, &session.session_id))?;
            event_counts.insert(session.session_id.clone(), session.labels.len());
            ids.push(session.session_id);
        }
        manifest.sessions.insert(uid.clone(), allocate_sessions(&ids));
        if user < cfg.num_train_users {
            manifest.train_users.push(uid);
        } else {
            manifest.test_users.push(uid);
        }
    }
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(SynthSummary { manifest, event_counts })
}
