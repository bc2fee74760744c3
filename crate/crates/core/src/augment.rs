//! Training-time augmentations: electrode rotation within each wrist band and
//! time masking on featurizer frames.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Mat;
use crate::BAND_SIZE;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rotation {
    None,
    /// Uniform over {−1, 0, +1}.
    #[default]
    Pm1,
}

impl Rotation {
    pub fn offsets(self) -> &'static [i32] {
        match self {
            Rotation::None => &[0],
            Rotation::Pm1 => &[-1, 0, 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub rotation: Rotation,
    /// Maximum mask length in frames; 0 disables masking.
    pub mask_len: usize,
    pub masks_per_window: usize,
    pub band_size: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation: Rotation::Pm1,
            mask_len: 0,
            masks_per_window: 2,
            band_size: BAND_SIZE,
        }
    }
}

impl AugmentConfig {
    /// No rotation, no masking.
    pub fn disabled() -> Self {
        AugmentConfig {
            rotation: Rotation::None,
            mask_len: 0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.band_size == 0 {
            return Err(Error::InvalidConfig("augment.band_size must be positive".into()));
        }
        Ok(())
    }
}

/// One sample's random augmentation choices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AugmentDraw {
    pub rotation: i32,
    /// `(start, len)` spans in frames, already clipped to the frame count.
    pub masks: Vec<(usize, usize)>,
}

impl AugmentDraw {
    pub fn is_identity(&self) -> bool {
        self.rotation == 0 && self.masks.is_empty()
    }
}

pub fn draw<R: Rng + ?Sized>(cfg: &AugmentConfig, num_frames: usize, rng: &mut R) -> AugmentDraw {
    let offsets = cfg.rotation.offsets();
    let rotation = if offsets.len() == 1 {
        offsets[0]
    } else {
        offsets[rng.random_range(0..offsets.len())]
    };
    AugmentDraw {
        rotation,
        masks: sample_time_masks(num_frames, cfg, rng),
    }
}

/// Circularly shifts channels within each band: channel `c` moves to `(c + offset) mod band`.
pub fn rotate_channels(signal: &Mat, offset: i32, band_size: usize) -> Result<Mat> {
    if band_size == 0 || signal.cols % band_size != 0 {
        return Err(Error::Shape(format!(
            "{} channels is not a multiple of band size {band_size}",
            signal.cols
        )));
    }
    if offset.unsigned_abs() as usize >= band_size {
        return Err(Error::InvalidConfig(format!(
            "rotation offset {offset} must be smaller than band size {band_size}"
        )));
    }
    if offset == 0 {
        return Ok(signal.clone());
    }
    let shift = offset.rem_euclid(band_size as i32) as usize;
    let mut out = Mat::zeros(signal.rows, signal.cols);
    for (src, dst) in signal
        .data
        .chunks_exact(band_size)
        .zip(out.data.chunks_exact_mut(band_size))
    {
        for c in 0..band_size {
            dst[(c + shift) % band_size] = src[c];
        }
    }
    Ok(out)
}

/// Draws `masks_per_window` spans: start uniform in `[0, F)`, length uniform in `[1, mask_len]`.
pub fn sample_time_masks<R: Rng + ?Sized>(
    num_frames: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    if cfg.mask_len == 0 || num_frames == 0 {
        return Vec::new();
    }
    (0..cfg.masks_per_window)
        .map(|_| {
            let start = rng.random_range(0..num_frames);
            let len = rng.random_range(1..=cfg.mask_len);
            (start, len.min(num_frames - start))
        })
        .collect()
}

pub fn apply_time_masks(features: &mut Mat, masks: &[(usize, usize)]) {
    for &(start, len) in masks {
        let end = (start + len).min(features.rows);
        features.data[start * features.cols..end * features.cols].fill(0.0);
    }
}

/// Zeroes random frame spans across all feature dimensions.
pub fn mask_time<R: Rng + ?Sized>(features: &Mat, cfg: &AugmentConfig, rng: &mut R) -> Mat {
    let mut out = features.clone();
    let masks = sample_time_masks(features.rows, cfg, rng);
    apply_time_masks(&mut out, &masks);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(rows: usize, cols: usize) -> Mat {
        Mat::from_vec(rows, cols, (0..rows * cols).map(|i| i as f32).collect())
    }

    #[test]
    fn zero_offset_is_identity() {
        let m = ramp(3, 32);
        assert_eq!(rotate_channels(&m, 0, 16).unwrap(), m);
    }

    #[test]
    fn plus_one_matches_manual_permutation() {
        let m = Mat::from_vec(1, 16, (0..16).map(|i| i as f32).collect());
        let r = rotate_channels(&m, 1, 16).unwrap();
        let mut want = vec![15.0];
        want.extend((0..15).map(|i| i as f32));
        assert_eq!(r.data, want);
    }

    #[test]
    fn bands_rotate_independently() {
        let m = ramp(1, 32);
        let r = rotate_channels(&m, -1, 16).unwrap();
        assert_eq!(r.at(0, 15), 0.0);
        assert_eq!(r.at(0, 31), 16.0);
        assert_eq!(r.at(0, 16), 17.0);
    }

    #[test]
    fn offset_must_be_smaller_than_band() {
        assert!(rotate_channels(&ramp(1, 32), 16, 16).is_err());
        assert!(rotate_channels(&ramp(1, 32), -16, 16).is_err());
        assert!(rotate_channels(&ramp(1, 20), 1, 16).is_err());
    }

    #[test]
    fn masking_disabled_is_identity() {
        let m = ramp(10, 4);
        let cfg = AugmentConfig { mask_len: 0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(mask_time(&m, &cfg, &mut rng), m);
    }

    #[test]
    fn masking_is_deterministic_per_seed() {
        let m = ramp(50, 4);
        let cfg = AugmentConfig { mask_len: 7, ..Default::default() };
        let a = mask_time(&m, &cfg, &mut ChaCha8Rng::seed_from_u64(9));
        let b = mask_time(&m, &cfg, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    fn zero_frames(m: &Mat) -> usize {
        (0..m.rows).filter(|&r| m.row(r).iter().all(|&v| v == 0.0)).count()
    }

    proptest! {
        #[test]
        fn rotation_cycle_returns_input(vals in proptest::collection::vec(-10.0f32..10.0, 64)) {
            let m = Mat::from_vec(2, 32, vals);
            let mut r = m.clone();
            for _ in 0..16 {
                r = rotate_channels(&r, 1, 16).unwrap();
            }
            prop_assert_eq!(&r, &m);
            let back = rotate_channels(&rotate_channels(&m, 1, 16).unwrap(), -1, 16).unwrap();
            prop_assert_eq!(&back, &m);
            let mut a = rotate_channels(&m, 1, 16).unwrap().row(0).to_vec();
            let mut b = m.row(0).to_vec();
            a.sort_by(f32::total_cmp);
            b.sort_by(f32::total_cmp);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn masking_bounds(
            frames in 1usize..60,
            mask_len in 0usize..16,
            masks in 0usize..4,
            pre_zero in proptest::collection::vec(any::<bool>(), 60),
            seed in any::<u64>(),
        ) {
            let mut m = Mat::from_vec(frames, 3, (0..frames * 3).map(|i| i as f32 + 1.0).collect());
            for r in 0..frames {
                if pre_zero[r] {
                    m.row_mut(r).fill(0.0);
                }
            }
            let cfg = AugmentConfig { mask_len, masks_per_window: masks, ..Default::default() };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = mask_time(&m, &cfg, &mut rng);
            prop_assert_eq!(out.shape(), m.shape());
            let before = zero_frames(&m);
            let after = zero_frames(&out);
            prop_assert!(after >= before);
            prop_assert!(after <= before + masks * mask_len);
            for r in 0..frames {
                let row = out.row(r);
                prop_assert!(row.iter().all(|&v| v == 0.0) || row == m.row(r));
            }
        }
    }
}
