//! Surface-EMG to text decoding.
//!
//! A raw-signal convolutional featurizer feeds a causal transformer encoder
//! and a linear CTC head. Training covers supervised CTC, logit distillation
//! from a frozen teacher and per-user fine-tuning; evaluation is greedy CTC
//! decoding scored by character error rate.
//!
//! Module map:
//! - [`data`]: session container, windowing, split manifests, synthetic corpus
//! - [`augment`]: band-wise channel rotation and time masking
//! - [`model`]: featurizer, encoder, decoder, checkpoints, architecture grid
//! - [`loss`]: CTC, temperature-scaled distillation, and their weighted mix
//! - [`eval`]: greedy decoding, CER, corpus evaluation, Pareto fronts
//! - [`train`]: schedules, optimizer, and the three training modes
//! - [`bench`]: inference timing and naive streaming inference
//! - [`config`]: experiment configuration documents

pub mod augment;
pub mod bench;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Mat;

/// CTC blank token id.
pub const BLANK: u32 = 0;

/// Electrodes per wristband.
pub const BAND_SIZE: usize = 16;

/// Mixes a base seed with a stream tag (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
