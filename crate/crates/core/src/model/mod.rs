//! Featurizer → causal transformer encoder → linear decoder.
//!
//! ```text
//! signal [T × 32]
//!   → featurizer (3 strided convs, running instance norm after the first)  [T/20 × 64]
//!   → feature projection, time masks, dropout                              [F × d]
//!   → h + GELU(causal grouped conv)          (convolutional positions)
//!   → L × pre-norm block { causal MHA, GELU feed-forward }
//!   → final LayerNorm → dropout → decoder                                   [F × vocab]
//! ```

pub mod checkpoint;
pub mod config;
pub mod featurizer;
pub mod layers;
pub mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, Provenance};
pub use config::{arch_grid, canonical_name, ArchConfig, FeaturizerConfig, FeaturizerKind, DOWNSAMPLE};
pub use params::{Grads, Param, ParamStore};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::apply_time_masks;
use crate::error::{Error, Result};
use crate::tensor::Mat;
use featurizer::{Featurizer, FeaturizerTape};
use layers::{
    dropout, dropout_backward, gelu, gelu_backward, Attention, AttentionCache, Conv1d, DropMask, LayerNorm,
    LayerNormCache, Linear,
};

#[derive(Clone, Debug)]
struct Block {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
}

struct BlockTape {
    ln1: LayerNormCache,
    attn: AttentionCache,
    drop_attn: DropMask,
    ln2: LayerNormCache,
    ln2_out: Mat,
    ff_pre: Mat,
    ff_act: Mat,
    drop_act: DropMask,
    drop_ff: DropMask,
}

#[derive(Clone, Debug)]
struct Network {
    featurizer: Featurizer,
    feat_proj: Linear,
    pos_conv: Conv1d,
    blocks: Vec<Block>,
    final_ln: LayerNorm,
    decoder: Linear,
}

impl Network {
    fn new(cfg: &ArchConfig, ps: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.hidden_size;
        let featurizer = Featurizer::new(&cfg.featurizer, ps, rng);
        let feat_proj = Linear::new(ps, "feature_projection", cfg.featurizer.out_dim(), d, rng);
        let pos_conv = Conv1d::new(
            ps,
            "pos_conv",
            d,
            d,
            cfg.pos_conv_kernel,
            1,
            cfg.pos_conv_kernel - 1,
            cfg.pos_conv_groups,
            rng,
        );
        let blocks = (0..cfg.num_layers)
            .map(|i| {
                let p = format!("encoder.layers.{i}");
                Block {
                    ln1: LayerNorm::new(ps, &format!("{p}.ln1"), d, rng),
                    attn: Attention::new(ps, &format!("{p}.attn"), d, cfg.num_heads, cfg.causal, rng),
                    ln2: LayerNorm::new(ps, &format!("{p}.ln2"), d, rng),
                    ff_in: Linear::new(ps, &format!("{p}.ff_in"), d, cfg.ff_dim(), rng),
                    ff_out: Linear::new(ps, &format!("{p}.ff_out"), cfg.ff_dim(), d, rng),
                }
            })
            .collect();
        let final_ln = LayerNorm::new(ps, "encoder.final_ln", d, rng);
        let decoder = Linear::new(ps, "decoder", d, cfg.vocab_size, rng);
        Network { featurizer, feat_proj, pos_conv, blocks, final_ln, decoder }
    }
}

/// Everything a backward pass needs from one training forward.
pub struct Tape {
    feat: FeaturizerTape,
    feat_out: Mat,
    masks: Vec<(usize, usize)>,
    drop_feat: DropMask,
    pos_in: Mat,
    pos_pre: Mat,
    drop_pos: DropMask,
    blocks: Vec<BlockTape>,
    final_ln: LayerNormCache,
    drop_final: DropMask,
    dec_in: Mat,
}

/// Per-forward training options.
#[derive(Clone, Debug, Default)]
pub struct TrainForward<'a> {
    /// Frame spans zeroed after the feature projection.
    pub masks: &'a [(usize, usize)],
    /// Seed for dropout masks; `None` disables dropout.
    pub dropout_seed: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ArchConfig,
    pub seed: u64,
    pub params: ParamStore,
    net: Network,
}

/// Builds a freshly initialized model.
///
/// Initialization is a pure function of `(cfg, seed)`: weights ~ N(0, 1/fan_in),
/// biases 0, norm scales 1 and shifts 0, drawn in parameter registration order.
pub fn build_model(cfg: &ArchConfig, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::default();
    let net = Network::new(cfg, &mut params, &mut rng);
    Ok(Model { cfg: cfg.clone(), seed, params, net })
}

/// Exact number of trainable scalars.
pub fn count_params(model: &Model) -> usize {
    model.params.num_scalars()
}

impl Model {
    /// Reassembles a model from stored parameters, checking names and shapes.
    pub fn from_params(cfg: &ArchConfig, seed: u64, stored: Vec<Param>) -> Result<Model> {
        let mut model = build_model(cfg, seed)?;
        if stored.len() != model.params.entries.len() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "{} tensors stored, architecture has {}",
                stored.len(),
                model.params.entries.len()
            )));
        }
        for (want, got) in model.params.entries.iter_mut().zip(stored) {
            if want.name != got.name || want.shape != got.shape {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "tensor {} {:?} does not match stored {} {:?}",
                    want.name, want.shape, got.name, got.shape
                )));
            }
            want.data = got.data;
        }
        Ok(model)
    }

    pub fn num_frames(&self, samples: usize) -> usize {
        self.net.featurizer.num_frames(samples)
    }

    fn check_input(&self, signal: &Mat) -> Result<()> {
        let fc = &self.cfg.featurizer;
        if signal.cols != fc.in_channels {
            return Err(Error::Shape(format!(
                "signal has {} channels, model expects {}",
                signal.cols, fc.in_channels
            )));
        }
        if self.num_frames(signal.rows) == 0 {
            return Err(Error::Shape(format!(
                "signal of {} samples is shorter than one frame ({} samples)",
                signal.rows,
                fc.downsample()
            )));
        }
        if !signal.is_finite() {
            return Err(Error::NonFinite("input signal contains NaN or infinity".into()));
        }
        Ok(())
    }

    /// Featurizer output after the projection to `hidden_size`, no masking or dropout.
    pub fn featurize(&self, signal: &Mat) -> Result<Mat> {
        self.check_input(signal)?;
        let (f, _) = self.net.featurizer.forward(&self.params, signal);
        Ok(self.net.feat_proj.forward(&self.params, &f))
    }

    /// Inference forward pass with dropout disabled: logits `[frames × vocab]`.
    pub fn forward(&self, signal: &Mat) -> Result<Mat> {
        self.check_input(signal)?;
        Ok(self.forward_train(signal, &TrainForward::default()).0)
    }

    /// Forward pass that records a [`Tape`] for [`Model::backward`].
    ///
    /// Input validation is the caller's job; see [`Model::forward`].
    pub fn forward_train(&self, signal: &Mat, opts: &TrainForward<'_>) -> (Mat, Tape) {
        let ps = &self.params;
        let cfg = &self.cfg;
        let mut rng = opts.dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let (feat_out, feat) = self.net.featurizer.forward(ps, signal);
        let mut h = self.net.feat_proj.forward(ps, &feat_out);
        apply_time_masks(&mut h, opts.masks);
        let drop_feat = dropout(&mut h, cfg.feat_proj_dropout, rng.as_mut());

        let pos_pre = self.net.pos_conv.forward(ps, &h);
        let pos_in = h;
        let mut h = gelu(&pos_pre);
        for (v, x) in h.data.iter_mut().zip(&pos_in.data) {
            *v += x;
        }
        let drop_pos = dropout(&mut h, cfg.hidden_dropout, rng.as_mut());

        let mut blocks = Vec::with_capacity(self.net.blocks.len());
        for b in &self.net.blocks {
            let (a, ln1) = b.ln1.forward(ps, &h);
            let (mut att, attn) = b.attn.forward(ps, &a, cfg.attention_dropout, rng.as_mut());
            let drop_attn = dropout(&mut att, cfg.hidden_dropout, rng.as_mut());
            let mut h1 = att;
            for (v, x) in h1.data.iter_mut().zip(&h.data) {
                *v += x;
            }
            let (ln2_out, ln2) = b.ln2.forward(ps, &h1);
            let ff_pre = b.ff_in.forward(ps, &ln2_out);
            let mut ff_act = gelu(&ff_pre);
            let drop_act = dropout(&mut ff_act, cfg.activation_dropout, rng.as_mut());
            let mut ff = b.ff_out.forward(ps, &ff_act);
            let drop_ff = dropout(&mut ff, cfg.hidden_dropout, rng.as_mut());
            for (v, x) in ff.data.iter_mut().zip(&h1.data) {
                *v += x;
            }
            h = ff;
            blocks.push(BlockTape { ln1, attn, drop_attn, ln2, ln2_out, ff_pre, ff_act, drop_act, drop_ff });
        }

        let (mut dec_in, final_ln) = self.net.final_ln.forward(ps, &h);
        let drop_final = dropout(&mut dec_in, cfg.final_dropout, rng.as_mut());
        let logits = self.net.decoder.forward(ps, &dec_in);
        let tape = Tape {
            feat,
            feat_out,
            masks: opts.masks.to_vec(),
            drop_feat,
            pos_in,
            pos_pre,
            drop_pos,
            blocks,
            final_ln,
            drop_final,
            dec_in,
        };
        (logits, tape)
    }

    /// Gradients of all parameters given `dlogits = ∂loss/∂logits`.
    pub fn backward(&self, tape: &Tape, dlogits: &Mat) -> Grads {
        let ps = &self.params;
        let mut grads = ps.zero_grads();
        let mut d = self.net.decoder.backward(ps, &tape.dec_in, dlogits, &mut grads);
        dropout_backward(&mut d, &tape.drop_final);
        let mut dh = self.net.final_ln.backward(ps, &tape.final_ln, &d, &mut grads);

        for (i, b) in self.net.blocks.iter().enumerate().rev() {
            let t = &tape.blocks[i];
            // feed-forward branch: dh flows to h1 directly and through ln2
            let mut dff = dh.clone();
            dropout_backward(&mut dff, &t.drop_ff);
            let mut dact = b.ff_out.backward(ps, &t.ff_act, &dff, &mut grads);
            dropout_backward(&mut dact, &t.drop_act);
            let dpre = gelu_backward(&t.ff_pre, &dact);
            let dln2 = b.ff_in.backward(ps, &t.ln2_out, &dpre, &mut grads);
            let dh1_branch = b.ln2.backward(ps, &t.ln2, &dln2, &mut grads);
            let mut dh1 = dh;
            for (v, x) in dh1.data.iter_mut().zip(&dh1_branch.data) {
                *v += x;
            }
            // attention branch
            let mut datt = dh1.clone();
            dropout_backward(&mut datt, &t.drop_attn);
            let da = b.attn.backward(ps, &t.attn, &datt, &mut grads);
            let dx_branch = b.ln1.backward(ps, &t.ln1, &da, &mut grads);
            for (v, x) in dh1.data.iter_mut().zip(&dx_branch.data) {
                *v += x;
            }
            dh = dh1;
        }

        dropout_backward(&mut dh, &tape.drop_pos);
        let dpos_pre = gelu_backward(&tape.pos_pre, &dh);
        let dpos_in = self
            .net
            .pos_conv
            .backward(ps, &tape.pos_in, &dpos_pre, &mut grads, true)
            .expect("dx requested");
        let mut dfeat = dh;
        for (v, x) in dfeat.data.iter_mut().zip(&dpos_in.data) {
            *v += x;
        }
        dropout_backward(&mut dfeat, &tape.drop_feat);
        apply_time_masks(&mut dfeat, &tape.masks);
        let dfeat_out = self.net.feat_proj.backward(ps, &tape.feat_out, &dfeat, &mut grads);
        self.net.featurizer.backward(ps, &tape.feat, dfeat_out, &mut grads);
        grads
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}
