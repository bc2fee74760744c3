use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturizerKind {
    #[default]
    RawCnn,
    SpectrogramMlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturizerConfig {
    pub kind: FeaturizerKind,
    pub in_channels: usize,
    pub cnn_channels: Vec<usize>,
    pub cnn_kernels: Vec<usize>,
    pub cnn_strides: Vec<usize>,
    pub instance_norm_after_first: bool,
    /// Spectrogram ablation: FFT length; hop equals the total CNN stride.
    pub fft_size: usize,
    pub mlp_dims: Vec<usize>,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig {
            kind: FeaturizerKind::RawCnn,
            in_channels: 32,
            cnn_channels: vec![128, 64, 64],
            cnn_kernels: vec![11, 3, 3],
            cnn_strides: vec![5, 2, 2],
            instance_norm_after_first: true,
            fft_size: 64,
            mlp_dims: vec![256],
        }
    }
}

/// Raw samples per output frame: 2 kHz in, 100 Hz out.
pub const DOWNSAMPLE: usize = 20;

impl FeaturizerConfig {
    pub fn downsample(&self) -> usize {
        self.cnn_strides.iter().product()
    }

    pub fn out_dim(&self) -> usize {
        match self.kind {
            FeaturizerKind::RawCnn => *self.cnn_channels.last().unwrap_or(&self.in_channels),
            FeaturizerKind::SpectrogramMlp => {
                *self.mlp_dims.last().unwrap_or(&(self.in_channels * (self.fft_size / 2 + 1)))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let n = self.cnn_channels.len();
        if n == 0 || self.cnn_kernels.len() != n || self.cnn_strides.len() != n {
            return bad("featurizer channel/kernel/stride lists must be non-empty and of equal length".into());
        }
        if self.in_channels == 0 || self.cnn_channels.contains(&0) {
            return bad("featurizer channel counts must be positive".into());
        }
        for (k, s) in self.cnn_kernels.iter().zip(&self.cnn_strides) {
            if *s == 0 || k < s {
                return bad(format!("featurizer kernel {k} must be ≥ stride {s} > 0"));
            }
        }
        if self.downsample() != DOWNSAMPLE {
            return bad(format!(
                "product of featurizer strides is {}, expected {DOWNSAMPLE} (2000 Hz → 100 Hz)",
                self.downsample()
            ));
        }
        if self.kind == FeaturizerKind::SpectrogramMlp && self.fft_size < 2 {
            return bad("fft_size must be at least 2".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub name: Option<String>,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub ff_ratio: usize,
    pub num_heads: usize,
    /// Residual-branch dropout.
    pub hidden_dropout: f32,
    pub attention_dropout: f32,
    pub activation_dropout: f32,
    pub feat_proj_dropout: f32,
    pub final_dropout: f32,
    pub vocab_size: usize,
    pub causal: bool,
    pub pos_conv_kernel: usize,
    pub pos_conv_groups: usize,
    pub featurizer: FeaturizerConfig,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            name: None,
            hidden_size: 256,
            num_layers: 6,
            ff_ratio: 4,
            num_heads: 16,
            hidden_dropout: 0.2,
            attention_dropout: 0.2,
            activation_dropout: 0.2,
            feat_proj_dropout: 0.2,
            final_dropout: 0.2,
            vocab_size: 99,
            causal: true,
            pos_conv_kernel: 128,
            pos_conv_groups: 16,
            featurizer: FeaturizerConfig::default(),
        }
    }
}

impl ArchConfig {
    pub fn new(hidden_size: usize, num_layers: usize) -> Self {
        ArchConfig {
            hidden_size,
            num_layers,
            name: canonical_name(hidden_size, num_layers).map(str::to_string),
            ..Default::default()
        }
    }

    /// Desk-scale model for synthetic experiments.
    pub fn micro(hidden_size: usize, num_layers: usize, vocab_size: usize) -> Self {
        ArchConfig {
            name: Some(format!("micro-d{hidden_size}-l{num_layers}")),
            hidden_size,
            num_layers,
            num_heads: 4,
            vocab_size,
            ..Default::default()
        }
    }

    pub fn ff_dim(&self) -> usize {
        self.ff_ratio * self.hidden_size
    }

    /// Same architecture with every dropout set to zero.
    pub fn frozen(&self) -> Self {
        ArchConfig {
            hidden_dropout: 0.0,
            attention_dropout: 0.0,
            activation_dropout: 0.0,
            feat_proj_dropout: 0.0,
            final_dropout: 0.0,
            ..self.clone()
        }
    }

    pub fn label(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| format!("d{}-l{}", self.hidden_size, self.num_layers))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.hidden_size == 0 || self.num_heads == 0 || self.hidden_size % self.num_heads != 0 {
            return bad(format!(
                "hidden_size {} must be a positive multiple of num_heads {}",
                self.hidden_size, self.num_heads
            ));
        }
        if self.ff_ratio == 0 {
            return bad("ff_ratio must be positive".into());
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must be at least 2".into());
        }
        if self.pos_conv_kernel == 0
            || self.pos_conv_groups == 0
            || self.hidden_size % self.pos_conv_groups != 0
        {
            return bad(format!(
                "hidden_size {} must be divisible by pos_conv_groups {}",
                self.hidden_size, self.pos_conv_groups
            ));
        }
        for (name, p) in [
            ("hidden_dropout", self.hidden_dropout),
            ("attention_dropout", self.attention_dropout),
            ("activation_dropout", self.activation_dropout),
            ("feat_proj_dropout", self.feat_proj_dropout),
            ("final_dropout", self.final_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} = {p} must lie in [0, 1)"));
            }
        }
        self.featurizer.validate()
    }
}

pub const GRID_HIDDEN: [usize; 4] = [128, 256, 512, 1024];
pub const GRID_LAYERS: [usize; 5] = [2, 4, 6, 8, 10];

pub fn canonical_name(hidden_size: usize, num_layers: usize) -> Option<&'static str> {
    match (hidden_size, num_layers) {
        (128, 10) => Some("Tiny"),
        (256, 6) => Some("Small"),
        (1024, 8) => Some("Large"),
        _ => None,
    }
}

/// The 4 × 5 width/depth grid, width-major.
pub fn arch_grid() -> Vec<ArchConfig> {
    GRID_HIDDEN
        .iter()
        .flat_map(|&d| GRID_LAYERS.iter().map(move |&l| ArchConfig::new(d, l)))
        .collect()
}
