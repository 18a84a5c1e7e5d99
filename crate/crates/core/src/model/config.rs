use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionKind {
    Learned,
    Sinusoidal,
}

/// How token outputs of the word-level encoder become `h_w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingKind {
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Shared width of word, position and segment embeddings.
    pub d: usize,
    /// Transformer blocks.
    pub n_blocks: usize,
    pub heads: usize,
    /// Feed-forward width as a multiple of `d`.
    pub ff_mult: usize,
    /// Total convolution channels, split over `windows`.
    pub k: usize,
    pub windows: Vec<usize>,
    /// GRU units per direction.
    pub dg: usize,
    pub gru_layers: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub ln_eps: f64,
    pub positions: PositionKind,
    pub pooling: PoolingKind,
    /// Keep pretrained word vectors fixed (the OOV row still trains).
    pub freeze_embeddings: bool,
    #[serde(flatten)]
    pub loss: LossConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 128,
            n_blocks: 4,
            heads: 4,
            ff_mult: 4,
            k: 150,
            windows: vec![2, 3, 4],
            dg: 64,
            gru_layers: 2,
            dropout: 0.5,
            max_len: 128,
            ln_eps: 1e-6,
            positions: PositionKind::Learned,
            pooling: PoolingKind::Mean,
            freeze_embeddings: false,
            loss: LossConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn d_ff(&self) -> usize {
        self.ff_mult * self.d
    }

    /// Channels per window, in window order; any remainder goes to the
    /// first windows.
    pub fn window_channels(&self) -> Vec<usize> {
        let nw = self.windows.len();
        (0..nw)
            .map(|i| self.k / nw + usize::from(i < self.k % nw))
            .collect()
    }

    pub fn max_window(&self) -> usize {
        self.windows.iter().copied().max().unwrap_or(1)
    }

    /// Width of one object-pair row, `2k + 2d_g`.
    pub fn pair_width(&self) -> usize {
        2 * self.k + 2 * self.dg
    }

    /// Width of the relational output `h_s`, `4d_g`.
    pub fn relation_width(&self) -> usize {
        4 * self.dg
    }

    /// Width of the fused representation `h_u`, `d + 4d_g`.
    pub fn fused_width(&self) -> usize {
        self.d + self.relation_width()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::Config(msg));
        let positive = [
            ("d", self.d),
            ("n_blocks", self.n_blocks),
            ("heads", self.heads),
            ("ff_mult", self.ff_mult),
            ("k", self.k),
            ("dg", self.dg),
            ("gru_layers", self.gru_layers),
            ("max_len", self.max_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.d % self.heads != 0 {
            return bad(format!("heads ({}) must divide d ({})", self.heads, self.d));
        }
        if self.windows.is_empty() || self.windows.contains(&0) {
            return bad(format!("windows must be positive, got {:?}", self.windows));
        }
        if self.k < self.windows.len() {
            return bad(format!("k ({}) is smaller than the number of windows", self.k));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.ln_eps > 0.0) {
            return bad(format!("ln_eps must be positive, got {}", self.ln_eps));
        }
        let l = &self.loss;
        if !(l.alpha > 0.0 && l.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", l.alpha));
        }
        if !(l.beta >= 0.0) || !(l.l2 >= 0.0) {
            return bad(format!("beta and l2 must be non-negative, got {} and {}", l.beta, l.l2));
        }
        Ok(())
    }
}
