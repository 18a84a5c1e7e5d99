//! Multi-level causality detection for single sentences.
//!
//! A sentence is split around its discourse marker (the AltLex) into the
//! segment before it (BL), the marker itself (L) and the segment after it
//! (AL). Two encoders read the sentence:
//!
//! - a word-level Transformer encoder over word + position + segment
//!   embeddings, pooled into `h_w`;
//! - a segment-level relation network that turns BL/L/AL into objects with
//!   a multi-window CNN, reads sentence context with a bi-GRU, and reasons
//!   over four ordered object pairs to produce `h_s`.
//!
//! `h_w ∥ h_s` feeds a small classifier trained with focal loss.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, configuration
//! documents and the command-line tool live in the `mcdn` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod text;
pub mod train;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use loss::{focal_loss, LossConfig};
pub use metrics::{auprc, auroc, MetricsReport};
pub use model::{Mcdn, ModelConfig, PoolingKind, PositionKind};
pub use params::{ParamId, ParamStore};
pub use rng::Rng;
pub use tensor::Tensor;
pub use train::{evaluate, train, EpochLog, PlateauSchedule, TrainConfig};
