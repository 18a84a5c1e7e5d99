//! File formats, checkpoints, configuration and the command-line front end
//! around [`mcdn_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod synthetic;

pub use error::{Error, Result};
