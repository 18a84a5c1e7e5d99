//! Binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! "MCDN"  u32 version
//! u32 len, flat run-configuration JSON
//! u32 count, then count × (u32 len, UTF-8 token)
//! u32 count, then count × (u32 len, name, u32 rank, rank × u32 extent, f32 values)
//! ```

use std::fs;
use std::path::Path;

use mcdn_core::text::Vocabulary;
use mcdn_core::{Mcdn, ParamStore, Tensor, TrainConfig};

use crate::config::RunConfig;
use crate::error::{CheckpointError, Error, Result};

pub const MAGIC: &[u8; 4] = b"MCDN";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("checkpoint field exceeds u32");
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len());
    out.extend_from_slice(b);
}

/// Serializes `model` and the training settings that produced it;
/// parameters are stored as `f32`.
pub fn to_bytes(model: &Mcdn, train: &TrainConfig) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let run = RunConfig {
        model: model.config.clone(),
        train: train.clone(),
    };
    let config = serde_json::to_vec(&run).expect("config serializes");
    put_bytes(&mut out, &config);
    let tokens = model.vocab.tokens();
    put_u32(&mut out, tokens.len());
    for t in tokens {
        put_bytes(&mut out, t.as_bytes());
    }
    put_u32(&mut out, model.params.len());
    for p in model.params.iter() {
        put_bytes(&mut out, p.name.as_bytes());
        put_u32(&mut out, p.tensor.rank());
        for &e in p.tensor.shape() {
            put_u32(&mut out, e);
        }
        for &v in p.tensor.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated { offset: self.buf.len(), what });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("four bytes")))
    }

    fn len(&mut self, what: &'static str) -> Result<usize, CheckpointError> {
        Ok(self.u32(what)? as usize)
    }

    fn bytes(&mut self, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let n = self.len(what)?;
        self.take(n, what)
    }

    fn string(&mut self, what: &'static str) -> Result<String, CheckpointError> {
        let b = self.bytes(what)?;
        String::from_utf8(b.to_vec()).map_err(|e| CheckpointError::Invalid {
            what,
            detail: e.to_string(),
        })
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<(Mcdn, TrainConfig), CheckpointError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let run: RunConfig = serde_json::from_slice(r.bytes("config")?).map_err(|e| CheckpointError::Invalid {
        what: "config",
        detail: e.to_string(),
    })?;
    let n_tokens = r.len("vocabulary size")?;
    let tokens = (0..n_tokens)
        .map(|_| r.string("vocabulary token"))
        .collect::<Result<Vec<_>, _>>()?;
    let vocab = Vocabulary::from_tokens(tokens.iter().cloned());
    if vocab.tokens() != tokens.as_slice() {
        return Err(CheckpointError::Invalid {
            what: "vocabulary",
            detail: "reserved tokens out of place or repeated".into(),
        });
    }

    let n_params = r.len("parameter count")?;
    let mut store = ParamStore::new();
    for _ in 0..n_params {
        let name = r.string("parameter name")?;
        let rank = r.len("parameter rank")?;
        let shape = (0..rank).map(|_| r.len("parameter extent")).collect::<Result<Vec<_>, _>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let numel = numel
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| CheckpointError::Invalid {
                what: "parameter extent",
                detail: format!("{name} has shape {shape:?}"),
            })?;
        let raw = r.take(numel, "parameter values")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64)
            .collect();
        let tensor = Tensor::new(&shape, data).map_err(|e| CheckpointError::Invalid {
            what: "parameter extent",
            detail: format!("{name}: {e}"),
        })?;
        store.add(name, tensor);
    }
    if r.pos != buf.len() {
        return Err(CheckpointError::TrailingBytes(buf.len() - r.pos));
    }
    let model = Mcdn::from_store(run.model, vocab, &store).map_err(CheckpointError::Model)?;
    Ok((model, run.train))
}

pub fn save(model: &Mcdn, train: &TrainConfig, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model, train)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Mcdn, TrainConfig)> {
    let buf = fs::read(path).map_err(|e| Error::Checkpoint {
        path: path.to_owned(),
        source: CheckpointError::Invalid {
            what: "file",
            detail: e.to_string(),
        },
    })?;
    from_bytes(&buf).map_err(|source| Error::Checkpoint {
        path: path.to_owned(),
        source,
    })
}
