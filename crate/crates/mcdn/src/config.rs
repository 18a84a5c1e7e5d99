//! Effective run configuration: defaults, then a flat JSON file, then
//! command-line overrides.

use std::fs;
use std::path::Path;

use mcdn_core::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl RunConfig {
    /// The configuration as one flat JSON object.
    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Replaces one key, type-checking the value against the field.
    pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
        let Value::Object(mut map) = self.to_json() else {
            unreachable!("config serializes to an object")
        };
        match map.get_mut(key) {
            Some(slot) => *slot = value,
            None => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        *self = serde_json::from_value(Value::Object(map))
            .map_err(|e| Error::Config(format!("bad value for {key:?}: {e}")))?;
        Ok(())
    }

    /// Applies every key of a flat JSON object, in order.
    pub fn merge(&mut self, doc: Map<String, Value>) -> Result<()> {
        for (k, v) in doc {
            self.set(&k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

pub fn parse_config(text: &str) -> Result<Map<String, Value>> {
    if text.trim().is_empty() {
        return Ok(Map::new());
    }
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Error::Config("config file must hold a JSON object".into())),
        Err(e) => Err(Error::Config(format!("config file is not valid JSON: {e}"))),
    }
}

/// Defaults, overlaid with `path` when given, then with `overrides`.
pub fn load_config(path: Option<&Path>, overrides: &[(&str, Value)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        cfg.merge(parse_config(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", p.display())),
            other => other,
        })?)?;
    }
    for (k, v) in overrides {
        cfg.set(k, v.clone())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.train.lr, 1e-4);
        assert_eq!(c.train.batch, 32);
        assert_eq!(c.model.n_blocks, 4);
        assert_eq!(c.model.heads, 4);
        assert_eq!(c.model.k, 150);
        assert_eq!(c.model.dg, 64);
        assert_eq!(c.model.dropout, 0.5);
        assert_eq!(c.model.loss.l2, 3e-4);
        assert_eq!(c.model.loss.alpha, 0.75);
        assert_eq!(c.model.loss.beta, 4.0);
    }

    #[test]
    fn flat_keys() {
        let mut c = RunConfig::default();
        c.set("alpha", json!(0.6)).unwrap();
        c.set("n_blocks", json!(2)).unwrap();
        c.set("pooling", json!("max")).unwrap();
        assert_eq!(c.model.loss.alpha, 0.6);
        assert_eq!(c.model.n_blocks, 2);
        assert_eq!(c.model.pooling, mcdn_core::PoolingKind::Max);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::default().set("bogus", json!(1)).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn wrong_type_is_rejected() {
        let mut c = RunConfig::default();
        assert!(c.set("batch", json!("eight")).is_err());
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.set("d", json!(32)).unwrap();
        let back: RunConfig = serde_json::from_value(c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn empty_document() {
        assert!(parse_config("  \n").unwrap().is_empty());
        assert!(parse_config("[1]").is_err());
    }
}
