//! Named run presets and file overrides.
//!
//! A config file (JSON, or TOML when the extension is `.toml`) mirrors
//! [`RunConfig`]; any subset of fields may be given and is merged over the
//! selected preset.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub const PRESETS: [&str; 7] = [
    "paper-main",
    "table1-base",
    "table3",
    "toy",
    "sweep-trial0",
    "sweep-trial1",
    "sweep-trial2",
];

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let train = match name {
            "paper-main" => TrainConfig::main_preset(),
            "table1-base" => TrainConfig::table1_base(),
            "table3" => TrainConfig::table3(),
            "toy" => TrainConfig::toy(),
            "sweep-trial0" => TrainConfig::sweep_trial(0).expect("trial exists"),
            "sweep-trial1" => TrainConfig::sweep_trial(1).expect("trial exists"),
            "sweep-trial2" => TrainConfig::sweep_trial(2).expect("trial exists"),
            _ => {
                return Err(Error::Config(format!(
                    "unknown preset `{name}` (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        let model = if name == "toy" {
            ModelConfig::toy()
        } else {
            ModelConfig::v3_base()
        };
        Ok(Self { model, train })
    }

    /// Merges `overrides` field by field over `self`.
    pub fn merged(&self, overrides: &Value) -> Result<Self> {
        let mut base = serde_json::to_value(self)?;
        merge(&mut base, overrides);
        let cfg: RunConfig = serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn from_file(preset: &str, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let overrides: Value = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        Self::preset(preset)?.merged(&overrides)
    }
}

fn merge(base: &mut Value, overrides: &Value) {
    match (base, overrides) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn presets_resolve() {
        for name in PRESETS {
            let cfg = RunConfig::preset(name).unwrap();
            cfg.train.validate().unwrap();
        }
        assert!(RunConfig::preset("nope").is_err());
        let main = RunConfig::preset("paper-main").unwrap().train;
        assert_eq!(
            (
                main.lr_encoder,
                main.lr_other,
                main.warmup_ratio,
                main.batch_size,
                main.epochs
            ),
            (2e-5, 1e-4, 0.1, 8, 120)
        );
    }

    #[test]
    fn partial_override() {
        let cfg = RunConfig::preset("toy")
            .unwrap()
            .merged(&json!({"train": {"epochs": 3}, "model": {"head": {"max_span": 4}}}))
            .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.model.head.max_span, 4);
        assert_eq!(cfg.train.batch_size, TrainConfig::toy().batch_size);
        assert!(RunConfig::preset("toy")
            .unwrap()
            .merged(&json!({"train": {"warmup_ratio": 1.5}}))
            .is_err());
    }

    #[test]
    fn toml_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nseed = 9\nkl_weight = 0.0\n").unwrap();
        let cfg = RunConfig::from_file("toy", &path).unwrap();
        assert_eq!((cfg.train.seed, cfg.train.kl_weight), (9, 0.0));
    }
}
