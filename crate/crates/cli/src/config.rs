//! Run configuration: a flat JSON document whose values command-line flags
//! override.

use std::path::{Path, PathBuf};

use hlrp_core::eval::{SyntheticConfig, DEFAULT_KS};
use hlrp_core::features::DEFAULT_NUM_SEGMENTS;
use hlrp_core::predictor::{PredictorKind, TrainConfig, TrainingMode};
use hlrp_core::AggregatorKind;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SEED_ENV: &str = "HLRP_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("{SEED_ENV}={0:?} is not an unsigned integer")]
    BadSeedEnv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub learning_rate: f64,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub aggregator: AggregatorKind,
    pub epochs: usize,
    pub negative_ratio: f64,
    /// `None` falls back to `HLRP_SEED`, then 0.
    pub seed: Option<u64>,
    pub test_fraction: f64,
    pub mlp_hidden: usize,
    pub mode: TrainingMode,
    pub predictor: PredictorKind,

    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,

    pub synthetic: SyntheticConfig,
    pub num_segments: usize,
    pub ks: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            embedding_dim: t.embedding_dim,
            hidden_dim: t.hidden_dim,
            layers: t.layers,
            aggregator: t.aggregator,
            epochs: t.epochs,
            negative_ratio: t.negative_ratio,
            seed: None,
            test_fraction: t.test_fraction,
            mlp_hidden: t.mlp_hidden,
            mode: t.mode,
            predictor: t.predictor,
            data: None,
            checkpoint: None,
            report: None,
            synthetic: SyntheticConfig::default(),
            num_segments: DEFAULT_NUM_SEGMENTS,
            ks: DEFAULT_KS.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Malformed {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, path)
    }

    /// Flag, then config file, then `HLRP_SEED`, then 0.
    pub fn resolve_seed(&self, flag: Option<u64>, env: Option<&str>) -> Result<u64, ConfigError> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(s);
        }
        match env {
            Some(v) => v.trim().parse().map_err(|_| ConfigError::BadSeedEnv(v.to_string())),
            None => Ok(0),
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            embedding_dim: self.embedding_dim,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
            aggregator: self.aggregator,
            epochs: self.epochs,
            negative_ratio: self.negative_ratio,
            seed,
            test_fraction: self.test_fraction,
            mlp_hidden: self.mlp_hidden,
            mode: self.mode,
            predictor: self.predictor,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_json(r#"{"epochs": 3, "epoch": 4}"#, Path::new("x.json")).unwrap_err();
        assert!(err.to_string().contains("epoch"));
        let nested = r#"{"synthetic": {"num_holders": 10, "bogus": 1}}"#;
        assert!(RunConfig::from_json(nested, Path::new("x.json")).is_err());
    }

    #[test]
    fn partial_documents_keep_defaults() {
        let cfg = RunConfig::from_json(r#"{"epochs": 3, "aggregator": "lstm"}"#, Path::new("x.json")).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.aggregator, AggregatorKind::Lstm);
        assert_eq!(cfg.ks, vec![50, 100, 200]);
        assert_eq!(cfg.learning_rate, 0.01);
    }

    #[test]
    fn seed_precedence() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.resolve_seed(None, None).unwrap(), 0);
        assert_eq!(cfg.resolve_seed(None, Some("9")).unwrap(), 9);
        assert!(cfg.resolve_seed(None, Some("x")).is_err());
        cfg.seed = Some(4);
        assert_eq!(cfg.resolve_seed(None, Some("9")).unwrap(), 4);
        assert_eq!(cfg.resolve_seed(Some(2), Some("9")).unwrap(), 2);
    }

    #[test]
    fn defaults_round_trip() {
        let text = serde_json::to_string_pretty(&RunConfig::default()).unwrap();
        assert_eq!(RunConfig::from_json(&text, Path::new("d.json")).unwrap(), RunConfig::default());
    }
}
