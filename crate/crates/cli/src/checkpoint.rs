//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//! `HLRP` | u32 version | u32 len + UTF-8 JSON metadata |
//! u32 param count | per param: u32 len + name, u32 rank, rank × u64 dims,
//! raw f64 payload.

use std::io::{Read, Write};
use std::path::Path;

use hlrp_core::features::{build_schema, Column, FeatureSchema, MinMaxScaler};
use hlrp_core::numeric::{Matrix, ParamStore};
use hlrp_core::predictor::{MlpPredictor, Preprocessing, TrainConfig, TrainedModel, W1, W2};
use hlrp_core::sage::{SageConfig, SageModel};
use hlrp_core::{Quarter, QuarterSnapshot};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"HLRP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("parameter {name}: stored shape {found:?} but the model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        found: Vec<u64>,
    },
    #[error("checkpoint parameter set does not match the model: {0}")]
    ParamSet(String),
    #[error("schema mismatch: checkpoint has {checkpoint} feature columns, data has {data}; unknown: {}", unknown.join(", "))]
    SchemaMismatch {
        checkpoint: usize,
        data: usize,
        unknown: Vec<String>,
    },
    #[error("checkpoint has trailing bytes after the last parameter")]
    TrailingBytes,
    #[error("malformed checkpoint metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Core(#[from] hlrp_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    config: TrainConfig,
    encoder: SageConfig,
    schema: Vec<Column>,
    holder_scaler: MinMaxScaler,
    fund_scaler: MinMaxScaler,
    fit_quarter: Quarter,
    test_auc: Option<f64>,
}

/// A trained model with the preprocessing it was fitted with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TrainedModel,
}

impl Checkpoint {
    pub fn new(model: TrainedModel) -> Result<Self> {
        if model.preprocessing.is_none() {
            return Err(CheckpointError::Metadata(
                "model has no fitted schema or scalers".into(),
            ));
        }
        Ok(Self { model })
    }

    pub fn preprocessing(&self) -> &Preprocessing {
        self.model.preprocessing.as_ref().expect("checked on construction")
    }

    /// Errors when `snapshot` carries attribute columns the checkpoint's
    /// schema does not know.
    pub fn check_schema(&self, snapshot: &QuarterSnapshot) -> Result<()> {
        let ours = &self.preprocessing().schema;
        let data = build_schema(&[snapshot])?;
        let unknown: Vec<String> = data
            .columns()
            .iter()
            .filter(|c| ours.column_index(&c.family, &c.value).is_err())
            .map(|c| format!("{}={}", c.family, c.value))
            .collect();
        if !unknown.is_empty() {
            return Err(CheckpointError::SchemaMismatch {
                checkpoint: ours.width(),
                data: data.width(),
                unknown,
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let prep = self.preprocessing();
        let meta = Metadata {
            config: self.model.config,
            encoder: self.model.encoder.config,
            schema: prep.schema.columns().to_vec(),
            holder_scaler: prep.holder_scaler.clone(),
            fund_scaler: prep.fund_scaler.clone(),
            fit_quarter: prep.fit_quarter,
            test_auc: self.model.test_auc,
        };
        let json = serde_json::to_vec(&meta).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_len(&mut out, json.len())?;
        out.extend_from_slice(&json);
        put_len(&mut out, self.model.params.len())?;
        for (name, value) in self.model.params.iter() {
            put_len(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(value.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(value.cols() as u64).to_le_bytes());
            for v in value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta: Metadata = serde_json::from_slice(r.take(meta_len, "metadata")?)
            .map_err(|e| CheckpointError::Metadata(e.to_string()))?;

        let encoder = SageModel::new(meta.encoder)?;
        let mut expected: Vec<(String, (usize, usize))> = encoder
            .layers
            .iter()
            .flat_map(|l| l.param_shapes())
            .collect();
        expected.push((W1.to_string(), (meta.config.mlp_hidden, 2 * meta.encoder.output_dim)));
        expected.push((W2.to_string(), (1, meta.config.mlp_hidden)));

        let count = r.u32("parameter count")? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u32("parameter name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
                .map_err(|e| CheckpointError::Metadata(format!("parameter name: {e}")))?
                .to_string();
            let rank = r.u32("parameter rank")? as usize;
            let dims: Vec<u64> = (0..rank).map(|_| r.u64("parameter dims")).collect::<Result<_>>()?;
            let shape = expected
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, s)| *s)
                .ok_or_else(|| CheckpointError::ParamSet(format!("unexpected parameter {name}")))?;
            if dims != [shape.0 as u64, shape.1 as u64] {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    expected: shape,
                    found: dims,
                });
            }
            let n = shape.0 * shape.1;
            let raw = r.take(n.checked_mul(8).ok_or(CheckpointError::Truncated("parameter data"))?, "parameter data")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.insert(name, Matrix::from_vec(shape.0, shape.1, data)?)?;
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes);
        }
        if params.len() != expected.len() {
            let missing: Vec<&str> = expected
                .iter()
                .map(|(n, _)| n.as_str())
                .filter(|n| !params.contains(n))
                .collect();
            return Err(CheckpointError::ParamSet(format!("missing {}", missing.join(", "))));
        }
        MlpPredictor::from_store(&params)?;

        let schema = FeatureSchema::from_columns(meta.schema);
        if meta.encoder.input_dim != schema.width()
            || meta.holder_scaler.width() != schema.width()
            || meta.fund_scaler.width() != schema.width()
        {
            return Err(CheckpointError::Metadata(
                "encoder input, scalers and schema disagree on feature width".into(),
            ));
        }
        Ok(Self {
            model: TrainedModel {
                encoder,
                params,
                config: meta.config,
                loss_curve: Vec::new(),
                test_auc: meta.test_auc,
                preprocessing: Some(Preprocessing {
                    schema,
                    holder_scaler: meta.holder_scaler,
                    fund_scaler: meta.fund_scaler,
                    fit_quarter: meta.fit_quarter,
                }),
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn put_len(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| CheckpointError::Metadata(format!("length {n} exceeds u32")))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated(what))?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated(what))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use hlrp_core::eval::synth::{generate_synthetic, SyntheticConfig};
    use hlrp_core::predictor::train_on_snapshot;

    use super::*;

    fn small_checkpoint() -> Checkpoint {
        let data = generate_synthetic(&SyntheticConfig {
            num_holders: 16,
            num_funds: 8,
            ..Default::default()
        })
        .unwrap();
        let config = TrainConfig {
            epochs: 2,
            embedding_dim: 4,
            hidden_dim: 4,
            mlp_hidden: 3,
            test_fraction: 0.2,
            ..Default::default()
        };
        Checkpoint::new(train_on_snapshot(&data.snapshot_t().unwrap(), &config).unwrap()).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = small_checkpoint();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        for (name, m) in ck.model.params.iter() {
            let other = back.model.params.value(name).unwrap();
            let a: Vec<u64> = m.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = other.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "{name}");
        }
    }

    #[test]
    fn corrupted_inputs_are_named_errors() {
        let bytes = small_checkpoint().to_bytes().unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic(_))));

        let mut bad = bytes.clone();
        bad[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(CheckpointError::VersionMismatch { found: 7, .. })
        ));

        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Truncated(_))
        ));

        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::TrailingBytes)));
    }

    #[test]
    fn extra_attribute_column_is_a_schema_mismatch() {
        let ck = small_checkpoint();
        let q = ck.preprocessing().fit_quarter;
        let mut p = hlrp_core::ingest::Position {
            quarter: q,
            holder_id: "H0000".into(),
            fund_id: "F000".into(),
            market_value: 1.0,
            category: "Equity".into(),
            strategy: "active".into(),
            issuer: "Issuer00".into(),
        };
        p.category = "Crypto".into();
        let snap = QuarterSnapshot::from_positions(q, vec![p]).unwrap();
        match ck.check_schema(&snap) {
            Err(CheckpointError::SchemaMismatch { unknown, .. }) => assert!(unknown.contains(&"category=Crypto".to_string())),
            other => panic!("expected schema mismatch, got {other:?}"),
        }
    }
}
