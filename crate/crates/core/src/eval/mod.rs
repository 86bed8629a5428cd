//! Temporal evaluation: metrics, ground truth, synthetic data and the
//! end-to-end harness.

pub mod experiment;
mod harness;
pub mod metrics;
pub mod synth;
mod truth;

pub use harness::{evaluate, EvalReport, FundHits, Recommender, SharedIds, Variant, DEFAULT_KS};
pub use metrics::{auc, hits_at_k};
pub use synth::{generate_synthetic, SyntheticConfig, SyntheticData};
pub use truth::{newly_added_split, GroundTruth};
