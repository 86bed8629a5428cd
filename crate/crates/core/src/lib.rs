//! Holder–fund link prediction: a bipartite graph, GraphSAGE encoder and
//! MLP edge scorer trained from scratch, plus a cosine baseline and a
//! temporal Hits@K evaluation harness.

pub mod baseline;
pub mod error;
pub mod eval;
pub mod features;
pub mod gradcheck_suite;
pub mod graph;
pub mod ingest;
pub mod numeric;
pub mod predictor;
pub mod sage;
pub mod seed;

pub use error::{Error, Result};
pub use graph::{BipartiteGraph, Edge, NodeKind, NodeRef};
pub use ingest::{Quarter, QuarterSnapshot};
pub use predictor::{TrainConfig, TrainedModel};
pub use sage::{AggregatorKind, SageModel};
