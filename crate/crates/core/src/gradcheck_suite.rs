//! Finite-difference check of the full joint loss on a small random graph.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{sample_negative_edges, BipartiteGraph, Edge};
use crate::numeric::{finite_difference_grad, max_relative_errors, Matrix, ParamStore, DEFAULT_EPSILON};
use crate::predictor::{joint_loss, joint_loss_backward, GraphFeatures, MlpPredictor};
use crate::sage::{AggregatorKind, SageConfig, SageModel};
use crate::seed;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckSetup {
    pub num_holders: usize,
    pub num_funds: usize,
    pub feature_dim: usize,
    pub layers: usize,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub mlp_hidden: usize,
    pub edge_prob: f64,
}

impl Default for GradcheckSetup {
    fn default() -> Self {
        Self {
            num_holders: 12,
            num_funds: 6,
            feature_dim: 8,
            layers: 2,
            hidden_dim: 16,
            embedding_dim: 16,
            mlp_hidden: 16,
            edge_prob: 0.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckResult {
    pub kind: AggregatorKind,
    pub seed: u64,
    pub loss: f64,
    /// Max relative error per parameter.
    pub errors: BTreeMap<String, f64>,
}

impl GradcheckResult {
    pub fn max_error(&self) -> f64 {
        self.errors.values().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.errors.values().all(|&e| e < tolerance)
    }
}

fn random_graph(setup: &GradcheckSetup, rng: &mut ChaCha8Rng) -> Result<BipartiteGraph> {
    let (m, n) = (setup.num_holders, setup.num_funds);
    let mut edges: Vec<Edge> = Vec::new();
    for h in 0..m {
        for f in 0..n {
            if rng.gen::<f64>() < setup.edge_prob {
                edges.push((h, f));
            }
        }
    }
    // Keep every node connected and the graph incomplete.
    for h in 0..m {
        if !edges.iter().any(|e| e.0 == h) {
            edges.push((h, rng.gen_range(0..n)));
        }
    }
    for f in 0..n {
        if !edges.iter().any(|e| e.1 == f) {
            edges.push((rng.gen_range(0..m), f));
        }
    }
    let mut graph = BipartiteGraph::build(m, n, &edges)?;
    if graph.is_complete() {
        edges.retain(|&e| e != (0, 0));
        graph = BipartiteGraph::build(m, n, &edges)?;
    }
    Ok(graph)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen::<f64>()).collect())
}

/// Compares the analytic gradient of the joint loss with central
/// differences for every encoder and scorer parameter.
pub fn joint_gradcheck(kind: AggregatorKind, seed_value: u64, setup: &GradcheckSetup) -> Result<GradcheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_value, 0x4752_4144, kind as u64));
    let graph = random_graph(setup, &mut rng)?;
    let holders = random_matrix(setup.num_holders, setup.feature_dim, &mut rng)?;
    let funds = random_matrix(setup.num_funds, setup.feature_dim, &mut rng)?;
    let features = GraphFeatures {
        graph: &graph,
        holders: &holders,
        funds: &funds,
    };
    let model = SageModel::new(SageConfig {
        kind,
        input_dim: setup.feature_dim,
        hidden_dim: setup.hidden_dim,
        output_dim: setup.embedding_dim,
        num_layers: setup.layers,
    })?;
    let mut params = ParamStore::new();
    model.init_params(&mut params, seed_value)?;
    MlpPredictor::init_params(&mut params, setup.embedding_dim, setup.mlp_hidden, seed_value)?;
    // Non-zero biases so their gradients are exercised away from zero.
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names.iter().filter(|n| n.ends_with("pool_b") || n.contains("lstm_b_")) {
        let (r, c) = params.value(name)?.shape();
        let m = Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-0.5..0.5)).collect())?;
        params.set_value(name, m)?;
    }

    let positives = graph.edges().to_vec();
    let negatives: Vec<Edge> = sample_negative_edges(&graph, 1.0, seed_value)?
        .into_iter()
        .map(|e| (e.holder, e.fund))
        .collect();
    let perm_seed = seed::derive(seed_value, 0x5045_524d, 0);

    params.zero_grads();
    let loss = joint_loss_backward(&model, &mut params, features, &positives, &negatives, perm_seed)?;
    let numeric = finite_difference_grad(
        |p: &ParamStore| joint_loss(&model, p, features, &positives, &negatives, perm_seed),
        &params,
        DEFAULT_EPSILON,
    )?;
    Ok(GradcheckResult {
        kind,
        seed: seed_value,
        loss,
        errors: max_relative_errors(&params, &numeric)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gcn_gradients_match_finite_differences() {
        let r = joint_gradcheck(AggregatorKind::Gcn, 1, &GradcheckSetup::default()).unwrap();
        assert!(r.passed(GRADCHECK_TOLERANCE), "{:?}", r.errors);
        assert!(r.errors.contains_key("mlp.w1") && r.errors.contains_key("sage.0.w"));
    }
}
