//! GraphSAGE encoder over the bipartite graph.
//!
//! Holders and funds share one set of layer weights. Each layer computes
//! `h_v = act(W · concat(h_v, agg_v))` (or `act(W · agg_v)` for the GCN
//! variant, whose aggregate already includes the node itself), with ReLU
//! between layers and identity after the last one. Neighbourhoods are used
//! in full.

use std::cmp::Reverse;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::numeric::{init_params, Matrix, ParamStore, Segments, Tape, Var};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    Mean,
    Pool,
    Gcn,
    Lstm,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 4] = [Self::Mean, Self::Pool, Self::Gcn, Self::Lstm];

    /// Whether the layer concatenates the node's own state with the aggregate.
    pub fn concatenates(self) -> bool {
        !matches!(self, Self::Gcn)
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::Pool => "pool",
            Self::Gcn => "gcn",
            Self::Lstm => "lstm",
        })
    }
}

impl FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(Self::Mean),
            "pool" => Ok(Self::Pool),
            "gcn" => Ok(Self::Gcn),
            "lstm" => Ok(Self::Lstm),
            other => Err(Error::InvalidArgument(format!("unknown aggregator {other:?}"))),
        }
    }
}

const LSTM_GATES: [&str; 4] = ["i", "f", "o", "g"];

/// Shape and parameter naming of one encoder layer. Values live in a
/// [`ParamStore`] under `sage.<layer>.*`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SageLayer {
    pub kind: AggregatorKind,
    pub index: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl SageLayer {
    fn name(&self, suffix: &str) -> String {
        format!("sage.{}.{}", self.index, suffix)
    }

    pub fn weight_name(&self) -> String {
        self.name("w")
    }

    pub fn weight_shape(&self) -> (usize, usize) {
        if self.kind.concatenates() {
            (self.out_dim, 2 * self.in_dim)
        } else {
            (self.out_dim, self.in_dim)
        }
    }

    /// Every parameter of the layer with its shape.
    pub fn param_shapes(&self) -> Vec<(String, (usize, usize))> {
        let d = self.in_dim;
        let mut out = vec![(self.weight_name(), self.weight_shape())];
        match self.kind {
            AggregatorKind::Pool => {
                out.push((self.name("pool_w"), (d, d)));
                out.push((self.name("pool_b"), (1, d)));
            }
            AggregatorKind::Lstm => {
                for g in LSTM_GATES {
                    out.push((self.name(&format!("lstm_w_{g}")), (d, d)));
                    out.push((self.name(&format!("lstm_u_{g}")), (d, d)));
                    out.push((self.name(&format!("lstm_b_{g}")), (1, d)));
                }
            }
            AggregatorKind::Mean | AggregatorKind::Gcn => {}
        }
        out
    }

    fn register(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        for (k, (name, (r, c))) in self.param_shapes().into_iter().enumerate() {
            let value = if r == 1 && name.contains("_b") {
                Matrix::zeros(r, c)
            } else {
                init_params(r, c, seed::derive(seed, self.index as u64, k as u64))
            };
            store.insert(name, value)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SageConfig {
    pub kind: AggregatorKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub num_layers: usize,
}

impl SageConfig {
    pub fn new(kind: AggregatorKind, input_dim: usize) -> Self {
        Self {
            kind,
            input_dim,
            hidden_dim: 128,
            output_dim: 128,
            num_layers: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SageModel {
    pub config: SageConfig,
    pub layers: Vec<SageLayer>,
}

impl SageModel {
    pub fn new(config: SageConfig) -> Result<Self> {
        if config.num_layers == 0 || config.input_dim == 0 || config.hidden_dim == 0 || config.output_dim == 0 {
            return Err(Error::InvalidArgument(format!("degenerate encoder config {config:?}")));
        }
        let layers = (0..config.num_layers)
            .map(|i| SageLayer {
                kind: config.kind,
                index: i,
                in_dim: if i == 0 { config.input_dim } else { config.hidden_dim },
                out_dim: if i + 1 == config.num_layers {
                    config.output_dim
                } else {
                    config.hidden_dim
                },
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// Adds freshly initialised layer parameters to `store`.
    pub fn init_params(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        for layer in &self.layers {
            layer.register(store, seed)?;
        }
        Ok(())
    }

    pub fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .flat_map(|l| l.param_shapes().into_iter().map(|(n, _)| n))
            .collect()
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }
}

/// How parameters enter the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamMode {
    Trainable,
    Frozen,
}

pub(crate) fn load(tape: &mut Tape, store: &ParamStore, name: &str, mode: ParamMode) -> Result<Var> {
    match mode {
        ParamMode::Trainable => tape.param(store, name),
        ParamMode::Frozen => tape.frozen(store, name),
    }
}

struct LstmVars {
    w: [Var; 4],
    u: [Var; 4],
    b: [Var; 4],
}

struct LayerVars {
    w: Var,
    pool: Option<(Var, Var)>,
    lstm: Option<LstmVars>,
}

impl LayerVars {
    fn load(tape: &mut Tape, layer: &SageLayer, store: &ParamStore, mode: ParamMode) -> Result<Self> {
        let w = load(tape, store, &layer.weight_name(), mode)?;
        let pool = match layer.kind {
            AggregatorKind::Pool => Some((
                load(tape, store, &layer.name("pool_w"), mode)?,
                load(tape, store, &layer.name("pool_b"), mode)?,
            )),
            _ => None,
        };
        let lstm = match layer.kind {
            AggregatorKind::Lstm => {
                let mut get = |prefix: &str| -> Result<[Var; 4]> {
                    let mut vars = Vec::with_capacity(4);
                    for g in LSTM_GATES {
                        vars.push(load(tape, store, &layer.name(&format!("{prefix}_{g}")), mode)?);
                    }
                    Ok([vars[0], vars[1], vars[2], vars[3]])
                };
                Some(LstmVars {
                    w: get("lstm_w")?,
                    u: get("lstm_u")?,
                    b: get("lstm_b")?,
                })
            }
            _ => None,
        };
        Ok(Self { w, pool, lstm })
    }
}

/// Neighbour lists over the stacked node set: holders first, then funds
/// offset by the holder count.
pub(crate) fn stacked_neighbors(graph: &BipartiteGraph) -> Vec<Vec<usize>> {
    let m = graph.num_holders();
    graph
        .holder_adj()
        .iter()
        .map(|fs| fs.iter().map(|&f| m + f).collect())
        .chain(graph.fund_adj().iter().cloned())
        .collect()
}

/// Shuffles each node's neighbour list with a seed keyed by the node's
/// position, independent of evaluation order.
fn permuted(lists: &[Vec<usize>], key_offset: usize, perm_seed: u64) -> Vec<Vec<usize>> {
    lists
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let mut l = l.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(perm_seed, 0x4c53_544d, (key_offset + i) as u64));
            l.shuffle(&mut rng);
            l
        })
        .collect()
}

fn gate(tape: &mut Tape, x: Var, h: Option<Var>, vars: &LstmVars, k: usize) -> Result<Var> {
    let mut pre = tape.matmul(x, vars.w[k])?;
    if let Some(h) = h {
        let rec = tape.matmul(h, vars.u[k])?;
        pre = tape.add(pre, rec)?;
    }
    tape.add_row(pre, vars.b[k])
}

/// Runs one LSTM cell over every sequence in lock-step and returns each
/// sequence's final hidden state (zero for empty sequences).
fn lstm_final_states(tape: &mut Tape, src: Var, seqs: &[Vec<usize>], vars: &LstmVars, dim: usize) -> Result<Var> {
    let n = seqs.len();
    let zero = tape.constant(Matrix::zeros(1, dim));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (Reverse(seqs[i].len()), i));
    let max_len = seqs.iter().map(Vec::len).max().unwrap_or(0);
    let mut final_row = vec![0usize; n];
    let mut parts = vec![zero];
    let mut offset = 1;
    let mut state: Option<(Var, Var)> = None;
    for t in 0..max_len {
        let active = order.iter().take_while(|&&i| seqs[i].len() > t).count();
        let x_rows: Vec<usize> = order[..active].iter().map(|&i| seqs[i][t]).collect();
        let x = tape.gather_rows(src, &x_rows)?;
        let prev = match state {
            Some((h, c)) => {
                let keep: Vec<usize> = (0..active).collect();
                Some((tape.gather_rows(h, &keep)?, tape.gather_rows(c, &keep)?))
            }
            None => None,
        };
        let h_prev = prev.map(|p| p.0);
        let i_pre = gate(tape, x, h_prev, vars, 0)?;
        let f_pre = gate(tape, x, h_prev, vars, 1)?;
        let o_pre = gate(tape, x, h_prev, vars, 2)?;
        let g_pre = gate(tape, x, h_prev, vars, 3)?;
        let i = tape.sigmoid(i_pre)?;
        let o = tape.sigmoid(o_pre)?;
        let g = tape.tanh(g_pre)?;
        let mut c = tape.mul(i, g)?;
        if let Some((_, c_prev)) = prev {
            let f = tape.sigmoid(f_pre)?;
            let carried = tape.mul(f, c_prev)?;
            c = tape.add(c, carried)?;
        }
        let c_act = tape.tanh(c)?;
        let h = tape.mul(o, c_act)?;
        for (pos, &node) in order[..active].iter().enumerate() {
            if seqs[node].len() == t + 1 {
                final_row[node] = offset + pos;
            }
        }
        offset += active;
        parts.push(h);
        state = Some((h, c));
    }
    let all = tape.concat_rows(&parts)?;
    tape.gather_rows(all, &final_row)
}

/// Aggregates rows of `src` for each target `i`: over `neighbors[i]`, plus
/// `self_rows[i]` for the GCN variant.
fn aggregate_rows(
    tape: &mut Tape,
    kind: AggregatorKind,
    src: Var,
    self_rows: &[usize],
    neighbors: &[Vec<usize>],
    vars: &LayerVars,
    perm_seed: u64,
) -> Result<Var> {
    match kind {
        AggregatorKind::Mean => tape.segment_mean(src, &Segments::from_lists(neighbors)),
        AggregatorKind::Gcn => {
            let inclusive: Vec<Vec<usize>> = neighbors
                .iter()
                .zip(self_rows)
                .map(|(l, &s)| std::iter::once(s).chain(l.iter().copied()).collect())
                .collect();
            tape.segment_mean(src, &Segments::from_lists(&inclusive))
        }
        AggregatorKind::Pool => {
            let (pw, pb) = vars.pool.as_ref().expect("pool vars loaded for pool layers");
            let lin = tape.matmul(src, *pw)?;
            let lin = tape.add_row(lin, *pb)?;
            let act = tape.sigmoid(lin)?;
            tape.segment_max(act, &Segments::from_lists(neighbors))
        }
        AggregatorKind::Lstm => {
            let lstm = vars.lstm.as_ref().expect("lstm vars loaded for lstm layers");
            let dim = tape.value(src)?.cols();
            let seqs = permuted(neighbors, self_rows.first().copied().unwrap_or(0), perm_seed);
            lstm_final_states(tape, src, &seqs, lstm, dim)
        }
    }
}

fn check_width(layer: &SageLayer, got: usize) -> Result<()> {
    if got != layer.in_dim {
        return Err(Error::ShapeMismatch {
            op: "sage_layer",
            left: (0, got),
            right: (0, layer.in_dim),
        });
    }
    Ok(())
}

/// Records the full encoder on `tape` and returns the stacked
/// `(holders + funds) x output_dim` embedding matrix.
pub fn encode_on_tape(
    tape: &mut Tape,
    graph: &BipartiteGraph,
    holder_features: &Matrix,
    fund_features: &Matrix,
    model: &SageModel,
    store: &ParamStore,
    perm_seed: u64,
    mode: ParamMode,
) -> Result<Var> {
    if holder_features.rows() != graph.num_holders() || fund_features.rows() != graph.num_funds() {
        return Err(Error::ShapeMismatch {
            op: "encode",
            left: (holder_features.rows(), fund_features.rows()),
            right: (graph.num_holders(), graph.num_funds()),
        });
    }
    if holder_features.cols() != fund_features.cols() {
        return Err(Error::ShapeMismatch {
            op: "encode",
            left: holder_features.shape(),
            right: fund_features.shape(),
        });
    }
    let neighbors = stacked_neighbors(graph);
    let self_rows: Vec<usize> = (0..neighbors.len()).collect();
    let hx = tape.constant(holder_features.clone());
    let fx = tape.constant(fund_features.clone());
    let mut h = tape.concat_rows(&[hx, fx])?;
    let last = model.layers.len() - 1;
    for (k, layer) in model.layers.iter().enumerate() {
        check_width(layer, tape.value(h)?.cols())?;
        let vars = LayerVars::load(tape, layer, store, mode)?;
        let layer_seed = seed::derive(perm_seed, 0x5341_4745, k as u64);
        let agg = aggregate_rows(tape, layer.kind, h, &self_rows, &neighbors, &vars, layer_seed)?;
        let input = if layer.kind.concatenates() {
            tape.concat_cols(h, agg)?
        } else {
            agg
        };
        let wt = tape.transpose(vars.w)?;
        let z = tape.matmul(input, wt)?;
        h = if k == last { z } else { tape.relu(z)? };
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub holder: Matrix,
    pub fund: Matrix,
}

impl Embeddings {
    pub(crate) fn from_stacked(stacked: &Matrix, num_holders: usize) -> Result<Self> {
        let holder_rows: Vec<usize> = (0..num_holders).collect();
        let fund_rows: Vec<usize> = (num_holders..stacked.rows()).collect();
        Ok(Self {
            holder: stacked.gather_rows(&holder_rows)?,
            fund: stacked.gather_rows(&fund_rows)?,
        })
    }
}

/// Forward pass without gradient tracking.
pub fn encode(
    graph: &BipartiteGraph,
    holder_features: &Matrix,
    fund_features: &Matrix,
    model: &SageModel,
    store: &ParamStore,
    perm_seed: u64,
) -> Result<Embeddings> {
    let mut tape = Tape::new();
    let h = encode_on_tape(
        &mut tape,
        graph,
        holder_features,
        fund_features,
        model,
        store,
        perm_seed,
        ParamMode::Frozen,
    )?;
    Embeddings::from_stacked(tape.value(h)?, graph.num_holders())
}

/// Aggregate of one node's neighbourhood under `layer`'s parameters.
pub fn aggregate(
    layer: &SageLayer,
    store: &ParamStore,
    self_vec: &[f64],
    neighbor_vecs: &[Vec<f64>],
    perm_seed: u64,
) -> Result<Vec<f64>> {
    let d = layer.in_dim;
    if self_vec.len() != d {
        return Err(Error::ShapeMismatch {
            op: "aggregate",
            left: (1, self_vec.len()),
            right: (1, d),
        });
    }
    if let Some(bad) = neighbor_vecs.iter().find(|v| v.len() != d) {
        return Err(Error::ShapeMismatch {
            op: "aggregate",
            left: (1, bad.len()),
            right: (1, d),
        });
    }
    let mut rows = vec![self_vec.to_vec()];
    rows.extend(neighbor_vecs.iter().cloned());
    let mut tape = Tape::new();
    let src = tape.constant(Matrix::from_rows(&rows)?);
    let vars = LayerVars::load(&mut tape, layer, store, ParamMode::Frozen)?;
    let neighbors = vec![(1..=neighbor_vecs.len()).collect::<Vec<_>>()];
    let out = aggregate_rows(&mut tape, layer.kind, src, &[0], &neighbors, &vars, perm_seed)?;
    Ok(tape.value(out)?.row(0).to_vec())
}
