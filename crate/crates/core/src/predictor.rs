//! Edge scoring, cross-entropy loss and the training loop that fits the
//! encoder and the scorer together.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::auc;
use crate::features::{build_schema, featurize, FeatureSchema, MinMaxScaler};
use crate::graph::{corrupt_funds, split_edges, BipartiteGraph, Edge, NodeKind};
use crate::ingest::{Quarter, QuarterSnapshot};
use crate::numeric::{adam_step, init_params, stable_sigmoid, AdamState, Matrix, ParamStore, Tape, Var, PROB_CLAMP};
use crate::sage::{encode_on_tape, load, AggregatorKind, Embeddings, ParamMode, SageConfig, SageModel};
use crate::seed;

pub const W1: &str = "mlp.w1";
pub const W2: &str = "mlp.w2";

/// Two-layer scorer without biases:
/// `logit = W2 · relu(W1 · concat(holder, fund))`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpPredictor {
    pub w1: Matrix,
    pub w2: Matrix,
}

impl MlpPredictor {
    pub fn new(w1: Matrix, w2: Matrix) -> Result<Self> {
        if w1.cols() % 2 != 0 || w2.rows() != 1 || w2.cols() != w1.rows() {
            return Err(Error::ShapeMismatch {
                op: "mlp_predictor",
                left: w1.shape(),
                right: w2.shape(),
            });
        }
        Ok(Self { w1, w2 })
    }

    pub fn from_store(store: &ParamStore) -> Result<Self> {
        Self::new(store.value(W1)?.clone(), store.value(W2)?.clone())
    }

    pub fn embedding_dim(&self) -> usize {
        self.w1.cols() / 2
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn init_params(store: &mut ParamStore, embedding_dim: usize, hidden_dim: usize, seed: u64) -> Result<()> {
        store.insert(W1, init_params(hidden_dim, 2 * embedding_dim, seed::derive(seed, 0x4d4c_50, 1)))?;
        store.insert(W2, init_params(1, hidden_dim, seed::derive(seed, 0x4d4c_50, 2)))?;
        Ok(())
    }

    /// `(logit, probability)` for one holder–fund pair. The concatenation
    /// order is always (holder, fund).
    pub fn score_edge(&self, emb_holder: &[f64], emb_fund: &[f64]) -> Result<(f64, f64)> {
        let d = self.embedding_dim();
        if emb_holder.len() != d || emb_fund.len() != d {
            return Err(Error::ShapeMismatch {
                op: "score_edge",
                left: (emb_holder.len(), emb_fund.len()),
                right: (d, d),
            });
        }
        let mut logit = 0.0;
        for j in 0..self.hidden_dim() {
            let row = self.w1.row(j);
            let pre: f64 = row[..d].iter().zip(emb_holder).map(|(w, x)| w * x).sum::<f64>()
                + row[d..].iter().zip(emb_fund).map(|(w, x)| w * x).sum::<f64>();
            if pre > 0.0 {
                logit += self.w2.get(0, j) * pre;
            }
        }
        if !logit.is_finite() {
            return Err(Error::NonFinite("score_edge"));
        }
        Ok((logit, stable_sigmoid(logit)))
    }
}

pub fn score_edge(emb_holder: &[f64], emb_fund: &[f64], mlp: &MlpPredictor) -> Result<(f64, f64)> {
    mlp.score_edge(emb_holder, emb_fund)
}

/// Mean binary cross-entropy with probabilities clamped to
/// `[1e-12, 1 − 1e-12]`.
pub fn bce_loss(probabilities: &[f64], labels: &[f64]) -> Result<f64> {
    if probabilities.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "bce_loss",
            left: (probabilities.len(), 1),
            right: (labels.len(), 1),
        });
    }
    if probabilities.is_empty() {
        return Err(Error::EmptyInput("bce_loss needs at least one prediction"));
    }
    let total: f64 = probabilities
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    Ok(-total / probabilities.len() as f64)
}

/// The same loss recorded on a tape, for column vectors of probabilities.
pub(crate) fn bce_on_tape(tape: &mut Tape, probs: Var, labels: &[f64]) -> Result<Var> {
    let n = labels.len();
    let y = tape.constant(Matrix::from_vec(n, 1, labels.to_vec())?);
    let not_y = tape.constant(Matrix::from_vec(n, 1, labels.iter().map(|v| 1.0 - v).collect())?);
    let p = tape.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let log_p = tape.ln(p)?;
    let q = tape.affine(p, -1.0, 1.0)?;
    let log_q = tape.ln(q)?;
    let a = tape.mul(y, log_p)?;
    let b = tape.mul(not_y, log_q)?;
    let s = tape.add(a, b)?;
    let m = tape.mean(s)?;
    tape.affine(m, -1.0, 0.0)
}

/// Edge scorer used during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Mlp,
    /// Parameter-free `u · v` score, kept for comparison runs only.
    Dot,
}

/// Whether encoder and scorer are optimised together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingMode {
    Joint,
    /// Encoder first (with the dot scorer), then the MLP on frozen embeddings.
    Separate,
}

impl fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Joint => "joint",
            Self::Separate => "separate",
        })
    }
}

impl FromStr for TrainingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Self::Joint),
            "separate" => Ok(Self::Separate),
            other => Err(Error::InvalidArgument(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub aggregator: AggregatorKind,
    pub epochs: usize,
    pub negative_ratio: f64,
    pub seed: u64,
    pub test_fraction: f64,
    pub mlp_hidden: usize,
    pub mode: TrainingMode,
    pub predictor: PredictorKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            embedding_dim: 128,
            hidden_dim: 128,
            layers: 2,
            aggregator: AggregatorKind::Gcn,
            epochs: 200,
            negative_ratio: 1.0,
            seed: 0,
            test_fraction: 0.1,
            mlp_hidden: 64,
            mode: TrainingMode::Joint,
            predictor: PredictorKind::Mlp,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("train config: {what}")));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.embedding_dim == 0 || self.hidden_dim == 0 || self.layers == 0 || self.mlp_hidden == 0 {
            return bad("dimensions and layer count must be positive");
        }
        if !(self.negative_ratio.is_finite() && self.negative_ratio > 0.0) {
            return bad("negative_ratio must be positive");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test_fraction must lie in (0, 1)");
        }
        if self.mode == TrainingMode::Separate && self.predictor == PredictorKind::Dot {
            return bad("separate training already uses the dot scorer for its first stage");
        }
        Ok(())
    }

    pub fn sage_config(&self, input_dim: usize) -> SageConfig {
        SageConfig {
            kind: self.aggregator,
            input_dim,
            hidden_dim: self.hidden_dim,
            output_dim: self.embedding_dim,
            num_layers: self.layers,
        }
    }

    /// Seed for the negatives of a given epoch.
    pub fn epoch_seed(&self, epoch: usize) -> u64 {
        self.seed ^ epoch as u64
    }
}

/// Schema and scalers fitted on the training quarter, applied unchanged to
/// any later query data.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessing {
    pub schema: FeatureSchema,
    pub holder_scaler: MinMaxScaler,
    pub fund_scaler: MinMaxScaler,
    pub fit_quarter: Quarter,
}

impl Preprocessing {
    /// Fits the schema and both scalers on one quarter.
    pub fn fit(snapshot: &QuarterSnapshot) -> Result<Self> {
        let schema = build_schema(&[snapshot])?;
        let (holders, funds) = featurize(snapshot, &schema)?;
        Ok(Self {
            holder_scaler: MinMaxScaler::fit(&holders.values)?,
            fund_scaler: MinMaxScaler::fit(&funds.values)?,
            schema,
            fit_quarter: snapshot.quarter,
        })
    }

    /// Scaled `(holder, fund)` features of `snapshot` under the frozen
    /// schema; attribute values unseen at fit time are an error.
    pub fn transform(&self, snapshot: &QuarterSnapshot) -> Result<(Matrix, Matrix)> {
        let (holders, funds) = featurize(snapshot, &self.schema)?;
        Ok((
            self.holder_scaler.transform(&holders.values)?,
            self.fund_scaler.transform(&funds.values)?,
        ))
    }

    pub fn scaler(&self, kind: NodeKind) -> &MinMaxScaler {
        match kind {
            NodeKind::Holder => &self.holder_scaler,
            NodeKind::Fund => &self.fund_scaler,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub encoder: SageModel,
    pub params: ParamStore,
    pub config: TrainConfig,
    pub loss_curve: Vec<f64>,
    pub test_auc: Option<f64>,
    pub preprocessing: Option<Preprocessing>,
}

/// Scaled node features for one graph.
#[derive(Debug, Clone, Copy)]
pub struct GraphFeatures<'a> {
    pub graph: &'a BipartiteGraph,
    pub holders: &'a Matrix,
    pub funds: &'a Matrix,
}

fn logits_on_tape(
    tape: &mut Tape,
    emb: Var,
    num_holders: usize,
    edges: &[Edge],
    predictor: PredictorKind,
    store: &ParamStore,
    mode: ParamMode,
) -> Result<Var> {
    let holder_rows: Vec<usize> = edges.iter().map(|&(h, _)| h).collect();
    let fund_rows: Vec<usize> = edges.iter().map(|&(_, f)| num_holders + f).collect();
    match predictor {
        PredictorKind::Mlp => {
            // W1 · concat(u, v) == W1[:, :d] · u + W1[:, d:] · v; project every
            // node once, then gather per edge.
            let d = tape.value(emb)?.cols();
            let w1 = load(tape, store, W1, mode)?;
            let w2 = load(tape, store, W2, mode)?;
            if tape.value(w1)?.cols() != 2 * d {
                return Err(Error::ShapeMismatch {
                    op: "mlp_logits",
                    left: tape.value(w1)?.shape(),
                    right: (0, 2 * d),
                });
            }
            let w1_holder = tape.slice_cols(w1, 0, d)?;
            let w1_fund = tape.slice_cols(w1, d, 2 * d)?;
            let w1h_t = tape.transpose(w1_holder)?;
            let w1f_t = tape.transpose(w1_fund)?;
            let proj_h = tape.matmul(emb, w1h_t)?;
            let proj_f = tape.matmul(emb, w1f_t)?;
            let a = tape.gather_rows(proj_h, &holder_rows)?;
            let b = tape.gather_rows(proj_f, &fund_rows)?;
            let pre = tape.add(a, b)?;
            let hidden = tape.relu(pre)?;
            let w2_t = tape.transpose(w2)?;
            tape.matmul(hidden, w2_t)
        }
        PredictorKind::Dot => {
            let d = tape.value(emb)?.cols();
            let u = tape.gather_rows(emb, &holder_rows)?;
            let v = tape.gather_rows(emb, &fund_rows)?;
            let uv = tape.mul(u, v)?;
            let ones = tape.constant(Matrix::filled(d, 1, 1.0));
            tape.matmul(uv, ones)
        }
    }
}

/// Everything the loss depends on for one optimisation step.
pub(crate) struct LossInputs<'a> {
    pub features: GraphFeatures<'a>,
    pub positives: &'a [Edge],
    pub negatives: &'a [Edge],
    pub perm_seed: u64,
}

/// Records encoder, scorer and BCE on a fresh tape. Returns the tape and
/// the loss variable.
pub(crate) fn record_loss(
    encoder: &SageModel,
    store: &ParamStore,
    inputs: &LossInputs<'_>,
    predictor: PredictorKind,
    encoder_mode: ParamMode,
    scorer_mode: ParamMode,
) -> Result<(Tape, Var)> {
    let g = inputs.features;
    let mut tape = Tape::new();
    let emb = encode_on_tape(
        &mut tape,
        g.graph,
        g.holders,
        g.funds,
        encoder,
        store,
        inputs.perm_seed,
        encoder_mode,
    )?;
    let edges: Vec<Edge> = inputs.positives.iter().chain(inputs.negatives).copied().collect();
    let labels: Vec<f64> = std::iter::repeat(1.0)
        .take(inputs.positives.len())
        .chain(std::iter::repeat(0.0).take(inputs.negatives.len()))
        .collect();
    if edges.is_empty() {
        return Err(Error::EmptyInput("no edges to score"));
    }
    let logits = logits_on_tape(&mut tape, emb, g.graph.num_holders(), &edges, predictor, store, scorer_mode)?;
    let probs = tape.sigmoid(logits)?;
    let loss = bce_on_tape(&mut tape, probs, &labels)?;
    Ok((tape, loss))
}

/// Full joint loss as a plain function of the parameters.
pub fn joint_loss(
    encoder: &SageModel,
    store: &ParamStore,
    features: GraphFeatures<'_>,
    positives: &[Edge],
    negatives: &[Edge],
    perm_seed: u64,
) -> Result<f64> {
    let inputs = LossInputs {
        features,
        positives,
        negatives,
        perm_seed,
    };
    let (tape, loss) = record_loss(
        encoder,
        store,
        &inputs,
        PredictorKind::Mlp,
        ParamMode::Trainable,
        ParamMode::Trainable,
    )?;
    tape.value(loss)?.as_scalar()
}

/// Accumulates the analytic gradient of [`joint_loss`] into `store`.
pub fn joint_loss_backward(
    encoder: &SageModel,
    store: &mut ParamStore,
    features: GraphFeatures<'_>,
    positives: &[Edge],
    negatives: &[Edge],
    perm_seed: u64,
) -> Result<f64> {
    let inputs = LossInputs {
        features,
        positives,
        negatives,
        perm_seed,
    };
    let (tape, loss) = record_loss(
        encoder,
        store,
        &inputs,
        PredictorKind::Mlp,
        ParamMode::Trainable,
        ParamMode::Trainable,
    )?;
    tape.backward(loss, store)?;
    tape.value(loss)?.as_scalar()
}

const STREAM_INIT: u64 = 0x494e_4954;
const STREAM_PERM: u64 = 0x5045_524d;
const STREAM_SPLIT: u64 = 0x5350_4c54;

struct Stage<'a> {
    predictor: PredictorKind,
    encoder_mode: ParamMode,
    scorer_mode: ParamMode,
    trainable: Vec<&'a str>,
    epochs: std::ops::Range<usize>,
}

/// Fits encoder and scorer on `features.graph`, holding out
/// `config.test_fraction` of its edges to report a test AUC.
pub fn train(features: GraphFeatures<'_>, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    let graph = features.graph;
    if graph.num_edges() == 0 {
        return Err(Error::EmptyInput("cannot train on a graph without edges"));
    }
    let input_dim = features.holders.cols();
    let encoder = SageModel::new(config.sage_config(input_dim))?;
    let mut params = ParamStore::new();
    let init_seed = seed::derive(config.seed, STREAM_INIT, 0);
    encoder.init_params(&mut params, init_seed)?;
    MlpPredictor::init_params(&mut params, config.embedding_dim, config.mlp_hidden, init_seed)?;

    if config.epochs == 0 {
        return Ok(TrainedModel {
            encoder,
            params,
            config: *config,
            loss_curve: Vec::new(),
            test_auc: None,
            preprocessing: None,
        });
    }

    let split = split_edges(graph, config.test_fraction, seed::derive(config.seed, STREAM_SPLIT, 0))?;
    let train_graph = BipartiteGraph::build(graph.num_holders(), graph.num_funds(), &split.train_pos)?;
    let train_features = GraphFeatures {
        graph: &train_graph,
        ..features
    };
    let exclude: HashSet<Edge> = split.test_pos.iter().copied().collect();
    let num_neg = (config.negative_ratio * split.train_pos.len() as f64).round() as usize;

    let encoder_names = encoder.param_names();
    // Separate training splits the same epoch budget between its stages.
    let encoder_epochs = config.epochs.div_ceil(2);
    let stages: Vec<Stage<'_>> = match (config.mode, config.predictor) {
        (TrainingMode::Joint, predictor) => {
            let mut names: Vec<&str> = encoder_names.iter().map(String::as_str).collect();
            if predictor == PredictorKind::Mlp {
                names.extend([W1, W2]);
            }
            vec![Stage {
                predictor,
                encoder_mode: ParamMode::Trainable,
                scorer_mode: ParamMode::Trainable,
                trainable: names,
                epochs: 0..config.epochs,
            }]
        }
        (TrainingMode::Separate, _) => vec![
            Stage {
                predictor: PredictorKind::Dot,
                encoder_mode: ParamMode::Trainable,
                scorer_mode: ParamMode::Frozen,
                trainable: encoder_names.iter().map(String::as_str).collect(),
                epochs: 0..encoder_epochs,
            },
            Stage {
                predictor: PredictorKind::Mlp,
                encoder_mode: ParamMode::Frozen,
                scorer_mode: ParamMode::Trainable,
                trainable: vec![W1, W2],
                epochs: encoder_epochs..config.epochs,
            },
        ],
    };

    let mut loss_curve = Vec::with_capacity(config.epochs);
    for stage in &stages {
        let mut adam = AdamState::for_names(&params, stage.trainable.iter().copied(), config.learning_rate);
        for epoch in stage.epochs.clone() {
            // Negatives are drawn against the full graph so held-out
            // positives never appear with label 0.
            let mut rng = ChaCha8Rng::seed_from_u64(config.epoch_seed(epoch));
            let negatives = corrupt_funds(graph, &split.train_pos, num_neg, &exclude, &mut rng);
            let inputs = LossInputs {
                features: train_features,
                positives: &split.train_pos,
                negatives: &negatives,
                perm_seed: seed::derive(config.seed, STREAM_PERM, epoch as u64),
            };
            let (tape, loss_var) = record_loss(
                &encoder,
                &params,
                &inputs,
                stage.predictor,
                stage.encoder_mode,
                stage.scorer_mode,
            )?;
            let loss = tape.value(loss_var)?.as_scalar()?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, loss });
            }
            params.zero_grads();
            tape.backward(loss_var, &mut params)?;
            adam_step(&mut params, &mut adam)?;
            loss_curve.push(loss);
        }
    }
    params.zero_grads();

    let mut model = TrainedModel {
        encoder,
        params,
        config: *config,
        loss_curve,
        test_auc: None,
        preprocessing: None,
    };
    let emb = model.embed(train_features)?;
    let scorer = model.scorer(&emb)?;
    let pos: Vec<f64> = split
        .test_pos
        .iter()
        .map(|&(h, f)| scorer.logit(h, f))
        .collect::<Result<_>>()?;
    let neg: Vec<f64> = split
        .test_neg
        .iter()
        .map(|&(h, f)| scorer.logit(h, f))
        .collect::<Result<_>>()?;
    model.test_auc = Some(auc(&pos, &neg)?);
    Ok(model)
}

/// Fits preprocessing on `snapshot` and trains on its graph.
pub fn train_on_snapshot(snapshot: &QuarterSnapshot, config: &TrainConfig) -> Result<TrainedModel> {
    let prep = Preprocessing::fit(snapshot)?;
    let (holders, funds) = prep.transform(snapshot)?;
    let graph = snapshot.graph()?;
    let mut model = train(
        GraphFeatures {
            graph: &graph,
            holders: &holders,
            funds: &funds,
        },
        config,
    )?;
    model.preprocessing = Some(prep);
    Ok(model)
}

/// Scores holder–fund pairs from precomputed embeddings.
pub struct EdgeScorer<'a> {
    emb: &'a Embeddings,
    mlp: MlpPredictor,
}

impl EdgeScorer<'_> {
    pub fn score(&self, holder: usize, fund: usize) -> Result<(f64, f64)> {
        if holder >= self.emb.holder.rows() {
            return Err(Error::NodeOutOfRange {
                kind: NodeKind::Holder,
                index: holder,
                count: self.emb.holder.rows(),
            });
        }
        if fund >= self.emb.fund.rows() {
            return Err(Error::NodeOutOfRange {
                kind: NodeKind::Fund,
                index: fund,
                count: self.emb.fund.rows(),
            });
        }
        self.mlp.score_edge(self.emb.holder.row(holder), self.emb.fund.row(fund))
    }

    pub fn logit(&self, holder: usize, fund: usize) -> Result<f64> {
        self.score(holder, fund).map(|s| s.0)
    }

    /// Every holder ranked for `fund` by probability (desc), ties by index.
    pub fn rank_holders(&self, fund: usize, exclude: &[usize]) -> Result<Vec<(usize, f64)>> {
        let skip: HashSet<usize> = exclude.iter().copied().collect();
        let mut scored = Vec::with_capacity(self.emb.holder.rows());
        for h in 0..self.emb.holder.rows() {
            if skip.contains(&h) {
                continue;
            }
            scored.push((h, self.score(h, fund)?.1));
        }
        sort_ranking(&mut scored);
        Ok(scored)
    }
}

/// Sorts by score descending, ties by index ascending.
pub fn sort_ranking(scored: &mut [(usize, f64)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

impl TrainedModel {
    fn inference_perm_seed(&self) -> u64 {
        seed::derive(self.config.seed, STREAM_PERM, u64::MAX)
    }

    pub fn embed(&self, features: GraphFeatures<'_>) -> Result<Embeddings> {
        crate::sage::encode(
            features.graph,
            features.holders,
            features.funds,
            &self.encoder,
            &self.params,
            self.inference_perm_seed(),
        )
    }

    pub fn mlp(&self) -> Result<MlpPredictor> {
        MlpPredictor::from_store(&self.params)
    }

    pub fn scorer<'a>(&self, emb: &'a Embeddings) -> Result<EdgeScorer<'a>> {
        Ok(EdgeScorer { emb, mlp: self.mlp()? })
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_curve.last().copied()
    }
}

/// Top-`k` holders for `fund` under the query-time graph and features.
pub fn recommend_holders(
    model: &TrainedModel,
    features: GraphFeatures<'_>,
    fund: usize,
    k: usize,
    exclude_existing: bool,
) -> Result<Vec<(usize, f64)>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let graph = features.graph;
    if fund >= graph.num_funds() {
        return Err(Error::NodeOutOfRange {
            kind: NodeKind::Fund,
            index: fund,
            count: graph.num_funds(),
        });
    }
    let emb = model.embed(features)?;
    let scorer = model.scorer(&emb)?;
    let exclude: &[usize] = if exclude_existing { &graph.fund_adj()[fund] } else { &[] };
    let mut ranked = scorer.rank_holders(fund, exclude)?;
    ranked.truncate(k);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_half() {
        let mlp = MlpPredictor::new(Matrix::zeros(3, 4), Matrix::zeros(1, 3)).unwrap();
        assert_eq!(mlp.score_edge(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), (0.0, 0.5));
    }

    #[test]
    fn one_dimensional_by_hand() {
        let mlp = MlpPredictor::new(Matrix::row_vector(&[1.0, 1.0]).unwrap(), Matrix::scalar(2.0).unwrap()).unwrap();
        let (logit, p) = score_edge(&[1.0], &[1.0], &mlp).unwrap();
        assert_eq!(logit, 4.0);
        assert!((p - 0.982_013_790_037_908_4).abs() < 1e-12);
    }

    #[test]
    fn negated_output_layer_mirrors_probability() {
        let w1 = Matrix::from_rows(&[vec![0.3, -0.2, 0.5, 0.1], vec![-0.4, 0.7, 0.2, 0.9]]).unwrap();
        let w2 = Matrix::row_vector(&[1.5, -0.5]).unwrap();
        let neg = w2.affine(-1.0, 0.0).unwrap();
        let a = MlpPredictor::new(w1.clone(), w2).unwrap();
        let b = MlpPredictor::new(w1, neg).unwrap();
        let (u, v) = ([0.2, 0.9], [1.1, -0.3]);
        let pa = a.score_edge(&u, &v).unwrap().1;
        let pb = b.score_edge(&u, &v).unwrap().1;
        assert!((pa + pb - 1.0).abs() < 1e-15);
    }

    #[test]
    fn concat_order_is_holder_then_fund() {
        let w1 = Matrix::row_vector(&[1.0, 0.0]).unwrap();
        let mlp = MlpPredictor::new(w1, Matrix::scalar(1.0).unwrap()).unwrap();
        assert_eq!(mlp.score_edge(&[2.0], &[5.0]).unwrap().0, 2.0);
        assert!(mlp.score_edge(&[2.0, 1.0], &[5.0]).is_err());
    }

    #[test]
    fn bce_cases() {
        assert!(bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap() <= 1e-11);
        assert!((bce_loss(&[0.5, 0.5], &[1.0, 0.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_loss(&[0.9], &[0.0]).unwrap() - 2.302_585_092_994_046).abs() < 1e-12);
        assert!(bce_loss(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn tape_bce_matches_eager() {
        let probs = [0.2, 0.7, 1.0, 1e-15];
        let labels = [1.0, 0.0, 1.0, 0.0];
        let mut tape = Tape::new();
        let p = tape.constant(Matrix::from_vec(4, 1, probs.to_vec()).unwrap());
        let l = bce_on_tape(&mut tape, p, &labels).unwrap();
        let got = tape.value(l).unwrap().as_scalar().unwrap();
        assert!((got - bce_loss(&probs, &labels).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { test_fraction: 1.0, ..Default::default() }.validate().is_err());
        assert_eq!(TrainConfig { seed: 6, ..Default::default() }.epoch_seed(3), 5);
    }
}
