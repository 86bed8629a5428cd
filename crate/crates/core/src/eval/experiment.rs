//! Concrete recommenders and the train-at-T / score-at-T+1 pipeline.

use serde::{Deserialize, Serialize};

use crate::baseline::{baseline_recommend, diversity_constrain};
use crate::error::{Error, Result};
use crate::eval::harness::{evaluate, EvalReport, Recommender, SharedIds, Variant, DEFAULT_KS};
use crate::eval::synth::{generate_synthetic, SyntheticConfig};
use crate::eval::truth::{newly_added_split, GroundTruth};
use crate::features::{segment_holders, AumSegmentation, DEFAULT_NUM_SEGMENTS};
use crate::graph::BipartiteGraph;
use crate::ingest::{shared_index, IdIndex, Quarter, QuarterSnapshot};
use crate::numeric::Matrix;
use crate::predictor::{train_on_snapshot, GraphFeatures, Preprocessing, TrainConfig, TrainedModel};
use crate::sage::Embeddings;

/// GraphSAGE + MLP ranking over the holders of the fit quarter.
pub struct ModelRecommender<'a> {
    model: &'a TrainedModel,
    snapshot: &'a QuarterSnapshot,
    graph: BipartiteGraph,
    embeddings: Embeddings,
}

impl<'a> ModelRecommender<'a> {
    pub fn new(model: &'a TrainedModel, snapshot: &'a QuarterSnapshot) -> Result<Self> {
        let prep = model
            .preprocessing
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model carries no fitted preprocessing".into()))?;
        let (holders, funds) = prep.transform(snapshot)?;
        let graph = snapshot.graph()?;
        let embeddings = model.embed(GraphFeatures {
            graph: &graph,
            holders: &holders,
            funds: &funds,
        })?;
        Ok(Self {
            model,
            snapshot,
            graph,
            embeddings,
        })
    }

    pub fn ranked(&self, fund: usize, exclude_existing: bool) -> Result<Vec<(usize, f64)>> {
        let scorer = self.model.scorer(&self.embeddings)?;
        let exclude: &[usize] = if exclude_existing {
            &self.graph.fund_adj()[fund]
        } else {
            &[]
        };
        scorer.rank_holders(fund, exclude)
    }
}

impl Recommender for ModelRecommender<'_> {
    fn name(&self) -> &str {
        "graphsage_mlp"
    }

    fn fit_quarter(&self) -> Quarter {
        self.model
            .preprocessing
            .as_ref()
            .map_or(self.snapshot.quarter, |p| p.fit_quarter)
    }

    fn holder_index(&self) -> &IdIndex {
        &self.snapshot.holder_index
    }

    fn fund_index(&self) -> &IdIndex {
        &self.snapshot.fund_index
    }

    fn recommend(&self, fund: usize, k: usize, exclude_existing: bool) -> Result<Vec<usize>> {
        let mut ranked = self.ranked(fund, exclude_existing)?;
        ranked.truncate(k);
        Ok(ranked.into_iter().map(|(h, _)| h).collect())
    }
}

/// Cosine similarity between scaled fund and holder feature rows,
/// optionally re-ranked to follow the holder AUM segment mix.
pub struct BaselineRecommender<'a> {
    snapshot: &'a QuarterSnapshot,
    graph: BipartiteGraph,
    holders: Matrix,
    funds: Matrix,
    segmentation: Option<AumSegmentation>,
}

impl<'a> BaselineRecommender<'a> {
    /// `num_segments = None` gives the unconstrained cosine ranking.
    pub fn new(snapshot: &'a QuarterSnapshot, prep: &Preprocessing, num_segments: Option<usize>) -> Result<Self> {
        let (holders, funds) = prep.transform(snapshot)?;
        let segmentation = num_segments.map(|n| segment_holders(snapshot, n)).transpose()?;
        Ok(Self {
            snapshot,
            graph: snapshot.graph()?,
            holders,
            funds,
            segmentation,
        })
    }

    pub fn ranked(&self, fund: usize, k: usize, exclude_existing: bool) -> Result<Vec<(usize, f64)>> {
        if fund >= self.funds.rows() {
            return Err(Error::NodeOutOfRange {
                kind: crate::graph::NodeKind::Fund,
                index: fund,
                count: self.funds.rows(),
            });
        }
        let exclude: &[usize] = if exclude_existing {
            &self.graph.fund_adj()[fund]
        } else {
            &[]
        };
        let all = baseline_recommend(self.funds.row(fund), &self.holders, self.holders.rows().max(1), exclude)?;
        match &self.segmentation {
            Some(seg) => diversity_constrain(&all, seg, k),
            None => Ok(all.into_iter().take(k).collect()),
        }
    }
}

impl Recommender for BaselineRecommender<'_> {
    fn name(&self) -> &str {
        if self.segmentation.is_some() {
            "cosine_diversity"
        } else {
            "cosine"
        }
    }

    fn fit_quarter(&self) -> Quarter {
        self.snapshot.quarter
    }

    fn holder_index(&self) -> &IdIndex {
        &self.snapshot.holder_index
    }

    fn fund_index(&self) -> &IdIndex {
        &self.snapshot.fund_index
    }

    fn recommend(&self, fund: usize, k: usize, exclude_existing: bool) -> Result<Vec<usize>> {
        Ok(self
            .ranked(fund, k, exclude_existing)?
            .into_iter()
            .map(|(h, _)| h)
            .collect())
    }
}

/// Two consecutive quarters under shared id maps, with both truth variants.
#[derive(Debug, Clone)]
pub struct TemporalPair {
    pub snapshot_t: QuarterSnapshot,
    pub snapshot_t1: QuarterSnapshot,
    pub holders: IdIndex,
    pub funds: IdIndex,
    pub truth_t1: GroundTruth,
    pub newly_added: GroundTruth,
}

impl TemporalPair {
    pub fn new(snapshot_t: QuarterSnapshot, snapshot_t1: QuarterSnapshot) -> Result<Self> {
        let (holders, funds) = shared_index(&[&snapshot_t, &snapshot_t1]);
        let truth_t = GroundTruth::from_snapshot(&snapshot_t, &holders, &funds)?;
        let truth_t1 = GroundTruth::from_snapshot(&snapshot_t1, &holders, &funds)?;
        let newly_added = newly_added_split(&truth_t, &truth_t1);
        Ok(Self {
            snapshot_t,
            snapshot_t1,
            holders,
            funds,
            truth_t1,
            newly_added,
        })
    }

    pub fn ids(&self) -> SharedIds<'_> {
        SharedIds {
            holders: &self.holders,
            funds: &self.funds,
        }
    }

    pub fn truth(&self, variant: Variant) -> &GroundTruth {
        match variant {
            Variant::AllHolders => &self.truth_t1,
            Variant::NewlyAdded => &self.newly_added,
        }
    }

    pub fn evaluate(&self, recommender: &dyn Recommender, ks: &[usize], variant: Variant) -> Result<EvalReport> {
        evaluate(recommender, self.truth(variant), self.ids(), ks, variant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub synthetic: SyntheticConfig,
    pub train: TrainConfig,
    pub ks: Vec<usize>,
    pub num_segments: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synthetic: SyntheticConfig::default(),
            train: TrainConfig::default(),
            ks: DEFAULT_KS.to_vec(),
            num_segments: DEFAULT_NUM_SEGMENTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub model_all: EvalReport,
    pub model_new: EvalReport,
    pub baseline_all: EvalReport,
    pub baseline_new: EvalReport,
    pub loss_curve: Vec<f64>,
}

/// Generates the synthetic pair, trains on T only and evaluates model and
/// diversity-constrained baseline on both truth variants at T+1.
pub fn run_synthetic_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let data = generate_synthetic(&config.synthetic)?;
    let pair = TemporalPair::new(data.snapshot_t()?, data.snapshot_t1()?)?;
    run_temporal_experiment(&pair, &config.train, &config.ks, config.num_segments)
}

pub fn run_temporal_experiment(
    pair: &TemporalPair,
    train: &TrainConfig,
    ks: &[usize],
    num_segments: usize,
) -> Result<ExperimentOutcome> {
    let model = train_on_snapshot(&pair.snapshot_t, train)?;
    let prep = model.preprocessing.as_ref().expect("set by train_on_snapshot");
    let rec = ModelRecommender::new(&model, &pair.snapshot_t)?;
    let base = BaselineRecommender::new(&pair.snapshot_t, prep, Some(num_segments))?;
    let mut model_all = pair.evaluate(&rec, ks, Variant::AllHolders)?;
    let mut model_new = pair.evaluate(&rec, ks, Variant::NewlyAdded)?;
    model_all.test_auc = model.test_auc;
    model_new.test_auc = model.test_auc;
    Ok(ExperimentOutcome {
        model_all,
        model_new,
        baseline_all: pair.evaluate(&base, ks, Variant::AllHolders)?,
        baseline_new: pair.evaluate(&base, ks, Variant::NewlyAdded)?,
        loss_curve: model.loss_curve,
    })
}
