use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::hits_at_k;
use crate::eval::truth::GroundTruth;
use crate::ingest::{IdIndex, Quarter};

pub const DEFAULT_KS: [usize; 3] = [50, 100, 200];

/// Anything that ranks holders for a fund.
///
/// Indices live in the recommender's own id space, which must be a prefix
/// of the evaluation's shared id maps.
pub trait Recommender {
    fn name(&self) -> &str;
    /// Quarter whose data the recommender was fitted on.
    fn fit_quarter(&self) -> Quarter;
    fn holder_index(&self) -> &IdIndex;
    fn fund_index(&self) -> &IdIndex;
    /// Best-first top-`k` holders for `fund`. With `exclude_existing`,
    /// holders already invested at the fit quarter are left out.
    fn recommend(&self, fund: usize, k: usize, exclude_existing: bool) -> Result<Vec<usize>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    AllHolders,
    NewlyAdded,
}

impl Variant {
    pub fn excludes_existing(self) -> bool {
        self == Self::NewlyAdded
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::AllHolders => "all_holders",
            Self::NewlyAdded => "newly_added",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_holders" | "all" => Ok(Self::AllHolders),
            "newly_added" | "new" => Ok(Self::NewlyAdded),
            other => Err(Error::InvalidArgument(format!("unknown evaluation variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundHits {
    pub fund_id: String,
    pub truth_size: usize,
    /// One rate per entry of the report's `ks`.
    pub hits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recommender: String,
    pub variant: Variant,
    pub fit_quarter: Quarter,
    pub truth_quarter: Quarter,
    pub ks: Vec<usize>,
    pub per_fund: Vec<FundHits>,
    /// Mean over evaluated funds; `None` when no fund was evaluated.
    pub mean_hits: Vec<Option<f64>>,
    pub test_auc: Option<f64>,
    pub funds_evaluated: usize,
    pub funds_skipped_empty_truth: usize,
    /// Funds with truth at T+1 that the recommender never saw.
    pub funds_skipped_unknown: usize,
}

impl EvalReport {
    pub fn mean_hits_at(&self, k: usize) -> Option<f64> {
        let i = self.ks.iter().position(|&x| x == k)?;
        self.mean_hits[i]
    }

    /// One `key=value` line per field; per-fund entries are prefixed with
    /// `fund.<id>.`.
    pub fn to_flat_text(&self) -> String {
        let mut out = String::new();
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |x| format!("{x:.6}"));
        let _ = writeln!(out, "recommender={}", self.recommender);
        let _ = writeln!(out, "variant={}", self.variant);
        let _ = writeln!(out, "fit_quarter={}", self.fit_quarter);
        let _ = writeln!(out, "truth_quarter={}", self.truth_quarter);
        let _ = writeln!(out, "funds_evaluated={}", self.funds_evaluated);
        let _ = writeln!(out, "funds_skipped_empty_truth={}", self.funds_skipped_empty_truth);
        let _ = writeln!(out, "funds_skipped_unknown={}", self.funds_skipped_unknown);
        let _ = writeln!(out, "test_auc={}", opt(self.test_auc));
        for (k, m) in self.ks.iter().zip(&self.mean_hits) {
            let _ = writeln!(out, "mean_hits@{k}={}", opt(*m));
        }
        for f in &self.per_fund {
            let _ = writeln!(out, "fund.{}.truth_size={}", f.fund_id, f.truth_size);
            for (k, h) in self.ks.iter().zip(&f.hits) {
                let _ = writeln!(out, "fund.{}.hits@{k}={h:.6}", f.fund_id);
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }
}

/// The id maps spanning both quarters of a temporal evaluation.
#[derive(Debug, Clone, Copy)]
pub struct SharedIds<'a> {
    pub holders: &'a IdIndex,
    pub funds: &'a IdIndex,
}

/// Hits@K of `recommender` against `truth` for every fund with non-empty
/// truth. For [`Variant::NewlyAdded`] pass the newly-added truth; ranking
/// then excludes holders existing at the fit quarter.
pub fn evaluate(
    recommender: &dyn Recommender,
    truth: &GroundTruth,
    ids: SharedIds<'_>,
    ks: &[usize],
    variant: Variant,
) -> Result<EvalReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument("ks must be non-empty and positive".into()));
    }
    if recommender.fit_quarter() >= truth.quarter {
        return Err(Error::TemporalLeak {
            fit_quarter: recommender.fit_quarter().to_string(),
            truth_quarter: truth.quarter.to_string(),
        });
    }
    if !recommender.holder_index().is_prefix_of(ids.holders) {
        return Err(Error::IdSpaceMismatch(
            "recommender holder ids are not a prefix of the shared holder ids".into(),
        ));
    }
    if !recommender.fund_index().is_prefix_of(ids.funds) {
        return Err(Error::IdSpaceMismatch(
            "recommender fund ids are not a prefix of the shared fund ids".into(),
        ));
    }
    if truth.num_funds() != ids.funds.len() {
        return Err(Error::IdSpaceMismatch(format!(
            "truth covers {} funds, shared id map has {}",
            truth.num_funds(),
            ids.funds.len()
        )));
    }

    let k_max = *ks.iter().max().expect("non-empty");
    let known_funds = recommender.fund_index().len();
    let mut per_fund = Vec::new();
    let mut skipped_empty = 0;
    let mut skipped_unknown = 0;
    for (f, holders) in truth.holders_by_fund.iter().enumerate() {
        if holders.is_empty() {
            skipped_empty += 1;
            continue;
        }
        if f >= known_funds {
            skipped_unknown += 1;
            continue;
        }
        let ranked = recommender.recommend(f, k_max, variant.excludes_existing())?;
        let hits = ks
            .iter()
            .map(|&k| hits_at_k(&ranked, holders, k).map(|h| h.expect("truth is non-empty")))
            .collect::<Result<Vec<f64>>>()?;
        per_fund.push(FundHits {
            fund_id: ids.funds.id(f).expect("checked length").to_string(),
            truth_size: holders.len(),
            hits,
        });
    }
    let mean_hits = (0..ks.len())
        .map(|i| {
            (!per_fund.is_empty())
                .then(|| per_fund.iter().map(|p| p.hits[i]).sum::<f64>() / per_fund.len() as f64)
        })
        .collect();
    Ok(EvalReport {
        recommender: recommender.name().to_string(),
        variant,
        fit_quarter: recommender.fit_quarter(),
        truth_quarter: truth.quarter,
        ks: ks.to_vec(),
        funds_evaluated: per_fund.len(),
        per_fund,
        mean_hits,
        test_auc: None,
        funds_skipped_empty_truth: skipped_empty,
        funds_skipped_unknown: skipped_unknown,
    })
}
