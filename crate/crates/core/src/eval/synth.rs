//! Two-quarter synthetic holdings with planted investment styles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Position, Quarter, QuarterSnapshot};
use crate::seed;

pub const CATEGORIES: [&str; 8] = [
    "Equity",
    "Bond",
    "Commodity",
    "RealEstate",
    "Municipal",
    "HighYield",
    "EmergingMarkets",
    "Sector",
];
pub const STRATEGIES: [&str; 3] = ["active", "passive", "strategic"];
pub const NUM_ISSUERS: usize = 12;

/// Probability that a fund attribute comes from its style's preferred
/// values rather than uniformly from the pool.
const STYLE_AFFINITY: f64 = 0.8;
const MIN_VALUE: f64 = 1e5;
const MAX_VALUE: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub num_holders: usize,
    pub num_funds: usize,
    pub num_styles: usize,
    pub within_style_edge_prob: f64,
    pub cross_style_edge_prob: f64,
    /// Probability an edge at T is still present at T+1.
    pub persistence: f64,
    /// Share of T+1 holders that did not exist at T.
    pub new_holder_fraction: f64,
    /// Half-width of the uniform activity multiplier around 1; 0 gives a
    /// plain block model.
    pub activity_spread: f64,
    pub quarter: Quarter,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_holders: 200,
            num_funds: 60,
            num_styles: 4,
            within_style_edge_prob: 0.25,
            cross_style_edge_prob: 0.02,
            persistence: 0.8,
            new_holder_fraction: 0.1,
            activity_spread: 0.75,
            quarter: Quarter { year: 2021, q: 4 },
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("synthetic config: {m}")));
        if self.num_styles == 0 || self.num_styles > self.num_holders.min(self.num_funds) {
            return bad(format!(
                "need 1 <= num_styles <= min(holders, funds), got {} styles for {} holders and {} funds",
                self.num_styles, self.num_holders, self.num_funds
            ));
        }
        for (name, p) in [
            ("within_style_edge_prob", self.within_style_edge_prob),
            ("cross_style_edge_prob", self.cross_style_edge_prob),
            ("persistence", self.persistence),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is outside [0, 1]"));
            }
        }
        if self.within_style_edge_prob <= self.cross_style_edge_prob {
            return bad("within_style_edge_prob must exceed cross_style_edge_prob".into());
        }
        if !(0.0..1.0).contains(&self.new_holder_fraction) {
            return bad(format!("new_holder_fraction = {} is outside [0, 1)", self.new_holder_fraction));
        }
        if !(0.0..1.0).contains(&self.activity_spread) {
            return bad(format!("activity_spread = {} is outside [0, 1)", self.activity_spread));
        }
        Ok(())
    }

    /// Fresh holders added at T+1 so that they make up
    /// `new_holder_fraction` of a population of `num_holders + fresh`.
    pub fn num_fresh_holders(&self) -> usize {
        let f = self.new_holder_fraction;
        (f * self.num_holders as f64 / (1.0 - f)).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FundAttributes {
    pub category: String,
    pub strategy: String,
    pub issuer: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub config: SyntheticConfig,
    pub quarter_t: Quarter,
    pub quarter_t1: Quarter,
    pub positions_t: Vec<Position>,
    pub positions_t1: Vec<Position>,
    /// Style of every holder, fresh T+1 holders last.
    pub holder_styles: Vec<usize>,
    pub fund_styles: Vec<usize>,
    pub fund_attributes: Vec<FundAttributes>,
}

impl SyntheticData {
    pub fn snapshot_t(&self) -> Result<QuarterSnapshot> {
        QuarterSnapshot::from_positions(self.quarter_t, self.positions_t.clone())
    }

    pub fn snapshot_t1(&self) -> Result<QuarterSnapshot> {
        QuarterSnapshot::from_positions(self.quarter_t1, self.positions_t1.clone())
    }

    pub fn all_positions(&self) -> Vec<Position> {
        self.positions_t.iter().chain(&self.positions_t1).cloned().collect()
    }
}

pub fn holder_id(i: usize) -> String {
    format!("H{i:04}")
}

pub fn fund_id(i: usize) -> String {
    format!("F{i:03}")
}

fn preferred<'a>(pool: &[&'a str], style: usize, per_style: usize, rng: &mut ChaCha8Rng) -> &'a str {
    if rng.gen::<f64>() < STYLE_AFFINITY {
        pool[(style * per_style + rng.gen_range(0..per_style)) % pool.len()]
    } else {
        pool[rng.gen_range(0..pool.len())]
    }
}

struct Generator<'a> {
    config: &'a SyntheticConfig,
    holder_styles: Vec<usize>,
    fund_styles: Vec<usize>,
    holder_activity: Vec<f64>,
    fund_activity: Vec<f64>,
}

impl Generator<'_> {
    fn edge_prob(&self, h: usize, f: usize) -> f64 {
        let c = self.config;
        let base = if self.holder_styles[h] == self.fund_styles[f] {
            c.within_style_edge_prob
        } else {
            c.cross_style_edge_prob
        };
        (base * self.holder_activity[h] * self.fund_activity[f]).min(1.0)
    }

    fn activity(&self, rng: &mut ChaCha8Rng) -> f64 {
        let s = self.config.activity_spread;
        if s == 0.0 {
            1.0
        } else {
            rng.gen_range(1.0 - s..1.0 + s)
        }
    }

    fn same_style_fund(&self, h: usize, rng: &mut ChaCha8Rng) -> usize {
        let own: Vec<usize> = (0..self.fund_styles.len())
            .filter(|&f| self.fund_styles[f] == self.holder_styles[h])
            .collect();
        own[rng.gen_range(0..own.len())]
    }
}

fn market_value(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(MIN_VALUE.ln()..MAX_VALUE.ln()).exp()
}

/// Builds quarters T and T+1. Every T holder and fund has at least one
/// position (a same-style fund or holder is forced when the draw leaves it
/// isolated), as does every fresh T+1 holder.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let (m, n, s) = (config.num_holders, config.num_funds, config.num_styles);
    let fresh = config.num_fresh_holders();
    let stream = |k: u64| ChaCha8Rng::seed_from_u64(seed::derive(config.seed, 0x5359_4e54, k));

    let mut rng = stream(0);
    let mut gen = Generator {
        config,
        holder_styles: (0..m + fresh).map(|h| h % s).collect(),
        fund_styles: (0..n).map(|f| f % s).collect(),
        holder_activity: Vec::new(),
        fund_activity: Vec::new(),
    };
    gen.holder_activity = (0..m + fresh).map(|_| gen.activity(&mut rng)).collect();
    gen.fund_activity = (0..n).map(|_| gen.activity(&mut rng)).collect();
    let issuers: Vec<String> = (0..NUM_ISSUERS).map(|i| format!("Issuer{i:02}")).collect();
    let issuer_refs: Vec<&str> = issuers.iter().map(String::as_str).collect();
    let fund_attributes: Vec<FundAttributes> = gen
        .fund_styles
        .iter()
        .map(|&st| FundAttributes {
            category: preferred(&CATEGORIES, st, 2, &mut rng).to_string(),
            strategy: preferred(&STRATEGIES, st, 1, &mut rng).to_string(),
            issuer: preferred(&issuer_refs, st, 3, &mut rng).to_string(),
        })
        .collect();

    // Quarter T: market value per (holder, fund) pair, None for no edge.
    let mut rng = stream(1);
    let mut t_values: Vec<Vec<Option<f64>>> = vec![vec![None; n]; m];
    for (h, row) in t_values.iter_mut().enumerate() {
        for (f, cell) in row.iter_mut().enumerate() {
            if rng.gen::<f64>() < gen.edge_prob(h, f) {
                *cell = Some(market_value(&mut rng));
            }
        }
        if row.iter().all(Option::is_none) {
            let f = gen.same_style_fund(h, &mut rng);
            row[f] = Some(market_value(&mut rng));
        }
    }
    for f in 0..n {
        if (0..m).all(|h| t_values[h][f].is_none()) {
            let own: Vec<usize> = (0..m).filter(|&h| gen.holder_styles[h] == gen.fund_styles[f]).collect();
            let h = own[rng.gen_range(0..own.len())];
            t_values[h][f] = Some(market_value(&mut rng));
        }
    }

    // Quarter T+1: survivors, new edges for existing holders, fresh holders.
    let mut rng = stream(2);
    let churn = 1.0 - config.persistence;
    let mut t1_values: Vec<Vec<Option<f64>>> = vec![vec![None; n]; m + fresh];
    for h in 0..m {
        for f in 0..n {
            t1_values[h][f] = match t_values[h][f] {
                Some(v) => (rng.gen::<f64>() < config.persistence).then_some(v),
                None => (rng.gen::<f64>() < gen.edge_prob(h, f) * churn).then(|| market_value(&mut rng)),
            };
        }
    }
    for (h, row) in t1_values.iter_mut().enumerate().skip(m) {
        for (f, cell) in row.iter_mut().enumerate() {
            if rng.gen::<f64>() < gen.edge_prob(h, f) {
                *cell = Some(market_value(&mut rng));
            }
        }
        if row.iter().all(Option::is_none) {
            let f = gen.same_style_fund(h, &mut rng);
            row[f] = Some(market_value(&mut rng));
        }
    }

    let quarter_t1 = config.quarter.next();
    let to_positions = |values: &[Vec<Option<f64>>], quarter: Quarter| -> Vec<Position> {
        let mut out = Vec::new();
        for (h, row) in values.iter().enumerate() {
            for (f, v) in row.iter().enumerate() {
                if let Some(v) = *v {
                    let a = &fund_attributes[f];
                    out.push(Position {
                        quarter,
                        holder_id: holder_id(h),
                        fund_id: fund_id(f),
                        market_value: v,
                        category: a.category.clone(),
                        strategy: a.strategy.clone(),
                        issuer: a.issuer.clone(),
                    });
                }
            }
        }
        out
    };
    Ok(SyntheticData {
        config: config.clone(),
        quarter_t: config.quarter,
        quarter_t1,
        positions_t: to_positions(&t_values, config.quarter),
        positions_t1: to_positions(&t1_values, quarter_t1),
        holder_styles: gen.holder_styles,
        fund_styles: gen.fund_styles,
        fund_attributes,
    })
}
