//! One-hot feature engineering weighted by market value, min-max scaling
//! and AUM segmentation.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeKind;
use crate::ingest::{Position, QuarterSnapshot};
use crate::numeric::Matrix;

pub const FAMILIES: [&str; 3] = ["category", "strategy", "issuer"];

fn family_values(p: &Position) -> [(&'static str, &str); 3] {
    [
        ("category", p.category.as_str()),
        ("strategy", p.strategy.as_str()),
        ("issuer", p.issuer.as_str()),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Column {
    pub family: String,
    pub value: String,
}

/// Ordered one-hot column set shared by holder and fund features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    columns: Vec<Column>,
    lookup: HashMap<(String, String), usize>,
}

impl FeatureSchema {
    /// Sorts and deduplicates the given columns.
    pub fn from_columns(columns: impl IntoIterator<Item = Column>) -> Self {
        let set: BTreeSet<Column> = columns.into_iter().collect();
        let columns: Vec<Column> = set.into_iter().collect();
        let lookup = columns
            .iter()
            .enumerate()
            .map(|(i, c)| ((c.family.clone(), c.value.clone()), i))
            .collect();
        Self { columns, lookup }
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, family: &str, value: &str) -> Result<usize> {
        self.lookup
            .get(&(family.to_string(), value.to_string()))
            .copied()
            .ok_or_else(|| Error::UnknownAttribute {
                family: family.to_string(),
                value: value.to_string(),
            })
    }

    fn one_hot(&self, p: &Position) -> Result<[usize; 3]> {
        let [a, b, c] = family_values(p);
        Ok([
            self.column_index(a.0, a.1)?,
            self.column_index(b.0, b.1)?,
            self.column_index(c.0, c.1)?,
        ])
    }
}

/// One column per distinct (family, value) over every position given.
pub fn build_schema(snapshots: &[&QuarterSnapshot]) -> Result<FeatureSchema> {
    let mut cols = BTreeSet::new();
    for s in snapshots {
        for p in &s.positions {
            for (family, value) in family_values(p) {
                cols.insert(Column {
                    family: family.to_string(),
                    value: value.to_string(),
                });
            }
        }
    }
    if cols.is_empty() {
        return Err(Error::EmptyInput("no positions to build a feature schema from"));
    }
    Ok(FeatureSchema::from_columns(cols))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub kind: NodeKind,
    pub values: Matrix,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn width(&self) -> usize {
        self.values.cols()
    }
}

/// Unscaled holder and fund features.
///
/// A holder row sums `one_hot(position) × market_value` over its positions;
/// a fund row carries the fund's own attributes weighted by the total value
/// invested in it.
pub fn featurize(snapshot: &QuarterSnapshot, schema: &FeatureSchema) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let width = schema.width();
    let mut holders = Matrix::zeros(snapshot.num_holders(), width);
    let mut funds = Matrix::zeros(snapshot.num_funds(), width);
    for p in &snapshot.positions {
        let cols = schema.one_hot(p)?;
        let h = snapshot
            .holder_index
            .get(&p.holder_id)
            .ok_or_else(|| Error::IdSpaceMismatch(format!("holder {} not indexed", p.holder_id)))?;
        let f = snapshot
            .fund_index
            .get(&p.fund_id)
            .ok_or_else(|| Error::IdSpaceMismatch(format!("fund {} not indexed", p.fund_id)))?;
        for c in cols {
            holders.row_mut(h)[c] += p.market_value;
            funds.row_mut(f)[c] += p.market_value;
        }
    }
    Ok((
        FeatureMatrix {
            kind: NodeKind::Holder,
            values: holders,
        },
        FeatureMatrix {
            kind: NodeKind::Fund,
            values: funds,
        },
    ))
}

/// Per-column (min, max) fitted on one matrix and reusable on others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(m: &Matrix) -> Result<Self> {
        if m.rows() == 0 {
            return Err(Error::EmptyInput("min-max scaling needs at least one row"));
        }
        let mut mins = m.row(0).to_vec();
        let mut maxs = m.row(0).to_vec();
        for r in 1..m.rows() {
            for (c, &v) in m.row(r).iter().enumerate() {
                mins[c] = mins[c].min(v);
                maxs[c] = maxs[c].max(v);
            }
        }
        Ok(Self { mins, maxs })
    }

    pub fn width(&self) -> usize {
        self.mins.len()
    }

    /// `(x − min) / (max − min)` clamped to `[0, 1]`; constant columns map to 0.
    pub fn transform(&self, m: &Matrix) -> Result<Matrix> {
        if m.cols() != self.width() {
            return Err(Error::ShapeMismatch {
                op: "min_max_transform",
                left: m.shape(),
                right: (1, self.width()),
            });
        }
        let mut out = m.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                let span = self.maxs[c] - self.mins[c];
                *v = if span > 0.0 {
                    ((*v - self.mins[c]) / span).clamp(0.0, 1.0)
                } else {
                    0.0
                };
            }
        }
        Ok(out)
    }
}

pub fn min_max_scale(matrix: &FeatureMatrix) -> Result<(FeatureMatrix, MinMaxScaler)> {
    let scaler = MinMaxScaler::fit(&matrix.values)?;
    let values = scaler.transform(&matrix.values)?;
    Ok((
        FeatureMatrix {
            kind: matrix.kind,
            values,
        },
        scaler,
    ))
}

pub const DEFAULT_NUM_SEGMENTS: usize = 4;

/// Holders split into AUM quantile groups, segment 0 holding the smallest.
#[derive(Debug, Clone, PartialEq)]
pub struct AumSegmentation {
    pub num_segments: usize,
    pub assignment: Vec<usize>,
    /// Largest AUM in each segment except the last.
    pub boundaries: Vec<f64>,
}

impl AumSegmentation {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_segments];
        for &s in &self.assignment {
            sizes[s] += 1;
        }
        sizes
    }

    /// Share of the holder population in each segment.
    pub fn proportions(&self) -> Vec<f64> {
        let n = self.assignment.len().max(1) as f64;
        self.sizes().into_iter().map(|s| s as f64 / n).collect()
    }

    pub fn segment_of(&self, holder: usize) -> Option<usize> {
        self.assignment.get(holder).copied()
    }
}

/// Ranks holders by total invested value (ties by index) and cuts the
/// ranking into `num_segments` near-equal groups, the lower segments taking
/// any remainder.
pub fn segment_holders(snapshot: &QuarterSnapshot, num_segments: usize) -> Result<AumSegmentation> {
    segment_by_aum(&snapshot.holder_aum(), num_segments)
}

pub fn segment_by_aum(aum: &[f64], num_segments: usize) -> Result<AumSegmentation> {
    let m = aum.len();
    if num_segments == 0 || num_segments > m {
        return Err(Error::InvalidArgument(format!(
            "cannot split {m} holders into {num_segments} segments"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| aum[a].total_cmp(&aum[b]).then(a.cmp(&b)));
    let base = m / num_segments;
    let extra = m % num_segments;
    let mut assignment = vec![0; m];
    let mut boundaries = Vec::with_capacity(num_segments - 1);
    let mut pos = 0;
    for s in 0..num_segments {
        let size = base + usize::from(s < extra);
        for &h in &order[pos..pos + size] {
            assignment[h] = s;
        }
        pos += size;
        if s + 1 < num_segments {
            boundaries.push(aum[order[pos - 1]]);
        }
    }
    Ok(AumSegmentation {
        num_segments,
        assignment,
        boundaries,
    })
}
