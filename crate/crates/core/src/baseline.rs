//! Cosine-similarity recommender and the AUM-diversity re-ranker.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::features::AumSegmentation;
use crate::numeric::Matrix;
use crate::predictor::sort_ranking;

/// Cosine of the angle between `a` and `b`; 0 when either has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine_similarity",
            left: (1, a.len()),
            right: (1, b.len()),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Top-`k` holders by cosine similarity between their feature row and
/// `fund_vec`. Ties go to the lower index.
pub fn baseline_recommend(
    fund_vec: &[f64],
    holder_matrix: &Matrix,
    k: usize,
    exclude: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let skip: HashSet<usize> = exclude.iter().copied().collect();
    let mut scored = Vec::with_capacity(holder_matrix.rows());
    for h in 0..holder_matrix.rows() {
        if skip.contains(&h) {
            continue;
        }
        scored.push((h, cosine_similarity(fund_vec, holder_matrix.row(h))?));
    }
    sort_ranking(&mut scored);
    scored.truncate(k);
    Ok(scored)
}

/// Per-segment slot counts for a list of length `k`, proportional to the
/// segment shares of the holder population (largest remainder, ties to the
/// lower segment).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentQuota {
    pub counts: Vec<usize>,
}

impl SegmentQuota {
    pub fn new(proportions: &[f64], k: usize) -> Result<Self> {
        if proportions.is_empty() {
            return Err(Error::EmptyInput("segment proportions"));
        }
        if proportions.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument("segment proportions must be non-negative".into()));
        }
        let total: f64 = proportions.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument("segment proportions sum to zero".into()));
        }
        let exact: Vec<f64> = proportions.iter().map(|p| p / total * k as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..exact.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &s in order.iter().take(k.saturating_sub(assigned)) {
            counts[s] += 1;
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Re-ranks `ranked` (best first) so the first `k` entries follow the
/// segment quota. Segments short of candidates leave their slots to the
/// best remaining holders of any segment. The output keeps the original
/// rank order.
pub fn diversity_constrain(
    ranked: &[(usize, f64)],
    segmentation: &AumSegmentation,
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let quota = SegmentQuota::new(&segmentation.proportions(), k)?;
    let mut remaining = quota.counts.clone();
    let mut chosen = vec![false; ranked.len()];
    let mut picked = 0;
    for (i, &(h, _)) in ranked.iter().enumerate() {
        if picked == k {
            break;
        }
        let seg = segmentation.segment_of(h).ok_or(Error::NodeOutOfRange {
            kind: crate::graph::NodeKind::Holder,
            index: h,
            count: segmentation.assignment.len(),
        })?;
        if remaining[seg] > 0 {
            remaining[seg] -= 1;
            chosen[i] = true;
            picked += 1;
        }
    }
    for c in chosen.iter_mut() {
        if picked == k {
            break;
        }
        if !*c {
            *c = true;
            picked += 1;
        }
    }
    Ok(ranked
        .iter()
        .zip(&chosen)
        .filter(|(_, &c)| c)
        .map(|(r, _)| *r)
        .collect())
}
