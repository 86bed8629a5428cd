//! Ranking and classification metrics.

use std::collections::HashSet;

use crate::error::{Error, Result};

/// `|top-k(recommended) ∩ truth| / min(k, |truth|)`.
///
/// Returns `Ok(None)` for an empty truth set: the rate is undefined and the
/// caller is expected to skip the fund.
pub fn hits_at_k(recommended: &[usize], truth: &HashSet<usize>, k: usize) -> Result<Option<f64>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if truth.is_empty() {
        return Ok(None);
    }
    let mut seen = HashSet::with_capacity(k);
    let hits = recommended
        .iter()
        .take(k)
        .filter(|h| seen.insert(**h) && truth.contains(h))
        .count();
    Ok(Some(hits as f64 / k.min(truth.len()) as f64))
}

/// Mann–Whitney estimate of `P(pos > neg)`, ties counted as one half.
pub fn auc(pos_scores: &[f64], neg_scores: &[f64]) -> Result<f64> {
    if pos_scores.is_empty() || neg_scores.is_empty() {
        return Err(Error::EmptyInput("auc needs positive and negative scores"));
    }
    if pos_scores.iter().chain(neg_scores).any(|s| s.is_nan()) {
        return Err(Error::NonFinite("auc"));
    }
    // Sweep the merged ranking once; within a tie group every positive beats
    // all negatives below the group and half of those inside it.
    let mut all: Vec<(f64, bool)> = pos_scores
        .iter()
        .map(|&s| (s, true))
        .chain(neg_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut wins = 0.0f64;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut p, mut n) = (0usize, 0usize);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        wins += p as f64 * neg_below as f64 + 0.5 * (p * n) as f64;
        neg_below += n;
        i = j;
    }
    Ok(wins / (pos_scores.len() as f64 * neg_scores.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[usize]) -> HashSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn hits_examples() {
        let truth = set(&(100..110).collect::<Vec<_>>());
        let mut rec: Vec<usize> = vec![100, 101, 102, 103];
        rec.extend(0..46);
        assert_eq!(hits_at_k(&rec, &truth, 50).unwrap(), Some(0.4));

        let rec: Vec<usize> = (95..150).collect();
        assert_eq!(hits_at_k(&rec, &truth, 50).unwrap(), Some(1.0));

        let truth = set(&(0..300).collect::<Vec<_>>());
        let mut rec: Vec<usize> = (0..120).collect();
        rec.extend(1000..1080);
        assert_eq!(hits_at_k(&rec, &truth, 200).unwrap(), Some(0.6));
    }

    #[test]
    fn hits_edge_cases() {
        assert!(hits_at_k(&[1], &set(&[1]), 0).is_err());
        assert_eq!(hits_at_k(&[1], &HashSet::new(), 5).unwrap(), None);
        // Short rankings and duplicates never overcount.
        assert_eq!(hits_at_k(&[1, 1], &set(&[1, 2]), 5).unwrap(), Some(0.5));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[2.0, 3.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auc(&[1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap(), 0.5);
        assert_eq!(auc(&[1.0, 3.0], &[2.0]).unwrap(), 0.5);
        assert_eq!(auc(&[0.0], &[1.0]).unwrap(), 0.0);
        assert!(auc(&[], &[1.0]).is_err());
        assert!(auc(&[f64::NAN], &[1.0]).is_err());
    }
}
