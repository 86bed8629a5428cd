use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::ingest::{IdIndex, Quarter, QuarterSnapshot};

/// Holders invested in each fund at one quarter, indexed by a shared id
/// mapping that spans every quarter being compared.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub quarter: Quarter,
    pub holders_by_fund: Vec<HashSet<usize>>,
}

impl GroundTruth {
    /// Truth sets of `snapshot` under the shared `holder_index`/`fund_index`.
    pub fn from_snapshot(snapshot: &QuarterSnapshot, holder_index: &IdIndex, fund_index: &IdIndex) -> Result<Self> {
        let mut holders_by_fund = vec![HashSet::new(); fund_index.len()];
        for p in &snapshot.positions {
            let h = holder_index
                .get(&p.holder_id)
                .ok_or_else(|| Error::IdSpaceMismatch(format!("holder {} missing from shared index", p.holder_id)))?;
            let f = fund_index
                .get(&p.fund_id)
                .ok_or_else(|| Error::IdSpaceMismatch(format!("fund {} missing from shared index", p.fund_id)))?;
            holders_by_fund[f].insert(h);
        }
        Ok(Self {
            quarter: snapshot.quarter,
            holders_by_fund,
        })
    }

    pub fn num_funds(&self) -> usize {
        self.holders_by_fund.len()
    }

    pub fn holders(&self, fund: usize) -> &HashSet<usize> {
        static EMPTY: std::sync::OnceLock<HashSet<usize>> = std::sync::OnceLock::new();
        self.holders_by_fund
            .get(fund)
            .unwrap_or_else(|| EMPTY.get_or_init(HashSet::new))
    }
}

/// Per-fund `truth_t1[f] \ truth_t[f]`, labelled with the later quarter.
/// Funds whose difference is empty keep an empty set and get skipped by the
/// evaluator.
pub fn newly_added_split(truth_t: &GroundTruth, truth_t1: &GroundTruth) -> GroundTruth {
    let holders_by_fund = truth_t1
        .holders_by_fund
        .iter()
        .enumerate()
        .map(|(f, later)| later.difference(truth_t.holders(f)).copied().collect())
        .collect();
    GroundTruth {
        quarter: truth_t1.quarter,
        holders_by_fund,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth(q: u8, sets: &[&[usize]]) -> GroundTruth {
        GroundTruth {
            quarter: Quarter::new(2021, q).unwrap(),
            holders_by_fund: sets.iter().map(|s| s.iter().copied().collect()).collect(),
        }
    }

    #[test]
    fn set_difference_by_hand() {
        let t = truth(3, &[&[1, 2, 3]]);
        let t1 = truth(4, &[&[2, 3, 4, 5]]);
        let got = newly_added_split(&t, &t1);
        assert_eq!(got.holders(0), &[4, 5].into_iter().collect());
        assert_eq!(got.quarter, t1.quarter);
    }

    #[test]
    fn identical_quarters_leave_nothing() {
        let t = truth(3, &[&[1, 2], &[0]]);
        let got = newly_added_split(&t, &t);
        assert!(got.holders_by_fund.iter().all(HashSet::is_empty));
    }

    #[test]
    fn empty_earlier_quarter_keeps_everything() {
        let t = truth(3, &[]);
        let t1 = truth(4, &[&[1, 2], &[7]]);
        assert_eq!(newly_added_split(&t, &t1).holders_by_fund, t1.holders_by_fund);
    }
}
