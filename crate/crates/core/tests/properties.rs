use std::collections::{BTreeMap, HashSet};

use hlrp_core::baseline::{cosine_similarity, diversity_constrain, SegmentQuota};
use hlrp_core::eval::{auc, hits_at_k, newly_added_split, GroundTruth};
use hlrp_core::features::{build_schema, featurize, min_max_scale, segment_by_aum};
use hlrp_core::graph::{sample_negative_edges, split_edges, BipartiteGraph, NodeRef};
use hlrp_core::ingest::{Position, Quarter, QuarterSnapshot};
use proptest::prelude::*;

fn edges_strategy() -> impl Strategy<Value = (usize, usize, Vec<(usize, usize)>)> {
    (1usize..12, 1usize..8).prop_flat_map(|(m, n)| {
        (
            Just(m),
            Just(n),
            prop::collection::vec((0..m, 0..n), 0..(m * n * 2)),
        )
    })
}

proptest! {
    #[test]
    fn adjacency_is_consistent((m, n, edges) in edges_strategy()) {
        let g = BipartiteGraph::build(m, n, &edges).unwrap();
        let unique: HashSet<_> = edges.iter().copied().collect();
        prop_assert_eq!(g.num_edges(), unique.len());
        for &(h, f) in g.edges() {
            prop_assert!(g.neighbors(NodeRef::holder(h)).unwrap().contains(&f));
            prop_assert!(g.neighbors(NodeRef::fund(f)).unwrap().contains(&h));
        }
        let holder_sum: usize = (0..m).map(|h| g.degree(NodeRef::holder(h)).unwrap()).sum();
        let fund_sum: usize = (0..n).map(|f| g.degree(NodeRef::fund(f)).unwrap()).sum();
        prop_assert_eq!(holder_sum, g.num_edges());
        prop_assert_eq!(fund_sum, g.num_edges());
    }

    #[test]
    fn negatives_are_distinct_non_edges((m, n, edges) in edges_strategy(), seed in any::<u64>(), ratio in 0.0f64..3.0) {
        let g = BipartiteGraph::build(m, n, &edges).unwrap();
        match sample_negative_edges(&g, ratio, seed) {
            Ok(neg) => {
                let mut seen = HashSet::new();
                for e in &neg {
                    prop_assert_eq!(e.label, 0);
                    prop_assert!(!g.has_edge(e.holder, e.fund));
                    prop_assert!(seen.insert((e.holder, e.fund)));
                }
                let want = (ratio * g.num_edges() as f64).round() as usize;
                let pool = m * n - g.num_edges();
                prop_assert_eq!(neg.len(), want.min(pool));
                prop_assert_eq!(neg, sample_negative_edges(&g, ratio, seed).unwrap());
            }
            Err(_) => prop_assert!(g.is_complete()),
        }
    }

    #[test]
    fn split_partitions_positives((m, n, edges) in edges_strategy(), seed in any::<u64>()) {
        let g = BipartiteGraph::build(m, n, &edges).unwrap();
        if let Ok(s) = split_edges(&g, 0.3, seed) {
            let mut all: Vec<_> = s.train_pos.iter().chain(&s.test_pos).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all.as_slice(), g.edges());
            prop_assert!(s.test_neg.iter().all(|&(h, f)| !g.has_edge(h, f)));
            prop_assert!(s.test_neg.len() <= s.test_pos.len());
        }
    }

    #[test]
    fn cosine_is_bounded_and_symmetric(a in prop::collection::vec(-10.0f64..10.0, 5), b in prop::collection::vec(-10.0f64..10.0, 5)) {
        let ab = cosine_similarity(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, cosine_similarity(&b, &a).unwrap());
    }

    #[test]
    fn hits_monotone_in_k(ranking in prop::collection::vec(0usize..40, 0..40), truth in prop::collection::hash_set(0usize..40, 1..20)) {
        let mut prev = 0.0;
        let mut prev_hits = 0usize;
        for k in 1..45 {
            let h = hits_at_k(&ranking, &truth, k).unwrap().unwrap();
            prop_assert!((0.0..=1.0).contains(&h));
            // Counts never drop; the rate can only fall while k is below |truth|.
            let hits = (h * k.min(truth.len()) as f64).round() as usize;
            prop_assert!(hits >= prev_hits);
            if k >= truth.len() {
                prop_assert!(h >= prev - 1e-12 || k == truth.len());
            }
            prev = h;
            prev_hits = hits;
        }
    }

    #[test]
    fn auc_complement(pos in prop::collection::vec(-5i32..5, 1..15), neg in prop::collection::vec(-5i32..5, 1..15)) {
        let p: Vec<f64> = pos.iter().map(|&x| f64::from(x)).collect();
        let n: Vec<f64> = neg.iter().map(|&x| f64::from(x)).collect();
        let a = auc(&p, &n).unwrap();
        prop_assert!((a + auc(&n, &p).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quota_sums_to_k(props in prop::collection::vec(0.01f64..1.0, 1..6), k in 1usize..300) {
        let q = SegmentQuota::new(&props, k).unwrap();
        prop_assert_eq!(q.total(), k);
        let total: f64 = props.iter().sum();
        for (c, p) in q.counts.iter().zip(&props) {
            prop_assert!((*c as f64 - p / total * k as f64).abs() < 1.0);
        }
    }

    #[test]
    fn diversity_output_is_a_rank_ordered_subset(aum in prop::collection::vec(1.0f64..1e6, 8..40), k in 1usize..20, seed in any::<u64>()) {
        let seg = segment_by_aum(&aum, 4).unwrap();
        let mut order: Vec<usize> = (0..aum.len()).collect();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = hlrp_core::seed::derive(s, 1, i as u64);
            order.swap(i, (s % (i as u64 + 1)) as usize);
        }
        let ranked: Vec<(usize, f64)> = order.iter().enumerate().map(|(r, &h)| (h, -(r as f64))).collect();
        let out = diversity_constrain(&ranked, &seg, k).unwrap();
        prop_assert_eq!(out.len(), k.min(ranked.len()));
        let pos: BTreeMap<usize, usize> = ranked.iter().enumerate().map(|(i, r)| (r.0, i)).collect();
        prop_assert!(out.windows(2).all(|w| pos[&w[0].0] < pos[&w[1].0]));
        if k <= aum.len() {
            // Every holder is a candidate, so each segment can fill its quota exactly.
            let quota = SegmentQuota::new(&seg.proportions(), k).unwrap();
            let mut got = vec![0usize; 4];
            for (h, _) in &out {
                got[seg.segment_of(*h).unwrap()] += 1;
            }
            prop_assert_eq!(got, quota.counts);
        }
    }

    #[test]
    fn newly_added_is_disjoint_from_earlier_truth(
        t in prop::collection::vec(prop::collection::hash_set(0usize..30, 0..10), 5),
        t1 in prop::collection::vec(prop::collection::hash_set(0usize..30, 0..10), 5),
    ) {
        let q = Quarter::new(2021, 3).unwrap();
        let a = GroundTruth { quarter: q, holders_by_fund: t };
        let b = GroundTruth { quarter: q.next(), holders_by_fund: t1 };
        let new = newly_added_split(&a, &b);
        for f in 0..5 {
            prop_assert!(new.holders(f).is_disjoint(a.holders(f)));
            prop_assert!(new.holders(f).is_subset(b.holders(f)));
        }
    }

    #[test]
    fn scaled_features_in_unit_interval(rows in prop::collection::vec(prop::collection::vec(0.0f64..1e9, 4), 1..20)) {
        let m = hlrp_core::numeric::Matrix::from_rows(&rows).unwrap();
        let fm = hlrp_core::features::FeatureMatrix { kind: hlrp_core::NodeKind::Holder, values: m };
        let (scaled, _) = min_max_scale(&fm).unwrap();
        for j in 0..4 {
            let col: Vec<f64> = (0..scaled.rows()).map(|i| scaled.values.get(i, j)).collect();
            prop_assert!(col.iter().all(|v| (0.0..=1.0).contains(v)));
            let raw: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let constant = raw.iter().all(|&v| v == raw[0]);
            if constant {
                prop_assert!(col.iter().all(|&v| v == 0.0));
            } else {
                prop_assert_eq!(col.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
                prop_assert_eq!(col.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
            }
        }
    }
}

fn position(q: Quarter, h: usize, f: usize, v: f64, cats: &[&str]) -> Position {
    Position {
        quarter: q,
        holder_id: format!("h{h}"),
        fund_id: format!("f{f}"),
        market_value: v,
        category: cats[f % cats.len()].to_string(),
        strategy: if f % 2 == 0 { "active" } else { "passive" }.to_string(),
        issuer: format!("iss{}", f % 3),
    }
}

#[test]
fn featurize_matches_brute_force_on_a_fixed_snapshot() {
    let q = Quarter::new(2022, 1).unwrap();
    let cats = ["Equity", "Bond"];
    let ps = vec![
        position(q, 0, 0, 10.0, &cats),
        position(q, 0, 1, 5.0, &cats),
        position(q, 1, 1, 5.0, &cats),
    ];
    let snap = QuarterSnapshot::from_positions(q, ps).unwrap();
    let schema = build_schema(&[&snap]).unwrap();
    let (h, f) = featurize(&snap, &schema).unwrap();
    let col = |fam: &str, v: &str| schema.column_index(fam, v).unwrap();
    assert_eq!(h.values.get(0, col("category", "Equity")), 10.0);
    assert_eq!(h.values.get(0, col("category", "Bond")), 5.0);
    assert_eq!(h.values.get(1, col("category", "Bond")), 5.0);
    assert_eq!(f.values.get(1, col("strategy", "passive")), 10.0);
    assert_eq!(f.values.get(0, col("issuer", "iss0")), 10.0);
}
