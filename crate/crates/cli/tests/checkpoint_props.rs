use std::sync::OnceLock;

use hlrp_cli::{Checkpoint, CheckpointError};
use hlrp_core::eval::{generate_synthetic, SyntheticConfig};
use hlrp_core::numeric::Matrix;
use hlrp_core::predictor::{train_on_snapshot, TrainConfig};
use proptest::prelude::*;

fn base() -> &'static Checkpoint {
    static CK: OnceLock<Checkpoint> = OnceLock::new();
    CK.get_or_init(|| {
        let data = generate_synthetic(&SyntheticConfig {
            num_holders: 12,
            num_funds: 6,
            ..Default::default()
        })
        .unwrap();
        let config = TrainConfig {
            epochs: 1,
            embedding_dim: 3,
            hidden_dim: 3,
            mlp_hidden: 2,
            test_fraction: 0.2,
            ..Default::default()
        };
        Checkpoint::new(train_on_snapshot(&data.snapshot_t().unwrap(), &config).unwrap()).unwrap()
    })
}

fn bits(m: &Matrix) -> Vec<u64> {
    m.data().iter().map(|v| v.to_bits()).collect()
}

/// Matrices reject NaN and infinities; flipping one exponent bit keeps
/// every other bit pattern (subnormals, signed zeros) in play.
fn finite_from_bits(b: u64) -> f64 {
    let v = f64::from_bits(b);
    if v.is_finite() {
        v
    } else {
        f64::from_bits(b ^ (1 << 62))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arbitrary_parameter_bits_round_trip(raw in prop::collection::vec(any::<u64>(), 512)) {
        let mut ck = base().clone();
        let names: Vec<String> = ck.model.params.names().map(str::to_string).collect();
        let mut next = raw.iter().cycle();
        for name in &names {
            let (r, c) = ck.model.params.value(name).unwrap().shape();
            let data = (0..r * c).map(|_| finite_from_bits(*next.next().unwrap())).collect();
            ck.model.params.set_value(name, Matrix::from_vec(r, c, data).unwrap()).unwrap();
        }
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        for name in &names {
            prop_assert_eq!(
                bits(ck.model.params.value(name).unwrap()),
                bits(back.model.params.value(name).unwrap())
            );
        }
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn every_truncation_is_rejected(cut in 0usize..10_000) {
        let bytes = base().to_bytes().unwrap();
        let cut = cut % bytes.len();
        prop_assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
    }

    #[test]
    fn corrupted_bytes_never_panic(at in any::<prop::sample::Index>(), value in any::<u8>()) {
        let mut bytes = base().to_bytes().unwrap();
        let i = at.index(bytes.len());
        bytes[i] = value;
        // Data bytes may legitimately decode to a different model; header
        // damage must surface as an error, not a panic.
        if let Err(e) = Checkpoint::from_bytes(&bytes) {
            prop_assert!(!e.to_string().is_empty());
        }
    }
}

#[test]
fn empty_input_is_truncated() {
    assert!(matches!(Checkpoint::from_bytes(&[]), Err(CheckpointError::Truncated(_))));
}
