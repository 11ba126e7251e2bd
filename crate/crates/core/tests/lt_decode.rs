//! LT decoder against an independent GF(2) rank count.

use coded_conv::lt::{combine, lt_overhead_trial, sample_encoding_vector, DecodeStatus, LtDecoder, RobustSoliton, RobustSolitonParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rank over GF(2) of `k`-bit rows stored as masks.
fn gf2_rank(rows: &[u64]) -> usize {
    let mut basis: Vec<u64> = Vec::new();
    for &r in rows {
        let reduced = basis.iter().fold(r, |acc, &b| acc.min(acc ^ b));
        if reduced != 0 {
            basis.push(reduced);
            basis.sort_unstable_by(|a, b| b.cmp(a));
        }
    }
    basis.len()
}

fn mask(indices: impl Iterator<Item = usize>) -> u64 {
    indices.fold(0, |m, i| m | 1 << i)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn complete_exactly_at_full_rank(k in 1usize..40, extra in 0usize..30, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = RobustSoliton::new(RobustSolitonParams::with_defaults(k).unwrap());
        let src: Vec<Vec<f64>> = (0..k).map(|_| (0..4).map(|_| rng.random_range(-8i32..8) as f64).collect()).collect();
        let mut dec = LtDecoder::new(k);
        let mut rows = Vec::new();
        for _ in 0..k + extra {
            let v = sample_encoding_vector(&dist, &mut rng);
            rows.push(mask(v.ones()));
            dec.push(combine(&src, v)).unwrap();
            prop_assert_eq!(dec.rank(), gf2_rank(&rows));
            prop_assert_eq!(dec.is_complete(), gf2_rank(&rows) == k);
            prop_assert!(dec.received() >= dec.rank());
        }
        match dec.status().unwrap() {
            DecodeStatus::Decoded(out) => {
                prop_assert!(dec.received() >= k);
                for (a, b) in out.iter().flatten().zip(src.iter().flatten()) {
                    prop_assert!((a - b).abs() <= 1e-9);
                }
            }
            DecodeStatus::NeedMore { rank } => prop_assert!(rank < k),
        }
    }
}

#[test]
fn symbols_to_decode_at_k100() {
    let stats = lt_overhead_trial(RobustSolitonParams::new(100, 0.03, 0.5).unwrap(), 200, 1).unwrap();
    assert!(stats.min >= 100);
    assert!(stats.mean <= 130.0, "mean {}", stats.mean);
}
