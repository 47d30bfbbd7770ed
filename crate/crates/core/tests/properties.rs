//! Property tests for the kernel and ranking invariants.

use kgc_core::eval::filtered_rank;
use kgc_core::tensor::{numerical_rank, trace_norm, DenseMatrix, DenseTensor3, Mode};
use kgc_core::train::loss_triplet;
use proptest::prelude::*;

fn tensor_strategy(max_dim: usize) -> impl Strategy<Value = DenseTensor3> {
    (1..=max_dim, 1..=max_dim, 1..=max_dim).prop_flat_map(|(a, b, c)| {
        proptest::collection::vec(-10.0..10.0f64, a * b * c)
            .prop_map(move |v| DenseTensor3::from_values((a, b, c), v).unwrap())
    })
}

fn matrix_strategy(max_dim: usize) -> impl Strategy<Value = DenseMatrix> {
    (1..=max_dim, 1..=max_dim).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-10.0..10.0f64, r * c)
            .prop_map(move |v| DenseMatrix::from_values(r, c, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_unfold_round_trip(t in tensor_strategy(5)) {
        for mode in Mode::ALL {
            let back = DenseTensor3::fold(&t.unfold(mode), mode, t.shape()).unwrap();
            prop_assert_eq!(&back, &t);
        }
    }

    #[test]
    fn mode_product_matches_triple_loop(
        t in tensor_strategy(5),
        rows in 1..5usize,
        seed in 0..u32::MAX,
    ) {
        for mode in Mode::ALL {
            let contracted = match mode {
                Mode::One => t.shape().0,
                Mode::Two => t.shape().1,
                Mode::Three => t.shape().2,
            };
            // cheap deterministic fill for the matrix
            let mut m = DenseMatrix::zeros(rows, contracted);
            let mut state = seed as u64 + 1;
            for v in m.values_mut() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *v = ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0;
            }
            let fast = t.mode_product(&m, mode).unwrap();
            // brute force
            let (n1, n2, n3) = t.shape();
            for i in 0..fast.shape().0 {
                for j in 0..fast.shape().1 {
                    for k in 0..fast.shape().2 {
                        let mut want = 0.0;
                        match mode {
                            Mode::One => {
                                for x in 0..n1 { want += m.get(i, x) * t.get(x, j, k); }
                            }
                            Mode::Two => {
                                for x in 0..n2 { want += m.get(j, x) * t.get(i, x, k); }
                            }
                            Mode::Three => {
                                for x in 0..n3 { want += m.get(k, x) * t.get(i, j, x); }
                            }
                        }
                        let got = fast.get(i, j, k);
                        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn kronecker_norm_factorizes(a in matrix_strategy(4), b in matrix_strategy(4)) {
        let lhs = a.kronecker(&b).frobenius_norm();
        let rhs = a.frobenius_norm() * b.frobenius_norm();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
    }

    #[test]
    fn trace_norm_dominates_frobenius_and_scales(m in matrix_strategy(5), c in -4.0..4.0f64) {
        let tn = trace_norm(&m).unwrap();
        prop_assert!(tn >= 0.0);
        prop_assert!(tn + 1e-9 >= m.frobenius_norm());
        let scaled = trace_norm(&m.scaled(c)).unwrap();
        prop_assert!((scaled - c.abs() * tn).abs() <= 1e-9 * tn.max(1.0));
    }

    #[test]
    fn numerical_rank_scale_invariant(m in matrix_strategy(4)) {
        let r = numerical_rank(&m).unwrap();
        prop_assert_eq!(numerical_rank(&m.scaled(1e4)).unwrap(), r);
        prop_assert_eq!(numerical_rank(&m.scaled(-3.0)).unwrap(), r);
    }

    #[test]
    fn filtered_rank_bounds_and_monotone_invariance(
        scores in proptest::collection::vec(-100.0..100.0f64, 2..40),
        true_ix in 0..40usize,
        filter_mask in proptest::collection::vec(any::<bool>(), 40),
    ) {
        let n = scores.len();
        let true_k = true_ix % n;
        let filter: Vec<usize> = (0..n)
            .filter(|&k| filter_mask.get(k).copied().unwrap_or(false))
            .collect();
        let rank = filtered_rank(&scores, true_k, &filter);
        prop_assert!(rank >= 1 && rank <= n);

        // strictly increasing transforms preserve every rank
        let mapped: Vec<f64> = scores.iter().map(|s| s.tanh() * 3.0 + 0.5 * s).collect();
        prop_assert_eq!(filtered_rank(&mapped, true_k, &filter), rank);

        // enlarging the filter never increases the rank
        let larger: Vec<usize> = (0..n).collect();
        prop_assert!(filtered_rank(&scores, true_k, &larger) <= rank);
    }

    #[test]
    fn loss_shift_invariance_and_floor(
        scores in proptest::collection::vec(-30.0..30.0f64, 1..30),
        k_ix in 0..30usize,
        shift in -50.0..50.0f64,
        pen in 0.0..10.0f64,
    ) {
        let k = k_ix % scores.len();
        let base = loss_triplet(&scores, k, pen);
        // loss minus penalty is non-negative
        prop_assert!(base - pen >= -1e-12);
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let moved = loss_triplet(&shifted, k, pen);
        prop_assert!((base - moved).abs() <= 1e-9);
    }
}
