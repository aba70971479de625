use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robcomp_core::data::{parse_libsvm, split_validation, write_libsvm, Dataset, SparseVector};
use robcomp_core::dro::{lse_grad, lse_value};
use robcomp_core::linalg;
use robcomp_core::prox::{prox_step, prox_step_ball, Regularizer};

fn regularizer() -> impl Strategy<Value = Regularizer> {
    prop_oneof![
        Just(Regularizer::None),
        (0.0f64..5.0).prop_map(Regularizer::L1),
        (0.0f64..5.0).prop_map(Regularizer::L2),
    ]
}

fn vec_pair(d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-50f64..50.0, d), prop::collection::vec(-50f64..50.0, d))
}

fn sparse_rows(dim: u32) -> impl Strategy<Value = Vec<(f64, Vec<(u32, f64)>)>> {
    let row = (
        -1e6f64..1e6,
        prop::collection::btree_map(0..dim, -1e3f64..1e3, 0..6).prop_map(|m| m.into_iter().collect::<Vec<_>>()),
    );
    prop::collection::vec(row, 2..40)
}

fn dataset(rows: &[(f64, Vec<(u32, f64)>)], dim: usize) -> Dataset {
    let (features, labels) = rows
        .iter()
        .map(|(y, x)| {
            let (i, v) = x.iter().copied().unzip();
            (SparseVector::new(i, v).unwrap(), *y)
        })
        .unzip();
    Dataset::new(features, labels, dim, "prop").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn prox_is_nonexpansive(
        (a, b) in vec_pair(6),
        w in prop::collection::vec(-50f64..50.0, 6),
        eta in 1e-3f64..10.0,
        r in regularizer(),
    ) {
        // both points share the same anchor, so only the gradient differs
        let pa = prox_step(&a, &w, eta, &r).unwrap();
        let pb = prox_step(&b, &w, eta, &r).unwrap();
        prop_assert!(linalg::dist(&pa, &pb) <= eta * linalg::dist(&a, &b) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn ball_prox_stays_feasible(
        (g, w) in vec_pair(5),
        w0 in prop::collection::vec(-10f64..10.0, 5),
        eta in 1e-3f64..10.0,
        radius in 1e-3f64..20.0,
        r in regularizer(),
    ) {
        let p = prox_step_ball(&g, &w, &w0, eta, radius, &r).unwrap();
        prop_assert!(linalg::dist(&p, &w0) <= radius * (1.0 + 1e-12));
    }

    #[test]
    fn lse_is_shift_invariant(
        u in prop::collection::vec(-1e3f64..1e3, 1..12),
        c in -1e3f64..1e3,
        lam in 1e-2f64..10.0,
    ) {
        let shifted: Vec<f64> = u.iter().map(|x| x + c).collect();
        let lhs = lse_value(&shifted, lam);
        let rhs = lse_value(&u, lam) + c;
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
        let (ga, gb) = (lse_grad(&u, lam), lse_grad(&shifted, lam));
        prop_assert!(linalg::dist(&ga, &gb) <= 1e-9);
        prop_assert!((ga.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn split_is_disjoint_and_exhaustive(n in 2usize..200, frac in 0.01f64..0.99, seed in any::<u64>()) {
        let labels: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let data = Dataset::new(vec![SparseVector::default(); n], labels, 1, "ids").unwrap();
        let (train, valid) = split_validation(&data, frac, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(!train.is_empty() && !valid.is_empty());
        let mut ids: Vec<usize> = train.labels.iter().chain(&valid.labels).map(|&y| y as usize).collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn libsvm_round_trip_is_lossless(rows in sparse_rows(30)) {
        let data = dataset(&rows, 30);
        let mut buf = Vec::new();
        write_libsvm(&data, &mut buf).unwrap();
        let back = parse_libsvm(buf.as_slice(), "back").unwrap();
        prop_assert_eq!(&back.labels, &data.labels);
        prop_assert_eq!(&*back.features, &*data.features);
        prop_assert!(back.dim <= data.dim);
    }
}
