use adaclab::behavior::{build_hankel, HankelPair};
use adaclab::controller::{project_m, AdacParams};
use adaclab::learner::ogd_step;
use adaclab::lti::{accumulated_disturbances, simulate, DisturbanceGen, LtiSystem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `l` blocks of shape `m x q` with entries in `[-scale, scale]`.
fn blocks(l: usize, m: usize, q: usize, scale: f64) -> impl Strategy<Value = Vec<DMatrix<f64>>> {
    prop::collection::vec(prop::collection::vec(-scale..scale, m * q), l)
        .prop_map(move |bs| bs.into_iter().map(|v| DMatrix::from_vec(m, q, v)).collect())
}

fn shaped_pair() -> impl Strategy<Value = (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, f64)> {
    (1usize..4, 1usize..4, 1usize..4, 0.2f64..2.0)
        .prop_flat_map(|(l, m, q, d)| (blocks(l, m, q, 3.0), blocks(l, m, q, 3.0), Just(d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn projection_lands_inside_and_stays_put((a, _, d) in shaped_pair()) {
        let p = project_m(&AdacParams::from_blocks(a, d).unwrap());
        prop_assert!(p.is_feasible());
        prop_assert_eq!(project_m(&p), p);
    }

    #[test]
    fn projection_never_expands_distances((a, b, d) in shaped_pair()) {
        let (a, b) = (AdacParams::from_blocks(a, d).unwrap(), AdacParams::from_blocks(b, d).unwrap());
        let before = (a.to_flat() - b.to_flat()).norm();
        let after = (project_m(&a).to_flat() - project_m(&b).to_flat()).norm();
        prop_assert!(after <= before * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn feasible_points_are_fixed((a, _, d) in shaped_pair()) {
        let p = AdacParams::from_blocks(a, d).unwrap();
        if p.max_block_norm() <= d {
            prop_assert_eq!(project_m(&p), p);
        }
    }

    #[test]
    fn gradient_steps_stay_feasible((a, g, d) in shaped_pair(), eta in 1e-3f64..10.0) {
        let p = project_m(&AdacParams::from_blocks(a, d).unwrap());
        let next = ogd_step(&p, &g, eta).unwrap();
        prop_assert!(next.is_feasible());
    }

    #[test]
    fn hankel_columns_are_sliding_windows(len in 4usize..20, dim in 1usize..3, l in 1usize..4, seed in any::<u64>()) {
        prop_assume!(l <= len);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq: Vec<DVector<f64>> = (0..len).map(|_| DVector::from_fn(dim, |_, _| rand::Rng::random::<f64>(&mut rng))).collect();
        let h = build_hankel(&seq, l).unwrap();
        prop_assert_eq!(h.shape(), (l * dim, len - l + 1));
        for j in 0..h.ncols() {
            for i in 0..l {
                prop_assert_eq!(h.view((i * dim, j), (dim, 1)).into_owned(), DMatrix::from_column_slice(dim, 1, seq[i + j].as_slice()));
            }
        }
    }

    #[test]
    fn accumulated_disturbance_obeys_its_recursion(seed in any::<u64>(), rho in 0.2f64..0.95, steps in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = LtiSystem::<f64>::random(2, 1, rho, &mut rng).unwrap();
        let w: Vec<DVector<f64>> = (0..steps).map(|_| DVector::from_fn(2, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0))).collect();
        let acc = accumulated_disturbances(&sys, &w);
        prop_assert!((&acc[0] - &w[0]).norm() < 1e-12);
        for t in 1..steps {
            prop_assert!((&acc[t] - (sys.a() * &acc[t - 1] + &w[t])).norm() < 1e-12);
        }
    }

    #[test]
    fn clean_pair_predicts_its_own_windows(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = LtiSystem::<f64>::random(2, 1, 0.8, &mut rng).unwrap();
        let (l, len) = (4, 40);
        let u: Vec<DVector<f64>> = (0..len).map(|_| DVector::from_fn(1, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0))).collect();
        let tr = simulate(&sys, &u, &DisturbanceGen::zero(2), None, &DVector::zeros(2), len).unwrap();
        let h = HankelPair::new(&u, &tr.states[..len], l).unwrap();
        let stacked = h.stacked();
        for j in [0, h.hu().ncols() / 2, h.hu().ncols() - 1] {
            let col = stacked.column(j).into_owned();
            let alpha = h.solve_alpha(&col);
            prop_assert!((&stacked * &alpha - col).norm() < 1e-8);
            let last = h.hs().view(((l - 1) * 2, j), (2, 1)).column(0).into_owned();
            prop_assert!((h.readout(&alpha) - last).norm() < 1e-8);
        }
    }
}
