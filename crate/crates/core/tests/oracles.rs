mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use syndecomp::inference::{project_cone, simplex_grid, weight_confidence_set};
use syndecomp::simulation::{population_system, Family};
use syndecomp::weights::solve_simplex_qp;
use syndecomp::MomentSystem;

fn psd_from(entries: &[f64], k: usize, rank: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(k, rank, |i, j| entries[i * 6 + j]);
    &a * a.transpose()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qp_matches_grid_oracle(
        k in 2usize..=4,
        rank_frac in 0.0f64..1.0,
        entries in proptest::collection::vec(-1.0f64..1.0, 36),
        hv in proptest::collection::vec(-1.0f64..1.0, 6),
    ) {
        let rank = 1 + ((k - 1) as f64 * rank_frac).round() as usize;
        let h = psd_from(&entries, k, rank);
        let hv = DVector::from_column_slice(&hv[..k]);
        let sys = MomentSystem::new(h.clone(), hv.clone(), 0.0, 100).unwrap();
        let sol = solve_simplex_qp(&sys).unwrap();
        let (_, oracle) = common::qp_oracle(&h, &hv);
        prop_assert!(sys.objective(&sol.w_vec()) <= oracle + 1e-9);
        prop_assert!(sol.verify_kkt(&sys).is_ok());
    }

    #[test]
    fn cone_matches_sign_pattern_oracle(
        k in 2usize..=5,
        seed in any::<u64>(),
        n0 in 10usize..5000,
    ) {
        use rand::Rng;
        let mut rng = common::rng(seed);
        let w = common::random_sparse_simplex(&mut rng, k);
        let raw = DVector::from_fn(k, |_, _| rng.random_range(-2.0..2.0));
        let y = raw.add_scalar(-w.dot(&raw));
        let omega = common::random_psd(&mut rng, k, k) + DMatrix::identity(k, k) * 0.05;
        let p = project_cone(&y, &omega, &w, n0).unwrap();
        let (t, df) = common::cone_oracle(&y, &omega, &w, n0);
        prop_assert!((p.t_value - t).abs() <= 1e-8 * (1.0 + t));
        prop_assert_eq!(p.df, df);
    }
}

#[test]
fn population_weights_for_a_range_of_overlaps() {
    for fam in [Family::Linear, Family::Nonlinear] {
        for s in [0.3, 0.5, 0.7, 0.9, 1.0] {
            let sys = population_system(fam, s).unwrap();
            let sol = solve_simplex_qp(&sys).unwrap();
            let w0 = DVector::from_column_slice(&fam.true_weights());
            assert!((sol.w_vec() - &w0).amax() <= 1e-8, "{fam:?} s={s}: {:?}", sol.w);
            assert!(sys.rho_sq(&w0).abs() <= 1e-12);
        }
    }
}

#[test]
fn population_moments_match_quadrature() {
    let s = 0.6;
    let sys = population_system(Family::Nonlinear, s).unwrap();
    let c = Family::Nonlinear.coefficients();
    let g = |k: usize, x: f64| c[k][0] + c[k][1] * x + c[k][2] * x * x + c[k][3] * x.powi(3);
    for a in 0..3 {
        let hv = common::simpson(|x| g(a + 1, x) * g(0, x), 1.0 - s, 1.0, 2000);
        assert!((sys.h_vec[a] - hv).abs() < 1e-12);
        for b in 0..3 {
            let hm = common::simpson(|x| g(a + 1, x) * g(b + 1, x), 1.0 - s, 1.0, 2000);
            assert!((sys.h_mat[(a, b)] - hm).abs() < 1e-12);
        }
    }
}

#[test]
fn minimizer_is_always_in_the_weight_set() {
    // T at the minimizer is zero, so the set contains it for any metric
    let mut rng = common::rng(42);
    for k in 2..=5 {
        let sys = common::random_system(&mut rng, k);
        let sol = solve_simplex_qp(&sys).unwrap();
        let mut grid = simplex_grid(k, 50, 1);
        grid.push(sol.w_vec());
        let omega = DMatrix::identity(k, k) * 1e-6;
        let set = weight_confidence_set(&sys, &omega, 0.005, &grid).unwrap();
        assert!(*set.accepted.last().unwrap());
        assert!(set.points.last().unwrap().t_value < 1e-12 * (1.0 + sys.h_vec.norm()));
    }
}
