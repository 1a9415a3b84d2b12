mod common;

use balred::gramians::{
    bth_gramians, compatibility_check, fisher_matrix, infinite_gramians,
    infinite_noisy_observability, infinite_reachability, lg_gramians, make_compatible_prior,
    quadrature_gramian, tl_noisy_observability, tl_noisy_observability_with, tl_reachability,
    tl_reachability_with, whitened_output, GramianRoute, Side,
};
use balred::linalg::{rel_frobenius, sym_eigen, DenseMatrix, SymFactor};
use balred::models::{
    build_band_prior, build_heat_1d_with, prior_from_lyapunov, uniform_times, InferenceSetup,
    LtiSystem,
};
use balred::reduction::hankel_values;
use balred::Error;
use common::{rng, scalar, spd, stable, uniform, unstable};
use proptest::prelude::*;

fn scalar_sys(a: f64) -> LtiSystem {
    LtiSystem::continuous(scalar(a), scalar(1.0)).unwrap()
}

fn value(f: &SymFactor) -> f64 {
    f.gram()[(0, 0)]
}

#[test]
fn infinite_closed_forms() {
    let g = infinite_gramians(&scalar_sys(-1.0), &scalar(1.0), &scalar(1.0)).unwrap();
    assert!((value(&g.reach) - 0.5).abs() < 1e-14);
    assert!((value(&g.obs) - 0.5).abs() < 1e-14);
    let q = infinite_noisy_observability(&scalar_sys(-1.0), &scalar(0.25)).unwrap();
    assert!((value(&q) - 2.0).abs() < 1e-14);
    let disc = LtiSystem::discrete(scalar(0.5), scalar(1.0)).unwrap();
    let p = infinite_reachability(&disc, &scalar(1.0)).unwrap();
    assert!((value(&p) - 4.0 / 3.0).abs() < 1e-14);
    assert!(matches!(
        infinite_reachability(&scalar_sys(1.0), &scalar(1.0)),
        Err(Error::Stability(_))
    ));
}

#[test]
fn time_limited_closed_forms() {
    let e2 = (2.0f64).exp();
    let p = tl_reachability(&scalar_sys(-1.0), &scalar(1.0), 1.0).unwrap();
    assert!((value(&p) - (1.0 - 1.0 / e2) / 2.0).abs() < 1e-10);
    assert!((value(&p) - 0.43233235838).abs() < 1e-10);
    let p = tl_reachability(&scalar_sys(0.0), &scalar(1.0), 2.0).unwrap();
    assert!((value(&p) - 2.0).abs() < 1e-10);
    let p = tl_reachability(&scalar_sys(-1.0), &scalar(1.0), 40.0).unwrap();
    assert!((value(&p) - 0.5).abs() < 1e-15);

    let q = tl_noisy_observability(&scalar_sys(-1.0), &scalar(1.0), 1.0).unwrap();
    assert!((value(&q) - (1.0 - 1.0 / e2) / 2.0).abs() < 1e-10);
    let q = tl_noisy_observability(&scalar_sys(1.0), &scalar(1.0), 1.0).unwrap();
    assert!((value(&q) - (e2 - 1.0) / 2.0).abs() < 1e-10);
    assert!((value(&q) - 3.19452804946).abs() < 1e-10);
    let q4 = tl_noisy_observability(&scalar_sys(1.0), &scalar(4.0), 1.0).unwrap();
    assert!((value(&q4) - value(&q) / 4.0).abs() < 1e-14);
}

#[test]
fn quadrature_examples() {
    let sys = scalar_sys(-1.0);
    let quad = quadrature_gramian(&sys, &scalar(1.0), Side::Reach, 1.0, 1e-12).unwrap();
    let lyap = tl_reachability(&sys, &scalar(1.0), 1.0).unwrap();
    assert!((value(&quad) - value(&lyap)).abs() < 1e-10);

    let zero =
        LtiSystem::continuous(DenseMatrix::zeros(3, 3), DenseMatrix::identity(3, 3)).unwrap();
    let p =
        quadrature_gramian(&zero, &DenseMatrix::identity(3, 3), Side::Reach, 3.0, 1e-12).unwrap();
    assert!((p.gram() - DenseMatrix::identity(3, 3) * 3.0).amax() < 1e-12);
}

#[test]
fn fisher_examples() {
    let one = InferenceSetup::new(
        scalar_sys(0.0),
        SymFactor::identity(1),
        scalar(1.0),
        vec![1.0],
    )
    .unwrap();
    assert!((fisher_matrix(&one).unwrap()[(0, 0)] - 1.0).abs() < 1e-15);
    // single measurement, H = 1 and P = 1
    let h = hankel_values(&one.prior().clone(), &bth_gramians(&one).unwrap().obs).unwrap();
    assert!((h[0] - 1.0).abs() < 1e-14);

    let two = InferenceSetup::new(
        scalar_sys(-1.0),
        SymFactor::identity(1),
        scalar(1.0),
        vec![1.0, 2.0],
    )
    .unwrap();
    let want = (-2.0f64).exp() + (-4.0f64).exp();
    assert!((fisher_matrix(&two).unwrap()[(0, 0)] - want).abs() < 1e-15);

    let none = InferenceSetup::new(
        scalar_sys(-1.0),
        SymFactor::identity(1),
        scalar(1.0),
        vec![],
    )
    .unwrap();
    let obs = bth_gramians(&none).unwrap().obs;
    assert!(matches!(
        hankel_values(none.prior(), &obs),
        Err(Error::Degenerate(_))
    ));
}

#[test]
fn fisher_riemann_limit() {
    let h = 1e-4;
    let setup = InferenceSetup::new(
        scalar_sys(-1.0),
        SymFactor::identity(1),
        scalar(1.0),
        uniform_times(h, 1.0).unwrap(),
    )
    .unwrap();
    let riemann = fisher_matrix(&setup).unwrap()[(0, 0)] * h;
    let q = value(&tl_noisy_observability(setup.system(), &scalar(1.0), 1.0).unwrap());
    assert!((riemann - q).abs() <= 1e-3 * q);
}

#[test]
fn fisher_splits_over_interleaved_grids() {
    let mut r = rng(11);
    let sys = LtiSystem::continuous(stable(&mut r, 6), uniform(&mut r, 2, 6)).unwrap();
    let noise = spd(&mut r, 2);
    let times: Vec<f64> = (1..=30).map(|k| 0.1 * k as f64).collect();
    let make = |t: Vec<f64>| {
        InferenceSetup::new(sys.clone(), SymFactor::identity(6), noise.clone(), t).unwrap()
    };
    let whole = fisher_matrix(&make(times.clone())).unwrap();
    let odd = fisher_matrix(&make(times.iter().copied().step_by(2).collect())).unwrap();
    let even = fisher_matrix(&make(times.iter().copied().skip(1).step_by(2).collect())).unwrap();
    assert!(rel_frobenius(&(even + odd), &whole) < 1e-12);
}

#[test]
fn compatibility_examples() {
    let (ok, defect) = compatibility_check(&scalar(-1.0), &SymFactor::identity(1)).unwrap();
    assert!(ok && (defect + 2.0).abs() < 1e-14);
    let (ok, defect) = compatibility_check(&scalar(1.0), &SymFactor::identity(1)).unwrap();
    assert!(!ok && (defect - 2.0).abs() < 1e-14);

    let g = make_compatible_prior(&scalar_sys(-1.0), &SymFactor::identity(1)).unwrap();
    assert!((value(&g) - 1.0).abs() < 1e-12);

    let mut r = rng(5);
    let sys = LtiSystem::continuous(stable(&mut r, 8), uniform(&mut r, 1, 8)).unwrap();
    let prior = prior_from_lyapunov(&sys, &uniform(&mut r, 8, 8)).unwrap();
    assert!(compatibility_check(sys.a(), &prior).unwrap().0);
    let fixed = make_compatible_prior(&sys, &prior).unwrap();
    assert!(rel_frobenius(&fixed.gram(), &prior.gram()) < 1e-10);
}

#[test]
fn heat_band_prior_is_made_compatible() {
    let sys = build_heat_1d_with(200, 0.01).unwrap();
    let band = build_band_prior(200, 7).unwrap();
    assert!(!compatibility_check(sys.a(), &band).unwrap().0);
    let fixed = make_compatible_prior(&sys, &band).unwrap();
    let (ok, defect) = compatibility_check(sys.a(), &fixed).unwrap();
    let g = fixed.gram();
    let m = sys.a() * &g + &g * sys.a().transpose();
    let norm2 = sym_eigen(&m)
        .unwrap()
        .values
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(ok, "defect {defect:e}");
    assert!(defect <= 1e-10 * norm2);
}

#[test]
fn lg_pair_uses_prior_and_time_limited_obs() {
    let mut r = rng(2);
    let setup = common::random_setup(&mut r, 5, 2, 10, 1.0, false);
    let pair = lg_gramians(&setup, GramianRoute::Auto).unwrap();
    assert_eq!(pair.reach, setup.prior().clone());
    let q = tl_noisy_observability(setup.system(), setup.noise_cov(), 1.0).unwrap();
    assert!(rel_frobenius(&pair.obs.gram(), &q.gram()) < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lyapunov_and_quadrature_routes_agree(
        n in 1usize..=20,
        seed in any::<u64>(),
        t_e in 0.2f64..2.0,
        unstable_a in any::<bool>(),
    ) {
        let mut r = rng(seed);
        let a = if unstable_a { unstable(&mut r, n) } else { stable(&mut r, n) };
        let sys = LtiSystem::continuous(a, uniform(&mut r, 2, n)).unwrap();
        let b = uniform(&mut r, n, 2);
        let lyap = tl_reachability_with(&sys, &b, t_e, GramianRoute::Lyapunov).unwrap().gram();
        let quad = quadrature_gramian(&sys, &b, Side::Reach, t_e, 1e-12).unwrap().gram();
        prop_assert!(rel_frobenius(&lyap, &quad) < 1e-8, "{}", rel_frobenius(&lyap, &quad));
        let noise = spd(&mut r, 2);
        let lyap = tl_noisy_observability_with(&sys, &noise, t_e, GramianRoute::Lyapunov)
            .unwrap()
            .gram();
        let w = whitened_output(sys.c(), &noise).unwrap();
        let quad = quadrature_gramian(&sys, &w, Side::Obs, t_e, 1e-12).unwrap().gram();
        prop_assert!(rel_frobenius(&lyap, &quad) < 1e-8, "{}", rel_frobenius(&lyap, &quad));
    }

    #[test]
    fn reachability_grows_to_the_infinite_gramian(
        n in 1usize..=12,
        seed in any::<u64>(),
        t1 in 0.05f64..2.0,
        dt in 0.0f64..2.0,
    ) {
        let mut r = rng(seed);
        let sys = LtiSystem::continuous(stable(&mut r, n), uniform(&mut r, 1, n)).unwrap();
        let b = uniform(&mut r, n, 2);
        let p1 = tl_reachability(&sys, &b, t1).unwrap().gram();
        let p2 = tl_reachability(&sys, &b, t1 + dt).unwrap().gram();
        let scale = sym_eigen(&p2).unwrap().values[0];
        let low = *sym_eigen(&(&p2 - &p1)).unwrap().values.last().unwrap();
        prop_assert!(low >= -1e-10 * scale);
        let far = tl_reachability(&sys, &b, 400.0).unwrap().gram();
        let inf = infinite_reachability(&sys, &b).unwrap().gram();
        prop_assert!(rel_frobenius(&far, &inf) < 1e-10);
    }

    #[test]
    fn discrete_observability_is_the_explicit_sum(
        n in 1usize..=20,
        seed in any::<u64>(),
        steps in 1usize..=50,
    ) {
        let mut r = rng(seed);
        let m = uniform(&mut r, n, n);
        let a = &m * (1.1 / m.norm());
        let c = uniform(&mut r, 2, n);
        let noise = spd(&mut r, 2);
        let sys = LtiSystem::discrete(a.clone(), c.clone()).unwrap();
        let q = tl_noisy_observability(&sys, &noise, steps as f64).unwrap().gram();
        let w = whitened_output(&c, &noise).unwrap();
        let mut sum = DenseMatrix::zeros(n, n);
        let mut ak = DenseMatrix::identity(n, n);
        for _ in 0..steps {
            let wk = &w * &ak;
            sum += wk.transpose() * wk;
            ak = &a * ak;
        }
        prop_assert!(rel_frobenius(&q, &sum) < 1e-10, "{}", rel_frobenius(&q, &sum));
    }

    #[test]
    fn observability_is_reachability_of_the_dual(
        n in 1usize..=10,
        seed in any::<u64>(),
        t_e in 0.2f64..2.0,
    ) {
        let mut r = rng(seed);
        let a = unstable(&mut r, n);
        let c = uniform(&mut r, 2, n);
        let noise = spd(&mut r, 2);
        let sys = LtiSystem::continuous(a.clone(), c.clone()).unwrap();
        let q = tl_noisy_observability(&sys, &noise, t_e).unwrap().gram();
        let dual = LtiSystem::continuous(a.transpose(), DenseMatrix::identity(n, n)).unwrap();
        let b = whitened_output(&c, &noise).unwrap().transpose();
        let p = tl_reachability(&dual, &b, t_e).unwrap().gram();
        prop_assert!(rel_frobenius(&q, &p) < 1e-10);
    }
}
