use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use superexpressive::encoder::ApproxConfig;
use superexpressive::kst::{build_multivariate, decompose, skeleton_multivariate, subnetwork_count, Provider, Superposition};
use superexpressive::{ActivationKind, ActivationSpec, Error};

#[test]
fn subnetwork_count_is_quadratic() {
    for d in 1..=3 {
        assert_eq!(subnetwork_count(d), (d + 1) * (2 * d + 1));
    }
}

#[test]
fn sums_decompose_exactly_and_additive_maps_to_table_resolution() {
    let sum = |x: &[f64]| x[0] + x[1];
    let exact = decompose(&sum, 2, &Provider::default()).unwrap();
    assert!(exact.residual < 1e-6, "residual {}", exact.residual);

    let f = |x: &[f64]| (2.0 * x[0]).sin() + x[1] * x[1];
    let sup = decompose(&f, 2, &Provider::default()).unwrap();
    assert!(sup.residual < 1e-2, "residual {}", sup.residual);
    assert!(sup.history.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let x = [rng.gen::<f64>(), rng.gen::<f64>()];
        let g = |y: &[f64]| f(y);
        assert!((sup.eval(&g, &x) - f(&x)).abs() < 1e-2, "{x:?}");
    }
}

#[test]
fn product_leaves_a_small_residual() {
    let f = |x: &[f64]| x[0] * x[1];
    let sup = decompose(&f, 2, &Provider::default()).unwrap();
    assert!(sup.residual > 0.0 && sup.residual < 0.05, "residual {}", sup.residual);
    assert_eq!(sup.terms(), 5);
    let back = Superposition::from_text(&sup.to_text()).unwrap();
    assert_eq!(back.outer, sup.outer);
    assert_eq!(back.inner, sup.inner);
}

#[test]
fn one_dimensional_build_meets_eps() {
    let spec = ActivationSpec::for_kind(ActivationKind::Euaf);
    let f = |x: &[f64]| (3.0 * x[0]).cos();
    let m = build_multivariate(&f, 1, (0.0, 1.0), &spec, &ApproxConfig::new(0.2), &Provider::default()).unwrap();
    assert_eq!(m.report.subnetworks, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let x = rng.gen::<f64>();
        assert!((m.network.forward(&[x]).unwrap()[0] - f(&[x])).abs() < 0.2);
    }
}

#[test]
fn two_variable_build_on_a_shifted_box() {
    let spec = ActivationSpec::for_kind(ActivationKind::Rho3);
    let f = |x: &[f64]| x[0] - 0.5 * x[1];
    let m = build_multivariate(&f, 2, (-1.0, 2.0), &spec, &ApproxConfig::new(0.3), &Provider::default()).unwrap();
    assert_eq!(m.network.architecture(), skeleton_multivariate(&spec, 2).unwrap().architecture());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let x = [rng.gen_range(-1.0..=2.0), rng.gen_range(-1.0..=2.0)];
        let err = (m.network.forward(&x).unwrap()[0] - f(&x)).abs();
        assert!(err < 0.3, "{x:?} {err}");
    }
}

#[test]
fn unattainable_eps_fails_loudly() {
    let spec = ActivationSpec::for_kind(ActivationKind::Euaf);
    let f = |x: &[f64]| x[0] * x[1];
    match build_multivariate(&f, 2, (0.0, 1.0), &spec, &ApproxConfig::new(1e-4), &Provider::default()) {
        Err(Error::DecompositionFailure { residual, cap }) => assert!(residual > cap),
        Err(Error::SearchFailure { .. }) => {}
        other => panic!("expected a failure, got {:?}", other.map(|m| m.report)),
    }
    assert!(build_multivariate(&f, 4, (0.0, 1.0), &spec, &ApproxConfig::new(0.3), &Provider::default()).is_err());
}
