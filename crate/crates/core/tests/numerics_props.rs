use std::f64::consts::PI;

use invariant_forge::catalog::{generate_dataset, system, SystemSpec};
use invariant_forge::integrators::{integrate, FnField, IntegratorConfig};
use invariant_forge::neural::{grad_params, swish, train, MlpField, Segment, TrainConfig};
use invariant_forge::seeds;
use proptest::prelude::*;
use rand::Rng;

fn ho() -> SystemSpec {
    system("ho").unwrap()
}

fn ho_endpoint_error(h: f64) -> f64 {
    let z = integrate(&ho(), &[1.0, 0.0], &[0.0, 1.0], &IntegratorConfig::rk4(h)).unwrap();
    let end = &z[1];
    ((end[0] - 1f64.cos()).powi(2) + (end[1] + 1f64.sin()).powi(2)).sqrt()
}

#[test]
fn rk4_error_shrinks_by_about_sixteen_per_halving() {
    for h in [0.1, 0.05, 0.025] {
        let factor = ho_endpoint_error(h) / ho_endpoint_error(h / 2.0);
        assert!((12.0..=20.0).contains(&factor), "h = {h}: factor {factor}");
    }
}

#[test]
fn dopri5_tracks_the_analytic_solution() {
    let cfg = IntegratorConfig::default();
    let times: Vec<f64> = (0..=100).map(|k| 0.1 * k as f64).collect();
    let z = integrate(&ho(), &[1.0, 0.0], &times, &cfg).unwrap();
    for (t, s) in times.iter().zip(&z) {
        let err = ((s[0] - t.cos()).powi(2) + (s[1] + t.sin()).powi(2)).sqrt();
        assert!(err <= 100.0 * cfg.rtol, "t = {t}: {err:e}");
        let energy = s[0] * s[0] + s[1] * s[1];
        assert!((energy - 1.0).abs() <= 1e-5, "energy drift at t = {t}");
    }
}

#[test]
fn kepler_circular_orbit_closes() {
    let z0 = [1.0, 0.0, 0.0, 1.0];
    let z = integrate(&system("kepler").unwrap(), &z0, &[0.0, 2.0 * PI], &IntegratorConfig::default()).unwrap();
    for (a, b) in z[1].iter().zip(&z0) {
        assert!((a - b).abs() <= 1e-5, "{:?}", z[1]);
    }
}

#[test]
fn zero_field_is_stationary_for_both_methods() {
    let zero = FnField::new(3, |_: &[f64], out: &mut [f64]| out.fill(0.0));
    for cfg in [IntegratorConfig::rk4(0.1), IntegratorConfig::default()] {
        let z = integrate(&zero, &[1.0, -2.0, 3.0], &[0.0, 0.5, 4.0], &cfg).unwrap();
        assert!(z.iter().all(|s| s == &[1.0, -2.0, 3.0]));
    }
}

fn loss(net: &MlpField, batch: &[Segment]) -> f64 {
    grad_params(net, batch, None).unwrap().0
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let spec = ho();
    let ds = generate_dataset(&spec, 2, 2.0, 9, 0.0, 5).unwrap();
    let batch: Vec<Segment> =
        ds.trajectories.iter().map(|t| Segment::new(t.times.clone(), t.states.clone()).unwrap()).collect();
    let h = 1e-6;
    for net_seed in 0..10u64 {
        let mut net = MlpField::random(vec![2, 8, 8, 2], net_seed).unwrap();
        let (_, grad) = grad_params(&net, &batch, None).unwrap();
        let mut rng = seeds::rng(seeds::derive(net_seed, "coords"));
        for _ in 0..20 {
            let i = rng.random_range(0..net.n_params());
            let p0 = net.params()[i];
            net.params_mut()[i] = p0 + h;
            let up = loss(&net, &batch);
            net.params_mut()[i] = p0 - h;
            let down = loss(&net, &batch);
            net.params_mut()[i] = p0;
            let fd = (up - down) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-8);
            assert!(rel <= 1e-4, "net {net_seed} param {i}: {} vs {fd}", grad[i]);
        }
    }
}

#[test]
fn swish_limits() {
    assert_eq!(swish(0.0), 0.0);
    assert!((swish(30.0) / 30.0 - 1.0).abs() <= 1e-9);
}

#[test]
fn best_validation_mse_never_increases() {
    let ds = generate_dataset(&ho(), 4, 5.0, 20, 0.0, 1).unwrap();
    let cfg = TrainConfig { hidden: vec![16, 16], epochs: 15, ..Default::default() };
    let (_, report) = train(&ds, &cfg).unwrap();
    let best: Vec<f64> = report
        .val_mse
        .iter()
        .scan(f64::INFINITY, |b, v| {
            *b = b.min(*v);
            Some(*b)
        })
        .collect();
    assert!(best.windows(2).all(|w| w[1] <= w[0]));
    let (_, again) = train(&ds, &cfg).unwrap();
    assert_eq!(report.train_mse, again.train_mse);
    assert_eq!(report.val_mse, again.val_mse);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn forward_is_deterministic_and_finite(seed in any::<u64>(), x in -3.0f64..3.0, v in -3.0f64..3.0) {
        let net = MlpField::random(vec![2, 16, 16, 2], seed).unwrap();
        let a = net.forward(&[x, v]).unwrap();
        let b = std::thread::spawn(move || net.forward(&[x, v]).unwrap()).join().unwrap();
        prop_assert_eq!(a.len(), 2);
        prop_assert!(a.iter().all(|y| y.is_finite()));
        prop_assert_eq!(a, b);
    }
}
