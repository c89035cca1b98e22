use invariant_forge::catalog::{catalog, system, SystemKind};
use invariant_forge::neural::{sample_pairs, MlpField};
use invariant_forge::symbolic::{evaluate_gradient, grad_symbolic, parse_str, sample_expr, Grammar};
use invariant_forge::verifier::{certify, certify_pairs, drift_check, hull_sample, DefectMode, VerifyError};
use invariant_forge::Expr;
use proptest::prelude::*;

#[test]
fn true_invariants_certify_against_exact_fields() {
    for spec in catalog() {
        let points = sample_pairs(&spec, &spec.sampling_box, 10_000, 1);
        let points: Vec<Vec<f64>> = points.into_iter().map(|(z, _)| z).collect();
        for inv in &spec.invariants {
            let r = certify(&inv.expr, &spec, &points, 1e-6, DefectMode::Raw).unwrap();
            assert!(r.max_defect <= 1e-12, "{} {}: {:e}", spec.name, inv.label, r.max_defect);
            assert!(r.verdict);
        }
        if spec.kind == SystemKind::Lorenz {
            continue;
        }
        for (i, name) in spec.variables.iter().enumerate() {
            let r = certify(&Expr::var(i, name.clone()), &spec, &points, 1e-6, DefectMode::Raw).unwrap();
            assert!(!r.verdict, "{} coordinate {name} certified", spec.name);
        }
        let c = certify(&Expr::constant(5.0), &spec, &points, 1e-6, DefectMode::Raw);
        assert!(matches!(c, Err(VerifyError::GradientDegenerate { .. })));
    }
}

#[test]
fn drift_separates_true_energy_from_spurious_candidate() {
    let spec = system("pendulum").unwrap();
    let vars = &spec.variables;
    let energy = &spec.invariants[0].expr;
    assert!(drift_check(energy, &spec, 10, 10.0).unwrap() <= 1e-5);
    let q = &vars[0];
    let p = &vars[1];
    let text = format!("add mul 0.8 add mul {p} {p} mul {q} {q} mul 0.3 sin {q}");
    let spurious = parse_str(&text, vars).unwrap();
    assert!(drift_check(&spurious, &spec, 10, 10.0).unwrap() > 0.05);
}

#[test]
fn hull_samples_are_reproducible() {
    let spec = system("ho").unwrap();
    let cloud: Vec<Vec<f64>> = sample_pairs(&spec, &spec.sampling_box, 300, 2).into_iter().map(|p| p.0).collect();
    assert_eq!(hull_sample(&cloud, 500, 4).unwrap(), hull_sample(&cloud, 500, 4).unwrap());
}

fn net_pairs(seed: u64, n: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let spec = system("ho").unwrap();
    let net = MlpField::random(vec![2, 8, 2], seed).unwrap();
    sample_pairs(&net, &spec.sampling_box, n, seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn max_defect_grows_with_points(seed in any::<u64>(), split in 1usize..200) {
        let e = sample_expr(&Grammar::new(vec!["x".into(), "v".into()]), seed).unwrap();
        let pairs = net_pairs(seed, 200);
        for mode in [DefectMode::Raw, DefectMode::Normalized] {
            let (Ok(a), Ok(b)) = (certify_pairs(&e, &pairs[..split], 1e-3, mode), certify_pairs(&e, &pairs, 1e-3, mode))
            else { continue };
            prop_assert!(b.max_defect >= a.max_defect);
            prop_assert_eq!(&b, &certify_pairs(&e, &pairs, 1e-3, mode).unwrap());
        }
    }

    #[test]
    fn normalized_defect_is_bounded_by_raw(seed in any::<u64>()) {
        let e = sample_expr(&Grammar::new(vec!["x".into(), "v".into()]), seed).unwrap();
        let pairs = net_pairs(seed, 100);
        let grad = grad_symbolic(&e, 2);
        let mut g = vec![0.0; 2];
        let mut denom = f64::INFINITY;
        for (z, f) in &pairs {
            if evaluate_gradient(&grad, z, &mut g).is_err() {
                return Ok(());
            }
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let fnorm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            denom = denom.min(gn * fnorm);
        }
        prop_assume!(denom > 1e-12);
        let raw = certify_pairs(&e, &pairs, 1.0, DefectMode::Raw);
        let norm = certify_pairs(&e, &pairs, 1.0, DefectMode::Normalized);
        if let (Ok(raw), Ok(norm)) = (raw, norm) {
            prop_assert!(norm.max_defect <= raw.max_defect / denom * (1.0 + 1e-12));
        }
    }
}
