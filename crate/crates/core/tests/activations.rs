use std::collections::BTreeSet;

use hnn::activations::*;
use hnn::{Tensor, C64};
use proptest::prelude::*;

fn preset(name: &str) -> ComplexActivation {
    complex_presets().into_iter().find(|a| a.name.as_deref() == Some(name)).unwrap()
}

fn eval(a: &ComplexActivation, z: C64) -> C64 {
    activate(&Activation::Complex(a.clone()), &Tensor::complex_vector(vec![z])).unwrap().complex_data().unwrap()[0]
}

fn eval_real(a: &ComplexActivation, x: &[f64]) -> Vec<f64> {
    activate(&Activation::Complex(a.clone()), &Tensor::vector(x.to_vec())).unwrap().real_data().unwrap().to_vec()
}

fn elu(x: f64) -> f64 {
    if x > 0.0 { x } else { x.exp_m1() }
}

fn axis() -> Vec<f64> {
    (0..=600).map(|i| -3.0 + 0.01 * i as f64).collect()
}

fn max_dev(a: &ComplexActivation, reference: impl Fn(f64) -> f64) -> f64 {
    let x = axis();
    eval_real(a, &x).iter().zip(&x).map(|(y, &x)| (y - reference(x)).abs()).fold(0.0, f64::max)
}

#[test]
fn presets_load_as_printed() {
    let names: Vec<_> = complex_presets().into_iter().map(|a| a.name.unwrap()).collect();
    assert_eq!(names, ["cRecip", "cReLU", "cAbs", "cTanhshrink", "cTanh", "cSoftPlus", "cReImLU", "cRecipMax"]);
    let all = list_presets();
    assert_eq!(all.len(), 9);
    assert_eq!(all.iter().filter(|a| a.is_none()).count(), 1);

    let sp = preset("cSoftPlus");
    assert_eq!((sp.family, sp.q, sp.alpha.re, sp.k[0].re, sp.k[2].re, sp.epsilon), (Family::Ps, 2, 0.5, 2.134, 0.5, 9.481));
    let rm = preset("cRecipMax");
    assert_eq!((rm.family, rm.q, rm.alpha.re, rm.k[0].re, rm.k[1].re, rm.epsilon), (Family::E, 2, 0.9, 0.1, 0.5, 0.1));
    let ri = preset("cReImLU");
    assert_eq!((ri.family, ri.alpha.re, ri.k[0].re, ri.k[1].re), (Family::D, 0.95, 0.1, 1.0));
    let th = preset("cTanh");
    assert_eq!((th.family, th.q, th.k[1].re, th.epsilon), (Family::Ps, 2, 1.0, 1.0));

    for a in list_presets() {
        let back: Activation = a.name().parse().unwrap();
        assert_eq!(back, a);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<Activation>(&json).unwrap(), a);
    }
    assert!("ctanh".parse::<Activation>().is_err());
}

#[test]
fn worked_values() {
    assert!((eval(&preset("cTanh"), C64::new(1.0, 0.0)).re - 0.5f64.sqrt()).abs() < 1e-12);
    let relu = preset("cReLU");
    assert!((eval(&relu, C64::new(2.0, 0.0)).re - (1.0 + 2.0 / 2.01)).abs() < 1e-12);
    // 0.5·(−2) + 0.5·4/2.01 is slightly negative.
    assert!((eval(&relu, C64::new(-2.0, 0.0)).re - (-1.0 + 2.0 / 2.01)).abs() < 1e-12);
    assert!((eval(&preset("cAbs"), C64::new(-2.0, 0.0)).re - 4.0 / 2.01).abs() < 1e-12);
    let surrogate = eval_real(&ComplexActivation::elu_surrogate(), &[-1.0])[0];
    assert!((surrogate - (-0.6328)).abs() < 1e-3);
    assert!((elu(-1.0) - (-0.6321)).abs() < 1e-4);
}

#[test]
fn real_activations() {
    let x = Tensor::vector(vec![-3.0, 0.0]);
    assert_eq!(activate_real("ReLU", &x).unwrap().real_data().unwrap(), &[0.0, 0.0]);
    assert_eq!(activate_real("Tanhshrink", &x).unwrap().real_data().unwrap()[1], 0.0);
    assert!((activate_real("Softplus", &x).unwrap().real_data().unwrap()[1] - 2f64.ln()).abs() < 1e-15);
    assert!(activate_real("Swish", &x).is_err());
}

#[test]
fn shape_fidelity_on_real_axis() {
    assert!(max_dev(&preset("cReLU"), |x| x.max(0.0)) < 0.05);
    assert!(max_dev(&preset("cAbs"), f64::abs) < 0.05);
    assert!(max_dev(&ComplexActivation::elu_surrogate(), elu) < 0.05);
}

#[test]
fn invalid_coefficients_are_rejected() {
    let bad = ComplexActivation::new(Family::P, 1, 0.0, [0.0, 1.0, 0.0, 0.0], 0.0);
    assert!(bad.validate().is_err());
    let bad = ComplexActivation::new(Family::E, 2, 1.5, [0.0, 0.0, 0.0, 0.0], 0.1);
    assert!(bad.validate().is_err());
    assert!(activate(&Activation::Complex(bad), &Tensor::vector(vec![1.0])).is_err());
}

#[test]
fn sign_gate_is_zero_at_the_kink() {
    let ri = preset("cReImLU");
    // v = 0 exactly: gate off, output scaled by 1 − α.
    let z = C64::new(0.1, 0.0);
    assert!((eval(&ri, z) - z * 0.05).norm() < 1e-15);
}

fn complex_strategy() -> impl Strategy<Value = C64> {
    (1e-3..10.0f64, -3.1..3.1f64).prop_map(|(m, t)| C64::from_polar(m, t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn phase_equivariant_presets(z in complex_strategy()) {
        for name in ["cRecip", "cTanh"] {
            let y = eval(&preset(name), z);
            prop_assert!((y.arg() - z.arg()).abs() < 1e-12, "{} at {}", name, z);
        }
        prop_assert!(eval(&preset("cTanh"), z).norm() < 1.0);
    }

    #[test]
    fn presets_keep_the_real_axis_real(x in -10.0..10.0f64) {
        for a in complex_presets() {
            let y = eval(&a, C64::new(x, 0.0));
            prop_assert!(y.im.abs() < 1e-12, "{:?}", a.name);
            prop_assert!((eval_real(&a, &[x])[0] - y.re).abs() < 1e-12);
        }
    }

    #[test]
    fn family_e_approaches_identity(z in complex_strategy()) {
        let base = preset("cRecipMax");
        let mut prev = f64::INFINITY;
        for alpha in [0.5, 0.1, 1e-2, 1e-4, 0.0] {
            let a = ComplexActivation { alpha: C64::new(alpha, 0.0), ..base.clone() };
            let d = (eval(&a, z) - z).norm();
            prop_assert!(d <= prev + 1e-12);
            prev = d;
        }
        prop_assert!(prev < 1e-15);
    }

    #[test]
    fn complex_coefficients_force_complex_output(x in -3.0..3.0f64) {
        let a = ComplexActivation { k: [C64::new(0.0, 0.0), C64::new(0.0, 1.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)], ..preset("cTanh") };
        let y = activate(&Activation::Complex(a), &Tensor::vector(vec![x])).unwrap();
        prop_assert!(y.is_complex());
    }
}

#[test]
fn names_are_unique() {
    let names: BTreeSet<_> = list_presets().iter().map(|a| a.name()).collect();
    assert_eq!(names.len(), 9);
}
