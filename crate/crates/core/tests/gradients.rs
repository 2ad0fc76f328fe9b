use std::f64::consts::PI;

use hnn::activations::{complex_presets, Activation, ComplexActivation, Family, RealActivation};
use hnn::autograd::value_and_grad;
use hnn::conversion::{ConversionSpec, C2R, R2C};
use hnn::graph::{BlockSpec, HeadSpec, InputSpec, Network, NetworkSpec, PathKind, PathSpec};
use hnn::layers::{avg_pool, gradient_check, Bamn, Conv1d, ConvConfig, Domain, Dropout, Init, Linear, Padding};
use hnn::{Result, Session, Tensor, Var, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-5;
const POINTS: usize = 50;

/// Real scalar that depends on every output component.
fn project<'t>(s: &Session<'t>, out: Var<'t>) -> Result<Var<'t>> {
    let shape = out.shape();
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    if out.is_complex() {
        let w: Vec<C64> = (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        out.mul(s.constant(Tensor::complex(shape, w)?))?.re()?.sum()
    } else {
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        out.mul(s.constant(Tensor::real(shape, w)?))?.sum()
    }
}

fn random(rng: &mut ChaCha8Rng, domain: Domain, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    match domain {
        Domain::Real => Tensor::real(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
        Domain::Complex => Tensor::complex(
            shape,
            (0..n)
                .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap(),
    }
}

/// `n` complex points with modulus in [0.2, 2] satisfying `ok`.
fn points(rng: &mut ChaCha8Rng, n: usize, ok: impl Fn(C64) -> bool) -> Vec<C64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let z = C64::from_polar(rng.random_range(0.2..2.0), rng.random_range(-PI..PI));
        if ok(z) {
            out.push(z);
        }
    }
    out
}

fn check_no_params(x: &Tensor, f: impl for<'t> Fn(Var<'t>) -> Result<Var<'t>>) -> f64 {
    gradient_check(&(), x, STEP, |_, s, x| project(s, f(x)?)).unwrap()
}

#[test]
fn conv_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let configs = [
        ConvConfig::new(2, 3, 3),
        ConvConfig { padding: Padding::Valid, ..ConvConfig::new(3, 2, 2) },
        ConvConfig { stride: 2, ..ConvConfig::new(2, 2, 3) },
        ConvConfig { groups: 2, ..ConvConfig::new(4, 2, 1) },
        ConvConfig { bias: false, ..ConvConfig::new(1, 2, 5) },
    ];
    for domain in [Domain::Real, Domain::Complex] {
        for (i, cfg) in configs.iter().enumerate() {
            for point in 0..POINTS / configs.len() {
                let conv = Conv1d::new(&mut Init::new(point as u64), domain, cfg.clone()).unwrap();
                let x = random(&mut rng, domain, &[2, cfg.in_channels, 6]);
                let err = gradient_check(&conv, &x, STEP, |m, s, x| project(s, m.forward(s, x)?)).unwrap();
                assert!(err < TOL, "{domain:?} config {i}: {err}");
            }
        }
    }
}

#[test]
fn linear_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for domain in [Domain::Real, Domain::Complex] {
        for point in 0..POINTS {
            let lin = Linear::new(&mut Init::new(point as u64), domain, 4, 3, point % 2 == 0).unwrap();
            let x = random(&mut rng, domain, &[2, 4]);
            let err = gradient_check(&lin, &x, STEP, |m, s, x| project(s, m.forward(s, x)?)).unwrap();
            assert!(err < TOL, "{domain:?}: {err}");
        }
    }
}

#[test]
fn bamn_dropout_and_pooling() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..POINTS {
        let x = random(&mut rng, Domain::Complex, &[3, 2, 4]);
        let bamn = Bamn::new(2);
        let err = check_no_params(&x, |x| bamn.forward(&Session::new(x.tape(), true, 0), x));
        assert!(err < TOL, "bamn {err}");
        let drop = Dropout::new(0.3).unwrap();
        let err = gradient_check(&(), &x, STEP, |_, s, x| project(s, drop.forward(s, x)?)).unwrap();
        assert!(err < TOL, "dropout {err}");
        let err = check_no_params(&x, |x| avg_pool(x, 2));
        assert!(err < TOL, "pool {err}");
    }
}

#[test]
fn hybrid_network_end_to_end() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let relu: Activation = "Softplus".parse().unwrap();
    let ctanh: Activation = "cTanh".parse().unwrap();
    let mut rr = PathSpec::new(2, 3, relu.clone());
    rr.optional.dropout = Some(0.2);
    let mut cc = PathSpec::new(2, 3, ctanh.clone());
    cc.optional.norm = true;
    let block = BlockSpec::default()
        .with(PathKind::RR, rr)
        .with(PathKind::RC, PathSpec::new(2, 3, relu).with_conversion("Polar"))
        .with(PathKind::CR, PathSpec::new(2, 3, ctanh.clone()).with_conversion("MagAbsPhase"))
        .with(PathKind::CC, cc);
    let spec = NetworkSpec {
        input: InputSpec { real_channels: 2, complex_channels: 2, conversion: None },
        blocks: vec![block.clone(), BlockSpec { pool: Some(2), ..block }],
        head: HeadSpec { outputs: 3, real: true, complex: true, complex_conversion: C2R::Real },
    };
    for seed in 0..5 {
        let net = Network::build(&spec, seed).unwrap();
        let xr = random(&mut rng, Domain::Real, &[2, 2, 6]);
        let xc = random(&mut rng, Domain::Complex, &[2, 2, 6]);
        let c = xc.clone();
        let err = gradient_check(&net, &xr, STEP, move |m, s, x| {
            let out = m.forward(s, Some(x), Some(s.constant(c.clone())))?;
            out.cross_entropy(&[0, 2])
        })
        .unwrap();
        assert!(err < TOL, "network seed {seed}: {err}");
    }
}

fn clear_of_kinks(a: &ComplexActivation) -> impl Fn(C64) -> bool + '_ {
    move |z: C64| match a.family {
        Family::D | Family::E => {
            let v = z.re - a.k[1].re * z.im.abs() - a.k[0].re;
            v.abs() > 0.05 && z.im.abs() > 0.05
        }
        _ => true,
    }
}

#[test]
fn every_complex_activation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut all = complex_presets();
    all.push(ComplexActivation::elu_surrogate());
    for a in &all {
        let z = points(&mut rng, POINTS, clear_of_kinks(a));
        let x = Tensor::complex_vector(z);
        let err = check_no_params(&x, |x| a.apply(x));
        assert!(err < TOL, "{:?}: {err}", a.name);
        let reals: Vec<f64> = points(&mut rng, POINTS, |z| clear_of_kinks(a)(C64::new(z.re, 0.1)))
            .into_iter()
            .map(|z| z.re)
            .collect();
        let err = check_no_params(&Tensor::vector(reals), |x| a.apply(x));
        assert!(err < TOL, "{:?} on reals: {err}", a.name);
    }
}

#[test]
fn every_real_activation() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for a in RealActivation::ALL {
        let x: Vec<f64> = (0..POINTS)
            .map(|_| {
                let v: f64 = rng.random_range(0.05..3.0);
                if rng.random_bool(0.5) { v } else { -v }
            })
            .collect();
        let err = check_no_params(&Tensor::vector(x), |x| a.apply(x));
        assert!(err < TOL, "{}: {err}", a.name());
    }
}

/// Points away from the loci where a conversion is not smooth.
fn conversion_safe(spec: &ConversionSpec, z: C64) -> bool {
    let near = |a: f64, b: f64| {
        let d = (a - b).rem_euclid(2.0 * PI);
        d.min(2.0 * PI - d) < 0.05
    };
    match *spec {
        ConversionSpec::C2R { kind: C2R::AbsPhase | C2R::MagAbsPhase | C2R::Polar, .. } => !near(z.arg(), 0.0) && !near(z.arg(), PI),
        ConversionSpec::C2R { kind: C2R::MultiMagPhase, n_phases } => (0..n_phases).all(|n| {
            let t = 2.0 * PI * n as f64 / n_phases as f64;
            !near(z.arg(), t) && !near(z.arg(), t + PI)
        }),
        _ => true,
    }
}

#[test]
fn every_conversion() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for spec in ConversionSpec::all() {
        let arity = spec.in_arity();
        let x = match spec {
            ConversionSpec::R2C { .. } => {
                let v: Vec<f64> = (0..POINTS * arity)
                    .map(|_| {
                        let v: f64 = rng.random_range(0.05..1.5);
                        if rng.random_bool(0.5) { v } else { -v }
                    })
                    .collect();
                Tensor::real([POINTS, arity], v).unwrap()
            }
            ConversionSpec::C2R { .. } => {
                let z = points(&mut rng, POINTS, |z| conversion_safe(&spec, z));
                Tensor::complex([POINTS, 1], z).unwrap()
            }
        };
        let err = check_no_params(&x, |x| spec.apply(x));
        assert!(err < TOL, "{spec}: {err}");
    }
}

#[test]
fn r2c_kinds_are_covered() {
    let r2c = ConversionSpec::all().into_iter().filter(|s| matches!(s, ConversionSpec::R2C { .. })).count();
    assert_eq!(r2c, R2C::ALL.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn complex_product_rule(ar in -2.0..2.0f64, ai in -2.0..2.0f64, br in -2.0..2.0f64, bi in -2.0..2.0f64, cr in -2.0..2.0f64, ci in -2.0..2.0f64) {
        let (a, b, c) = (C64::new(ar, ai), C64::new(br, bi), C64::new(cr, ci));
        let (_, g) = value_and_grad(
            |_, v| v[0].mul(v[1])?.mul_complex(c)?.re()?.sum(),
            &[Tensor::complex_vector(vec![a]), Tensor::complex_vector(vec![b])],
        ).unwrap();
        let ga = g[0].complex_data().unwrap()[0];
        let gb = g[1].complex_data().unwrap()[0];
        prop_assert!((ga - (c * b).conj()).norm() < 1e-12);
        prop_assert!((gb - (c * a).conj()).norm() < 1e-12);
    }

    #[test]
    fn promotion_round_trip(v in proptest::collection::vec(-1e6..1e6f64, 1..20)) {
        let t = Tensor::vector(v);
        prop_assert_eq!(t.to_complex().re(), t);
    }
}
