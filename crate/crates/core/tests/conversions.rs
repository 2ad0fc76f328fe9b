use std::f64::consts::PI;

use hnn::conversion::*;
use hnn::{Tensor, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c2r(kind: C2R, z: &[C64]) -> Vec<f64> {
    let x = Tensor::complex([1, z.len()], z.to_vec()).unwrap();
    convert(&ConversionSpec::c2r(kind), &x).unwrap().real_data().unwrap().to_vec()
}

fn r2c(kind: R2C, x: &[f64]) -> Vec<C64> {
    let t = Tensor::real([1, x.len()], x.to_vec()).unwrap();
    convert(&ConversionSpec::r2c(kind), &t).unwrap().complex_data().unwrap().to_vec()
}

fn close(a: C64, b: C64) -> bool {
    (a - b).norm() < 1e-12
}

#[test]
fn worked_values() {
    assert!(close(r2c(R2C::Polar, &[1.0, 0.5])[0], C64::new(0.0, 1.0)));
    assert!(close(r2c(R2C::Exp, &[1.0])[0], C64::new(-1.0, 0.0)));
    assert!(close(r2c(R2C::Rotation, &[1.0, 0.0, 1.0])[0], C64::new(-1.0, 0.0)));
    let s = r2c(R2C::Sqrt, &[-4.0])[0];
    assert!(close(s, C64::new(0.0, 2.0)));
    assert!(close(s * s, C64::new(-4.0, 0.0)));
    assert!(close(r2c(R2C::MagExp, &[-0.5])[0], C64::new(0.0, -0.5)));
    assert!(close(r2c(R2C::Cartesian, &[3.0, 4.0])[0], C64::new(3.0, 4.0)));

    let z = C64::new(3.0, 4.0);
    assert_eq!(c2r(C2R::Mag, &[z]), [5.0]);
    assert_eq!(c2r(C2R::Cartesian, &[z]), [3.0, 4.0]);
    assert_eq!(c2r(C2R::Polar, &[C64::new(-1.0, 0.0)]), [1.0, 1.0]);
    let mmr = c2r(C2R::MultiMagReal, &[C64::new(1.0, 0.0)]);
    for (a, b) in mmr.iter().zip([1.0, 0.25, 0.25]) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(c2r(C2R::AbsPhase, &[C64::new(0.0, 0.0)]), [0.0]);
}

#[test]
fn arities_and_grouping() {
    for spec in ConversionSpec::all() {
        let expected_in = match spec {
            ConversionSpec::R2C { kind: R2C::Cartesian | R2C::Polar } => 2,
            ConversionSpec::R2C { kind: R2C::Rotation } => 3,
            _ => 1,
        };
        assert_eq!(spec.in_arity(), expected_in, "{spec}");
    }
    assert_eq!(ConversionSpec::c2r(C2R::MagAbsPhase).out_arity(), 2);
    assert_eq!(ConversionSpec::multi_phase(C2R::MultiMagPhase, 5).out_arity(), 5);
    assert!(ConversionSpec::r2c(R2C::Rotation).output_channels(4).is_err());
    assert!(ConversionSpec::multi_phase(C2R::MultiMagReal, 0).validate().is_err());

    // Consecutive channels form one group: [x0, x1, x2, x3] → [x0 + ix1, x2 + ix3].
    let t = Tensor::real([1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let z = convert(&ConversionSpec::r2c(R2C::Cartesian), &t).unwrap();
    assert_eq!(z.shape(), [1, 2, 1]);
    assert_eq!(z.complex_data().unwrap(), &[C64::new(1.0, 2.0), C64::new(3.0, 4.0)]);
    // Multi-output kinds emit their outputs consecutively per input channel.
    let y = convert(&ConversionSpec::c2r(C2R::Cartesian), &z).unwrap();
    assert_eq!(y, t);
}

#[test]
fn lossless_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z: Vec<C64> = (0..1000)
        .map(|_| C64::from_polar(10f64.powf(rng.random_range(-3.0..3.0)), rng.random_range(-PI..PI)))
        .collect();
    let x = Tensor::complex([1, z.len()], z.clone()).unwrap();
    for spec in [ConversionSpec::c2r(C2R::Cartesian), ConversionSpec::c2r(C2R::Polar), ConversionSpec::c2r(C2R::MultiMagReal)] {
        assert!(spec.is_lossless());
        let back = invert_lossless(&spec, &convert(&spec, &x).unwrap()).unwrap();
        let err = back.complex_data().unwrap().iter().zip(&z).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{spec}: {err}");
    }
    assert!(invert_lossless(&ConversionSpec::c2r(C2R::Mag), &Tensor::real([1, 1], vec![1.0]).unwrap()).is_err());
    assert!(!ConversionSpec::multi_phase(C2R::MultiMagReal, 2).is_lossless());
}

#[test]
fn domain_errors() {
    let real = Tensor::real([1, 1], vec![1.0]).unwrap();
    assert!(convert(&ConversionSpec::c2r(C2R::Mag), &real).is_err());
    assert!(convert(&ConversionSpec::r2c(R2C::Real), &real.to_complex()).is_err());
}

fn complex_strategy() -> impl Strategy<Value = C64> {
    (-50.0..50.0f64, -50.0..50.0f64).prop_map(|(re, im)| C64::new(re, im))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn multi_phase_outputs_are_nonnegative(z in complex_strategy(), n in 1usize..7) {
        for kind in [C2R::MultiMagReal, C2R::MultiMagPhase] {
            let x = Tensor::complex([1, 1], vec![z]).unwrap();
            let y = convert(&ConversionSpec::multi_phase(kind, n), &x).unwrap();
            prop_assert!(y.real_data().unwrap().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn rotation_cycles_multi_mag_real(z in complex_strategy(), n in 1usize..7) {
        let spec = ConversionSpec::multi_phase(C2R::MultiMagReal, n);
        let rotated = z * C64::from_polar(1.0, 2.0 * PI / n as f64);
        let a = convert(&spec, &Tensor::complex([1, 1], vec![z]).unwrap()).unwrap();
        let b = convert(&spec, &Tensor::complex([1, 1], vec![rotated]).unwrap()).unwrap();
        let (a, b) = (a.real_data().unwrap(), b.real_data().unwrap());
        for i in 0..n {
            prop_assert!((b[(i + 1) % n] - a[i]).abs() < 1e-9 * (1.0 + z.norm()));
        }
    }

    #[test]
    fn square_mag_is_mag_squared(z in complex_strategy()) {
        let m = c2r(C2R::Mag, &[z])[0];
        prop_assert_eq!(c2r(C2R::SquareMag, &[z])[0], m * m);
    }

    #[test]
    fn phase_outputs_are_normalised(z in complex_strategy()) {
        let p = c2r(C2R::Polar, &[z])[1];
        prop_assert!((-1.0..=1.0).contains(&p));
        let a = c2r(C2R::AbsPhase, &[z])[0];
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert_eq!(c2r(C2R::MagAbsPhase, &[z]), vec![z.norm(), a]);
    }
}
