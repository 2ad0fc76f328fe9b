use hnn::layers::*;
use hnn::{Session, Tape, Tensor, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn run_conv(conv: &Conv1d, x: &Tensor) -> Tensor {
    let tape = Tape::new();
    let s = Session::eval(&tape);
    conv.forward(&s, s.constant(x.clone())).unwrap().value()
}

fn complex_input(rng: &mut ChaCha8Rng, shape: [usize; 3]) -> Tensor {
    let n = shape.iter().product();
    Tensor::complex(shape, (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn complex_conv_matches_real_equivalent(
        seed in 0u64..1_000_000,
        cin in 1usize..4,
        cout in 1usize..4,
        kernel in 1usize..5,
        stride in 1usize..3,
        valid in any::<bool>(),
        bias in any::<bool>(),
    ) {
        let cfg = ConvConfig {
            stride,
            bias,
            padding: if valid { Padding::Valid } else { Padding::Same },
            ..ConvConfig::new(cin, cout, kernel)
        };
        let mut init = Init::new(seed);
        let conv = Conv1d::new(&mut init, Domain::Complex, cfg).unwrap();
        let twin = conv.real_equivalent(&mut init).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = complex_input(&mut rng, [2, cin, 7]);
        let direct = interleave_complex(&run_conv(&conv, &x), 1).unwrap();
        let via_real = run_conv(&twin, &interleave_complex(&x, 1).unwrap());
        prop_assert!(direct.max_abs_diff(&via_real).unwrap() < 1e-12);
    }

    #[test]
    fn complex_layers_count_double(
        cin in 1usize..9,
        cout in 1usize..9,
        kernel in 1usize..6,
        groups in 1usize..3,
        bias in any::<bool>(),
    ) {
        let cfg = ConvConfig { groups, bias, ..ConvConfig::new(cin * groups, cout * groups, kernel) };
        let real = Conv1d::new(&mut Init::new(0), Domain::Real, cfg.clone()).unwrap();
        let complex = Conv1d::new(&mut Init::new(0), Domain::Complex, cfg).unwrap();
        prop_assert_eq!(count_parameters(&complex).total, 2 * count_parameters(&real).total);
        let real = Linear::new(&mut Init::new(0), Domain::Real, cin, cout, bias).unwrap();
        let complex = Linear::new(&mut Init::new(0), Domain::Complex, cin, cout, bias).unwrap();
        prop_assert_eq!(count_parameters(&complex).total, 2 * count_parameters(&real).total);
    }

    #[test]
    fn bamn_normalises_mean_magnitude_and_keeps_phase(seed in 0u64..1_000_000, scale in 0.01..100.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 4 * 3 * 5;
        let z: Vec<C64> = (0..n).map(|_| C64::from_polar(scale * rng.random_range(0.1..2.0), rng.random_range(-3.0..3.0))).collect();
        let x = Tensor::complex([4, 3, 5], z.clone()).unwrap();
        let bamn = Bamn::new(3);
        let tape = Tape::new();
        let s = Session::new(&tape, true, 0);
        let y = bamn.forward(&s, s.constant(x)).unwrap().value();
        let out = y.complex_data().unwrap();
        for c in 0..3 {
            let mut m = 0.0;
            for b in 0..4 {
                for l in 0..5 {
                    m += out[(b * 3 + c) * 5 + l].norm();
                }
            }
            m /= 20.0;
            prop_assert!((0.99..=1.01).contains(&m), "channel {} mean {}", c, m);
        }
        for (a, b) in z.iter().zip(out) {
            prop_assert!((a.arg() - b.arg()).abs() < 1e-12);
        }
    }
}

#[test]
fn measured_sub_block_on_ones() {
    // Rows of the printed 2×2 block applied to (1, 1).
    let w = [[0.827, -0.986], [0.986, 0.819]];
    let out: Vec<f64> = w.iter().map(|r| r[0] + r[1]).collect();
    assert!((out[0] + 0.159).abs() < 1e-12);
    assert!((out[1] - 1.805).abs() < 1e-12);
}

#[test]
fn identity_complex_weight() {
    let mut conv = Conv1d::new(&mut Init::new(0), Domain::Complex, ConvConfig { bias: false, ..ConvConfig::new(1, 1, 1) }).unwrap();
    conv.weight.value = Tensor::complex([1, 1, 1], vec![C64::new(1.0, 0.0)]).unwrap();
    let x = complex_input(&mut ChaCha8Rng::seed_from_u64(0), [2, 1, 4]);
    assert_eq!(run_conv(&conv, &x), x);
}

#[test]
fn conv_rejects_mismatches() {
    let conv = Conv1d::new(&mut Init::new(0), Domain::Real, ConvConfig { padding: Padding::Valid, ..ConvConfig::new(1, 1, 5) }).unwrap();
    let tape = Tape::new();
    let s = Session::eval(&tape);
    let short = s.constant(Tensor::zeros([1, 1, 3], hnn::DType::Real64));
    assert!(conv.forward(&s, short).is_err());
    let complex = s.constant(Tensor::zeros([1, 1, 8], hnn::DType::Complex128));
    assert!(conv.forward(&s, complex).is_err());
}

#[test]
fn average_pool_pairs() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::real([1, 1, 4], vec![1.0, 3.0, 5.0, 7.0]).unwrap());
    assert_eq!(avg_pool(x, 2).unwrap().value().real_data().unwrap(), &[2.0, 6.0]);
}

#[test]
fn dropout_is_unbiased_and_joint() {
    let tape = Tape::new();
    let s = Session::new(&tape, true, 9);
    let drop = Dropout::new(0.3).unwrap();
    let n = 100_000;
    let x = s.constant(Tensor::complex_vector(vec![C64::new(1.0, -2.0); n]));
    let y = drop.forward(&s, x).unwrap().value();
    let out = y.complex_data().unwrap();
    let mean: C64 = out.iter().sum::<C64>() / n as f64;
    assert!((mean.re - 1.0).abs() < 0.02 && (mean.im + 2.0).abs() < 0.04, "{mean}");
    for z in out {
        assert!(z.norm() == 0.0 || ((z.im / z.re) + 2.0).abs() < 1e-12);
    }
    let id = Dropout::new(0.0).unwrap();
    let x = Tensor::vector(vec![1.0, 2.0]);
    assert_eq!(id.forward(&s, s.constant(x.clone())).unwrap().value(), x);
    assert!(Dropout::new(1.0).is_err() && Dropout::new(-0.1).is_err());
}

#[test]
fn bamn_uniform_magnitude_and_eval_mode() {
    let bamn = Bamn::new(1);
    let x = Tensor::complex([2, 1, 3], vec![C64::from_polar(2.0, 0.3); 6]).unwrap();
    let tape = Tape::new();
    let y = bamn.forward(&Session::new(&tape, true, 0), tape.constant(x.clone())).unwrap().value();
    assert!(y.complex_data().unwrap().iter().all(|z| (z.norm() - 1.0).abs() < 1e-5));
    assert!((bamn.running_mean()[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-12);
    let frozen = bamn.running_mean();
    bamn.forward(&Session::eval(&tape), tape.constant(x)).unwrap();
    assert_eq!(bamn.running_mean(), frozen);
    assert!(bamn.forward(&Session::new(&tape, true, 0), tape.constant(Tensor::zeros([0, 1, 3], hnn::DType::Complex128))).is_err());
}

#[test]
fn optimizers_treat_complex_as_split_real() {
    use hnn::{Param, ParamId};
    for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
        let mut real = Param::new(ParamId(0), "r", Tensor::vector(vec![0.5, -0.25]));
        let mut complex = Param::new(ParamId(1), "c", Tensor::complex_vector(vec![C64::new(0.5, -0.25)]));
        let mut opt_r = kind.build(0.1);
        let mut opt_c = kind.build(0.1);
        for _ in 0..3 {
            let tape = Tape::new();
            let r = tape.param(&real);
            let loss = r.mul(r).unwrap().sum().unwrap();
            let g = tape.backward(loss).unwrap();
            opt_r.step(vec![&mut real], &g).unwrap();
            let tape = Tape::new();
            let c = tape.param(&complex);
            let loss = c.abs().unwrap().powi(2).unwrap().sum().unwrap();
            let g = tape.backward(loss).unwrap();
            opt_c.step(vec![&mut complex], &g).unwrap();
        }
        let r = real.value.real_data().unwrap();
        let c = complex.value.complex_data().unwrap()[0];
        assert!((r[0] - c.re).abs() < 1e-12 && (r[1] - c.im).abs() < 1e-12, "{kind:?}");
    }
}
