use std::f64::consts::PI;

use hnn::datasets::*;
use hnn::{Tensor, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Direct evaluation of the windowed DFT sum.
fn dft_oracle(x: &[f64], n_fft: usize, hop: usize) -> Vec<Vec<C64>> {
    let w = hann_periodic(n_fft);
    let frames = (x.len() - n_fft) / hop + 1;
    (0..n_fft / 2 + 1)
        .map(|k| {
            (0..frames)
                .map(|t| {
                    (0..n_fft)
                        .map(|n| C64::from_polar(x[t * hop + n] * w[n], -2.0 * PI * (k * n) as f64 / n_fft as f64))
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// Inverse of the one-sided spectrum by Hermitian completion and overlap-add.
fn istft(spec: &Tensor, n_fft: usize, hop: usize, len: usize) -> Vec<f64> {
    let [bins, frames] = spec.shape() else { panic!("rank 2 expected") };
    let (bins, frames) = (*bins, *frames);
    let z = spec.complex_data().unwrap();
    let ifft = FftPlanner::new().plan_fft_inverse(n_fft);
    let mut out = vec![0.0; len];
    let mut buf = vec![C64::new(0.0, 0.0); n_fft];
    for t in 0..frames {
        for k in 0..n_fft {
            buf[k] = if k < bins { z[k * frames + t] } else { z[(n_fft - k) * frames + t].conj() };
        }
        ifft.process(&mut buf);
        for n in 0..n_fft {
            out[t * hop + n] += buf[n].re / n_fft as f64;
        }
    }
    out
}

#[test]
fn stft_matches_direct_dft() {
    let x = noise(300, 1);
    let got = stft(&x, StftConfig { n_fft: 64, hop: 32 }).unwrap();
    let oracle = dft_oracle(&x, 64, 32);
    assert_eq!(got.shape(), [33, oracle[0].len()]);
    let z = got.complex_data().unwrap();
    let frames = oracle[0].len();
    for (k, row) in oracle.iter().enumerate() {
        for (t, v) in row.iter().enumerate() {
            assert!((z[k * frames + t] - v).norm() < 1e-10);
        }
    }
}

#[test]
fn full_rate_framing_and_tone_bin() {
    let cfg = StftConfig::FULL_RATE;
    let tone: Vec<f64> = (0..48_000).map(|n| (2.0 * PI * 1000.0 * n as f64 / 48_000.0).sin()).collect();
    let s = stft(&tone, cfg).unwrap();
    assert_eq!(s.shape(), [481, 99]);
    assert_eq!((cfg.bins(), cfg.frames(48_000)), (481, 99));
    let z = s.complex_data().unwrap();
    let peak = (0..481).max_by(|&a, &b| z[a * 99 + 50].norm().total_cmp(&z[b * 99 + 50].norm())).unwrap();
    assert_eq!(peak, 20);
    let zeros = stft(&vec![0.0; 48_000], cfg).unwrap();
    assert!(zeros.complex_data().unwrap().iter().all(|z| z.norm() == 0.0));
    assert!(stft(&[0.0; 10], cfg).is_err());
}

#[test]
fn overlap_add_reconstructs_the_interior() {
    let x = noise(48_000, 2);
    let cfg = StftConfig::FULL_RATE;
    let y = istft(&stft(&x, cfg).unwrap(), cfg.n_fft, cfg.hop, x.len());
    let frames = cfg.frames(x.len());
    let interior = cfg.hop..(frames - 1) * cfg.hop + cfg.hop;
    let err = interior.map(|i| (x[i] - y[i]).abs()).fold(0.0, f64::max);
    assert!(err < 1e-8, "{err}");
}

#[test]
fn proxy_grid_matches_full_rate_resolution() {
    let (p, q) = (AudioPipeline::FULL_RATE, AudioPipeline::PROXY);
    let hz = |a: &AudioPipeline| a.sample_rate as f64 / a.stft.n_fft as f64;
    let ms = |a: &AudioPipeline| 1000.0 * a.stft.hop as f64 / a.sample_rate as f64;
    assert_eq!((hz(&p), ms(&p)), (hz(&q), ms(&q)));
    assert_eq!(q.stft.frames(q.window_len()), 99);
}

#[test]
fn sinusoid_peaks_at_its_frequency() {
    let fft = FftPlanner::new().plan_fft_forward(SINUSOID_N);
    let params = SinusoidParams { a: 1.0, m: 8.0, p: 0.0, noise: 0.0 };
    let x = sinusoid_predictors(&params, &mut ChaCha8Rng::seed_from_u64(0), fft.as_ref());
    let mag = |k: usize| x[2 * k].hypot(x[2 * k + 1]);
    assert!(mag(8) > 10.0 * mag(5));
    // Symmetric Hann sums to (N−1)/2, so the 2/N-scaled peak is (N−1)/N.
    assert!((mag(8) - (SINUSOID_N - 1) as f64 / SINUSOID_N as f64).abs() < 1e-9);
    assert!((0..SINUSOID_BINS).max_by(|&a, &b| mag(a).total_cmp(&mag(b))) == Some(8));
}

#[test]
fn sinusoid_dataset_is_reproducible() {
    let a = generate_sinusoid_dataset(64, 5).unwrap();
    let b = generate_sinusoid_dataset(64, 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, generate_sinusoid_dataset(64, 6).unwrap());
    assert_eq!(a.predictors.shape(), [64, 36]);
    assert_eq!(a.targets.shape(), [64, 3]);
    let t = a.targets.real_data().unwrap();
    for (i, p) in a.params.iter().enumerate() {
        assert!((0.1..=1.0).contains(&p.a) && (5.0..=12.0).contains(&p.m) && (0.0..=0.01).contains(&p.noise));
        assert!((t[3 * i] - p.m).abs() < 1e-12);
        assert!((t[3 * i + 1] - p.a * p.p.sin()).abs() < 1e-12);
        assert!((t[3 * i + 2] - p.a * p.p.cos()).abs() < 1e-12);
        assert!(t[3 * i + 1].hypot(t[3 * i + 2]) <= 1.0 + 1e-12);
    }
    assert!(generate_sinusoid_dataset(0, 0).is_err());
}

#[test]
fn noise_matches_requested_snr() {
    let n = 100_000;
    let x = vec![0.0; n];
    for snr in [0.0, -5.0, 10.0] {
        let y = add_noise_snr(&x, snr, Some(1.0), 3);
        let p = mean_power(&y);
        let want = 10f64.powf(-snr / 10.0);
        assert!((p / want - 1.0).abs() < 0.02, "{snr} dB: {p} vs {want}");
    }
    let x = noise(100, 4);
    assert_eq!(add_noise_snr(&x, f64::INFINITY, None, 0), x);
    assert_eq!(add_noise_snr(&x, 0.0, None, 9), add_noise_snr(&x, 0.0, None, 9));
}

#[test]
fn padding_and_cropping() {
    let content = [1.0, 2.0, 3.0];
    let a = pad(&content, 10, Shift::RandomOffset { seed: 1, index: 4 }).unwrap();
    assert_eq!(a, pad(&content, 10, Shift::RandomOffset { seed: 1, index: 4 }).unwrap());
    assert_eq!(a.iter().sum::<f64>(), 6.0);
    assert_eq!(pad(&content, 4, Shift::Start).unwrap(), [1.0, 2.0, 3.0, 0.0]);
    assert!(pad(&content, 2, Shift::Start).is_err());

    let x: Vec<f64> = (1..=10).map(f64::from).collect();
    assert_eq!(crop(&x, 0.0).unwrap(), x);
    let head = crop(&x, -0.5).unwrap();
    assert!(head[..5].iter().all(|&v| v == 0.0) && head[5..] == x[5..]);
    let tail = crop(&x, 0.3).unwrap();
    assert!(tail[7..].iter().all(|&v| v == 0.0) && tail[..7] == x[..7]);
    assert!(crop(&x, 1.5).is_err());
    assert!((mean_power(&rms_normalize(&x)) - 1.0).abs() < 1e-12);
    assert_eq!(rms_normalize(&[0.0; 4]), [0.0; 4]);
}

#[test]
fn interleaving_layout() {
    let z = Tensor::complex([2, 3], (0..6).map(|i| C64::new(i as f64, -(i as f64))).collect()).unwrap();
    let r = interleave_for_rvnn(&z).unwrap();
    assert_eq!(r.shape(), [4, 3]);
    let d = r.real_data().unwrap();
    assert_eq!(&d[..6], &[0.0, 1.0, 2.0, 0.0, -1.0, -2.0]);
    assert_eq!(&d[6..], &[3.0, 4.0, 5.0, -3.0, -4.0, -5.0]);
    // Real input puts zeros in every odd channel.
    let real = interleave_for_rvnn(&Tensor::real([2, 3], vec![1.0; 6]).unwrap().to_complex()).unwrap();
    let d = real.real_data().unwrap();
    assert!(d[3..6].iter().chain(&d[9..12]).all(|&v| v == 0.0));
}

#[test]
fn stratified_split() {
    let labels: Vec<usize> = (0..997).map(|i| i % 10).collect();
    let s = split(&labels, 7);
    assert_eq!(s, split(&labels, 7));
    assert_ne!(s, split(&labels, 8));
    let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..997).collect::<Vec<_>>());
    for c in 0..10 {
        let count = |idx: &[usize]| idx.iter().filter(|&&i| labels[i] == c).count() as f64;
        let n = count(&(0..997).collect::<Vec<_>>());
        assert!((count(&s.val) - 0.1 * n).abs() <= 1.0);
        assert!((count(&s.test) - 0.1 * n).abs() <= 1.0);
        assert!((count(&s.train) - 0.8 * n).abs() <= 1.0);
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("split.json");
    s.save(&p).unwrap();
    assert_eq!(Split::load(&p).unwrap(), s);
}

#[test]
fn wav_round_trip_and_names() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("07");
    std::fs::create_dir(&sub).unwrap();
    let x: Vec<f64> = noise(400, 5).iter().map(|v| v * 0.9).collect();
    let p = sub.join("3_07_12.wav");
    write_wav(&p, &x, 8000).unwrap();
    let back = read_wav(&p, 8000).unwrap();
    assert!(back.iter().zip(&x).all(|(a, b)| (a - b).abs() <= 0.5 / 32768.0 + 1e-12));
    assert!(matches!(read_wav(&p, 48_000), Err(hnn::Error::Data { .. })));
    std::fs::write(sub.join("notes.txt"), "x").unwrap();
    std::fs::write(sub.join("12_07_0.wav"), "x").unwrap();

    let f = parse_audio_name(&p).unwrap();
    assert_eq!((f.label, f.speaker, f.index), (3, 7, 12));
    let found = discover_audiomnist(dir.path()).unwrap();
    assert_eq!(found.len(), 1);
    let utts = load_audiomnist(dir.path(), 8000).unwrap();
    assert_eq!((utts[0].label, utts[0].speaker, utts[0].samples.len()), (3, 7, 400));
    assert!(load_audiomnist(&dir.path().join("missing"), 8000).is_err());
}

#[test]
fn audio_front_end_shapes() {
    let utts = synthetic_digits(2, 4, 8000, 1);
    assert_eq!(utts.len(), 20);
    assert_eq!(utts, synthetic_digits(2, 4, 8000, 1));
    let pipe = AudioPipeline::PROXY.with_snr(Some(0.0));
    let c = build_audio_dataset(&utts, &pipe, FeatureLayout::Complex, 3, None).unwrap();
    assert_eq!(c.complex.as_ref().unwrap().shape(), [20, 81, 99]);
    let r = build_audio_dataset(&utts, &pipe, FeatureLayout::Interleaved, 3, None).unwrap();
    assert_eq!(r.real.as_ref().unwrap().shape(), [20, 162, 99]);
    assert_eq!(interleave_for_rvnn(c.complex.as_ref().unwrap()).unwrap(), *r.real.as_ref().unwrap());
    let cropped = build_audio_dataset(&utts, &pipe, FeatureLayout::Complex, 3, Some(0.0)).unwrap();
    assert_eq!(cropped, c);
    assert!(build_audio_dataset(&[], &pipe, FeatureLayout::Complex, 3, None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn compression_keeps_phase_and_order(m1 in 1e-6..1e3f64, m2 in 1e-6..1e3f64, t in -3.1..3.1f64, e in 0.1..1.0f64) {
        let z = Tensor::complex_vector(vec![C64::from_polar(m1, t), C64::from_polar(m2, t), C64::new(0.0, 0.0)]);
        let y = magnitude_compress(&z, e).unwrap();
        let y = y.complex_data().unwrap();
        prop_assert!((y[0].arg() - t).abs() < 1e-12);
        prop_assert!((y[0].norm() - m1.powf(e)).abs() < 1e-9 * (1.0 + m1));
        prop_assert_eq!(m1 < m2, y[0].norm() < y[1].norm());
        prop_assert_eq!(y[2], C64::new(0.0, 0.0));
    }

    #[test]
    fn crop_zeroes_exactly_the_requested_share(len in 1usize..200, ratio in -1.0..1.0f64) {
        let x = vec![1.0; len];
        let y = crop(&x, ratio).unwrap();
        let zeros = y.iter().filter(|&&v| v == 0.0).count();
        prop_assert_eq!(zeros, ((ratio.abs() * len as f64).round() as usize).min(len));
    }
}
