//! The synthetic sinusoid task and the spoken-digit audio pipeline.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::interleave_complex;
use crate::tensor::{Tensor, C64};
use crate::train::{stream_rng, Dataset, Targets};

/// Symmetric Hann window (endpoints zero).
pub fn hann_symmetric(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Periodic Hann window; shifted copies at half-length hops sum to one.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

pub const SINUSOID_N: usize = 512;
pub const SINUSOID_BINS: usize = 18;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidParams {
    pub a: f64,
    pub m: f64,
    pub p: f64,
    /// Noise standard deviation (complex, split evenly over re/im).
    pub noise: f64,
}

impl SinusoidParams {
    pub fn targets(&self) -> [f64; 3] {
        [self.m, self.a * self.p.sin(), self.a * self.p.cos()]
    }

    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        SinusoidParams {
            a: rng.random_range(0.1..=1.0),
            m: rng.random_range(5.0..=12.0),
            p: rng.random_range(-PI..=PI),
            noise: rng.random_range(0.0..=0.01),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidData {
    /// `[n, 36]`: interleaved re/im of the first 18 DFT bins.
    pub predictors: Tensor,
    /// `[n, 3]`: `(m, a·sin p, a·cos p)`.
    pub targets: Tensor,
    pub params: Vec<SinusoidParams>,
}

impl SinusoidData {
    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::new(Some(self.predictors.clone()), None, Targets::Values(self.targets.clone()))
    }
}

/// Windowed, DFT-transformed tone `a·e^{i(2πnm/N + p)} + v(n)`; returns the
/// 36 predictors. Bins are scaled by `2/N`.
pub fn sinusoid_predictors<R: Rng>(params: &SinusoidParams, rng: &mut R, fft: &dyn Fft<f64>) -> [f64; 2 * SINUSOID_BINS] {
    let n = SINUSOID_N;
    let window = hann_symmetric(n);
    let mut buf: Vec<C64> = (0..n)
        .map(|i| {
            let phase = 2.0 * PI * i as f64 * params.m / n as f64 + params.p;
            let mut y = C64::from_polar(params.a, phase);
            if params.noise > 0.0 {
                let s = params.noise / std::f64::consts::SQRT_2;
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                y += C64::new(s * re, s * im);
            }
            y * window[i]
        })
        .collect();
    fft.process(&mut buf);
    let mut out = [0.0; 2 * SINUSOID_BINS];
    let scale = 2.0 / n as f64;
    for k in 0..SINUSOID_BINS {
        out[2 * k] = buf[k].re * scale;
        out[2 * k + 1] = buf[k].im * scale;
    }
    out
}

/// `count` examples; example `i` draws from random stream `i` of `seed`.
pub fn generate_sinusoid_dataset(count: usize, seed: u64) -> Result<SinusoidData> {
    if count == 0 {
        return Err(Error::invalid("sinusoid dataset needs at least one example"));
    }
    let fft = FftPlanner::new().plan_fft_forward(SINUSOID_N);
    let rows: Vec<(SinusoidParams, [f64; 2 * SINUSOID_BINS])> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let params = SinusoidParams::sample(&mut rng);
            let x = sinusoid_predictors(&params, &mut rng, fft.as_ref());
            (params, x)
        })
        .collect();
    let predictors = rows.iter().flat_map(|(_, x)| x.iter().copied()).collect();
    let targets = rows.iter().flat_map(|(p, _)| p.targets()).collect();
    Ok(SinusoidData {
        predictors: Tensor::real(vec![count, 2 * SINUSOID_BINS], predictors)?,
        targets: Tensor::real(vec![count, 3], targets)?,
        params: rows.into_iter().map(|(p, _)| p).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
}

impl StftConfig {
    /// 960-point frames with 50% overlap (50 Hz × 10 ms at 48 kHz).
    pub const FULL_RATE: StftConfig = StftConfig { n_fft: 960, hop: 480 };

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn frames(&self, len: usize) -> usize {
        if len < self.n_fft {
            0
        } else {
            (len - self.n_fft) / self.hop + 1
        }
    }
}

/// Plans and windows shared across many transforms.
pub struct Stft {
    pub config: StftConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        if config.n_fft == 0 || config.hop == 0 {
            return Err(Error::invalid("STFT sizes must be positive"));
        }
        Ok(Stft {
            config,
            window: hann_periodic(config.n_fft),
            fft: FftPlanner::new().plan_fft_forward(config.n_fft),
        })
    }

    /// One-sided spectrum `[bins, frames]` using frames that lie fully inside
    /// the signal.
    pub fn transform(&self, x: &[f64]) -> Result<Tensor> {
        let StftConfig { n_fft, hop } = self.config;
        if x.len() < n_fft {
            return Err(Error::invalid(format!(
                "signal of {} samples is shorter than the {n_fft}-point frame",
                x.len()
            )));
        }
        let frames = self.config.frames(x.len());
        let bins = self.config.bins();
        let mut out = vec![C64::new(0.0, 0.0); bins * frames];
        let mut buf = vec![C64::new(0.0, 0.0); n_fft];
        for t in 0..frames {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = C64::new(x[t * hop + i] * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            for k in 0..bins {
                out[k * frames + t] = buf[k];
            }
        }
        Tensor::complex(vec![bins, frames], out)
    }
}

pub fn stft(x: &[f64], config: StftConfig) -> Result<Tensor> {
    Stft::new(config)?.transform(x)
}

/// `z → |z|^e · e^{i∠z}`, with `0 → 0`.
pub fn magnitude_compress(t: &Tensor, exponent: f64) -> Result<Tensor> {
    let z = t.complex_data()?;
    let out = z
        .iter()
        .map(|&z| {
            let m = z.norm();
            if m == 0.0 {
                z
            } else {
                z * m.powf(exponent - 1.0)
            }
        })
        .collect();
    Tensor::complex(t.shape().to_vec(), out)
}

pub fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Adds white Gaussian noise at `snr_db` relative to `signal_power` (the
/// power of `x` itself when `None`). An infinite SNR leaves `x` unchanged.
pub fn add_noise_snr(x: &[f64], snr_db: f64, signal_power: Option<f64>, seed: u64) -> Vec<f64> {
    if snr_db == f64::INFINITY {
        return x.to_vec();
    }
    let p = signal_power.unwrap_or_else(|| mean_power(x));
    let sigma = (p / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = stream_rng(seed, 0);
    x.iter()
        .map(|&v| {
            let n: f64 = StandardNormal.sample(&mut rng);
            v + sigma * n
        })
        .collect()
}

/// Scales `x` to unit RMS; silent input is returned unchanged.
pub fn rms_normalize(x: &[f64]) -> Vec<f64> {
    let rms = mean_power(x).sqrt();
    if rms == 0.0 {
        x.to_vec()
    } else {
        x.iter().map(|v| v / rms).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Shift {
    /// Content starts at a uniform offset drawn from stream `index` of `seed`.
    RandomOffset { seed: u64, index: u64 },
    /// Content starts at sample 0.
    Start,
}

/// Zero-pads `content` into a window of `len` samples.
pub fn pad(content: &[f64], len: usize, shift: Shift) -> Result<Vec<f64>> {
    if content.len() > len {
        return Err(Error::invalid(format!(
            "content of {} samples does not fit a {len}-sample window",
            content.len()
        )));
    }
    let slack = len - content.len();
    let start = match shift {
        Shift::Start => 0,
        Shift::RandomOffset { seed, index } => stream_rng(seed, index).random_range(0..=slack),
    };
    let mut out = vec![0.0; len];
    out[start..start + content.len()].copy_from_slice(content);
    Ok(out)
}

/// Removes a signed fraction of the window: negative ratios zero the start,
/// positive ratios zero the end.
pub fn crop(x: &[f64], ratio: f64) -> Result<Vec<f64>> {
    if !(-1.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("crop ratio {ratio} outside [-1, 1]")));
    }
    let n = x.len();
    let cut = ((ratio.abs() * n as f64).round() as usize).min(n);
    let mut out = x.to_vec();
    if ratio < 0.0 {
        out[..cut].fill(0.0);
    } else {
        out[n - cut..].fill(0.0);
    }
    Ok(out)
}

/// `[.., freq, time]` complex → `[.., 2·freq, time]` real with `(re, im)`
/// channel pairs.
pub fn interleave_for_rvnn(stft: &Tensor) -> Result<Tensor> {
    let axis = stft
        .rank()
        .checked_sub(2)
        .ok_or_else(|| Error::shape("interleaving needs a [freq, time] grid"))?;
    interleave_complex(stft, axis)
}

/// One utterance before the front end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub samples: Vec<f64>,
    pub label: usize,
    pub speaker: usize,
}

/// Front-end settings: window, framing, compression and noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioPipeline {
    pub sample_rate: u32,
    pub window_seconds: f64,
    pub stft: StftConfig,
    pub compress: f64,
    /// `None` means no noise.
    pub snr_db: Option<f64>,
}

impl AudioPipeline {
    pub const FULL_RATE: AudioPipeline = AudioPipeline {
        sample_rate: 48_000,
        window_seconds: 1.0,
        stft: StftConfig::FULL_RATE,
        compress: 0.5,
        snr_db: None,
    };

    /// Same 50 Hz × 10 ms grid at 8 kHz.
    pub const PROXY: AudioPipeline = AudioPipeline {
        sample_rate: 8_000,
        window_seconds: 1.0,
        stft: StftConfig { n_fft: 160, hop: 80 },
        compress: 0.5,
        snr_db: None,
    };

    pub fn window_len(&self) -> usize {
        (self.window_seconds * self.sample_rate as f64).round() as usize
    }

    pub fn with_snr(mut self, snr_db: Option<f64>) -> Self {
        self.snr_db = snr_db;
        self
    }

    /// Normalise, pad with a per-example offset, add noise, optionally crop,
    /// then STFT and compress. Returns `[bins, frames]`.
    pub fn features(&self, stft: &Stft, samples: &[f64], seed: u64, index: u64, crop_ratio: Option<f64>) -> Result<Tensor> {
        let content = rms_normalize(samples);
        let len = self.window_len();
        let content = if content.len() > len { &content[..len] } else { &content[..] };
        let power = mean_power(content);
        let mut x = pad(content, len, Shift::RandomOffset { seed, index })?;
        if let Some(snr) = self.snr_db {
            x = add_noise_snr(&x, snr, Some(power), seed ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03));
        }
        if let Some(r) = crop_ratio {
            x = crop(&x, r)?;
        }
        magnitude_compress(&stft.transform(&x)?, self.compress)
    }
}

/// Which network input(s) a dataset should carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureLayout {
    /// Complex `[n, bins, frames]`.
    Complex,
    /// Interleaved real `[n, 2·bins, frames]`.
    Interleaved,
}

/// Runs the front end over every utterance in parallel.
pub fn build_audio_dataset(
    utterances: &[Utterance],
    pipeline: &AudioPipeline,
    layout: FeatureLayout,
    seed: u64,
    crop_ratio: Option<f64>,
) -> Result<Dataset> {
    if utterances.is_empty() {
        return Err(Error::invalid("no utterances"));
    }
    let stft = Stft::new(pipeline.stft)?;
    let feats: Vec<Tensor> = utterances
        .par_iter()
        .enumerate()
        .map(|(i, u)| pipeline.features(&stft, &u.samples, seed, i as u64, crop_ratio))
        .collect::<Result<_>>()?;
    let shape = feats[0].shape().to_vec();
    let mut data = Vec::with_capacity(feats.len() * feats[0].len());
    for f in &feats {
        data.extend_from_slice(f.complex_data()?);
    }
    let mut full = vec![feats.len()];
    full.extend(shape);
    let complex = Tensor::complex(full, data)?;
    let labels: Vec<usize> = utterances.iter().map(|u| u.label).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    let targets = Targets::Classes { labels, classes };
    match layout {
        FeatureLayout::Complex => Dataset::new(None, Some(complex), targets),
        FeatureLayout::Interleaved => Dataset::new(Some(interleave_for_rvnn(&complex)?), None, targets),
    }
}

/// 16-bit PCM mono WAV scaled to [−1, 1].
pub fn read_wav(path: &Path, expected_rate: u32) -> Result<Vec<f64>> {
    let mut reader = hound::WavReader::open(path).map_err(|e| Error::data(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::data(
            path,
            format!(
                "expected 16-bit PCM mono, found {} channel(s) of {}-bit {:?}",
                spec.channels, spec.bits_per_sample, spec.sample_format
            ),
        ));
    }
    if spec.sample_rate != expected_rate {
        return Err(Error::data(
            path,
            format!("sample rate {} Hz, expected {expected_rate} Hz", spec.sample_rate),
        ));
    }
    reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0).map_err(|e| Error::data(path, e.to_string())))
        .collect()
}

pub fn write_wav(path: &Path, samples: &[f64], rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| Error::data(path, e.to_string()))?;
    for &s in samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(|e| Error::data(path, e.to_string()))?;
    }
    w.finalize().map_err(|e| Error::data(path, e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioFile {
    pub path: PathBuf,
    pub label: usize,
    pub speaker: usize,
    pub index: usize,
}

/// Parses `<digit>_<speaker>_<index>.wav`.
pub fn parse_audio_name(path: &Path) -> Option<AudioFile> {
    let stem = path.file_stem()?.to_str()?;
    if path.extension()?.to_str()? != "wav" {
        return None;
    }
    let mut parts = stem.split('_');
    let label: usize = parts.next()?.parse().ok()?;
    let speaker: usize = parts.next()?.parse().ok()?;
    let index: usize = parts.next()?.parse().ok()?;
    if parts.next().is_some() || label > 9 {
        return None;
    }
    Some(AudioFile {
        path: path.to_path_buf(),
        label,
        speaker,
        index,
    })
}

/// Every recording under `root`, sorted by path.
pub fn discover_audiomnist(root: &Path) -> Result<Vec<AudioFile>> {
    if !root.is_dir() {
        return Err(Error::data(root, "not a directory"));
    }
    let mut stack = vec![root.to_path_buf()];
    let mut files = Vec::new();
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::data(&dir, e.to_string()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if let Some(f) = parse_audio_name(&path) {
                files.push(f);
            }
        }
    }
    files.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(files)
}

pub fn load_audiomnist(root: &Path, sample_rate: u32) -> Result<Vec<Utterance>> {
    let files = discover_audiomnist(root)?;
    if files.is_empty() {
        return Err(Error::data(root, "no `<digit>_<speaker>_<index>.wav` files found"));
    }
    files
        .par_iter()
        .map(|f| {
            Ok(Utterance {
                samples: read_wav(&f.path, sample_rate)?,
                label: f.label,
                speaker: f.speaker,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Split> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::data(path, e.to_string()))
    }
}

/// 80/10/10 split, stratified by label.
pub fn split(labels: &[usize], seed: u64) -> Split {
    use rand::seq::SliceRandom;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = Split {
        seed,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut stream_rng(seed, c as u64));
        let n = idx.len();
        let n_val = (n as f64 * 0.1).round() as usize;
        let n_test = (n as f64 * 0.1).round() as usize;
        out.val.extend_from_slice(&idx[..n_val]);
        out.test.extend_from_slice(&idx[n_val..n_val + n_test]);
        out.train.extend_from_slice(&idx[n_val + n_test..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    out
}

/// Per-digit articulation: three (F1, F2) targets in Hz and an optional
/// fricative onset centre frequency.
const DIGITS: [([(f64, f64); 3], Option<f64>); 10] = [
    ([(300.0, 2300.0), (500.0, 1500.0), (450.0, 900.0)], Some(3400.0)),
    ([(300.0, 800.0), (600.0, 1200.0), (350.0, 1500.0)], None),
    ([(350.0, 1800.0), (300.0, 900.0), (300.0, 850.0)], Some(2600.0)),
    ([(400.0, 1400.0), (450.0, 1300.0), (280.0, 2300.0)], Some(3000.0)),
    ([(450.0, 1000.0), (550.0, 900.0), (500.0, 1400.0)], Some(2200.0)),
    ([(700.0, 1200.0), (650.0, 1600.0), (350.0, 2100.0)], Some(2200.0)),
    ([(400.0, 2000.0), (420.0, 1900.0), (350.0, 2500.0)], Some(3600.0)),
    ([(550.0, 1800.0), (500.0, 1500.0), (450.0, 1300.0)], Some(3600.0)),
    ([(500.0, 1900.0), (380.0, 2200.0), (350.0, 2300.0)], None),
    ([(350.0, 1400.0), (700.0, 1250.0), (380.0, 2000.0)], None),
];

/// Synthetic spoken-digit stand-in: harmonic voices shaped by per-digit
/// formant trajectories, with per-speaker pitch and vocal-tract scaling.
pub fn synthetic_digits(per_class: usize, speakers: usize, sample_rate: u32, seed: u64) -> Vec<Utterance> {
    let sr = sample_rate as f64;
    let nyquist = sr / 2.0;
    let jobs: Vec<(usize, usize)> = (0..10).flat_map(|d| (0..per_class).map(move |r| (d, r))).collect();
    jobs.par_iter()
        .enumerate()
        .map(|(i, &(digit, _))| {
            let speaker = i % speakers.max(1);
            let mut srng = stream_rng(seed ^ 0x5EED, speaker as u64);
            let base_f0: f64 = srng.random_range(90.0..220.0);
            let tract: f64 = srng.random_range(0.88..1.12);
            let mut rng = stream_rng(seed, i as u64);
            let dur: f64 = rng.random_range(0.35..0.6);
            let n = (dur * sr) as usize;
            let f0 = base_f0 * rng.random_range(0.93..1.07);
            let glide: f64 = rng.random_range(-0.15..0.15);
            let (formants, fricative) = DIGITS[digit];
            let jitter: Vec<(f64, f64)> = formants
                .iter()
                .map(|&(f1, f2)| {
                    (
                        f1 * tract * rng.random_range(0.95..1.05),
                        f2 * tract * rng.random_range(0.95..1.05),
                    )
                })
                .collect();
            let onset = if fricative.is_some() { (0.08 * sr) as usize } else { 0 };
            let mut out = vec![0.0; n];
            let mut phase = rng.random_range(0.0..2.0 * PI);
            let harmonics = (nyquist / (f0 * 0.85)) as usize;
            for (t, o) in out.iter_mut().enumerate().skip(onset) {
                let u = (t - onset) as f64 / (n - onset).max(1) as f64;
                let seg = (u * 2.0).min(1.999);
                let (j, w) = (seg as usize, seg.fract());
                let f1 = jitter[j].0 * (1.0 - w) + jitter[j + 1].0 * w;
                let f2 = jitter[j].1 * (1.0 - w) + jitter[j + 1].1 * w;
                let pitch = f0 * (1.0 + glide * (u - 0.5));
                phase += 2.0 * PI * pitch / sr;
                let env = (PI * u).sin().powf(0.6);
                let mut s = 0.0;
                for h in 1..=harmonics {
                    let fh = pitch * h as f64;
                    if fh >= nyquist {
                        break;
                    }
                    let res = |f: f64, bw: f64| 1.0 / (1.0 + ((fh - f) / bw).powi(2));
                    let amp = res(f1, 90.0) + 0.7 * res(f2, 120.0) + 0.05 / h as f64;
                    s += amp * (h as f64 * phase).sin();
                }
                *o = env * s;
            }
            if let Some(fc) = fricative {
                let fc = (fc * tract).min(nyquist * 0.95);
                let mut carrier = rng.random_range(0.0..2.0 * PI);
                for (t, o) in out.iter_mut().enumerate().take(onset + onset / 2) {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    carrier += 2.0 * PI * fc / sr;
                    let env = (PI * t as f64 / (1.5 * onset as f64)).sin();
                    *o += 0.6 * env * g * carrier.sin();
                }
            }
            Utterance {
                samples: out,
                label: digit,
                speaker,
            }
        })
        .collect()
}
