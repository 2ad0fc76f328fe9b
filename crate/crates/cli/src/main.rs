use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hnn::activations::RealActivation;
use hnn::analysis::{self, CropPoint, RunRecord, WeightMap};
use hnn::datasets::{self, AudioPipeline, FeatureLayout, Split, Utterance};
use hnn::graph::{Network, NetworkSpec};
use hnn::nas::{run_search, SearchConfig, SearchState, TaskSpec, TrainingEvaluator, TrialStatus, TrialStore};
use hnn::train::{evaluate, train, Control, Dataset, Mlp, Model, TrainConfig};
use hnn::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "hnn", version, about = "Hybrid real/complex neural networks")]
struct Cli {
    /// Seed for every randomised step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON config for the subcommand (training or search settings).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the windowed-sinusoid regression dataset.
    GenSinusoid {
        #[arg(long, default_value_t = 50_000)]
        count: usize,
    },
    /// Build STFT features and a stratified split from audio.
    PrepAudio {
        #[command(flatten)]
        source: AudioSource,
        #[arg(long, value_enum, default_value_t = Layout::Complex)]
        layout: Layout,
    },
    /// Train a network (`--arch`) or MLP (`--mlp`) on a prepared dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Split file; without one the whole dataset is used for training.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, conflicts_with = "mlp", required_unless_present = "mlp")]
        arch: Option<PathBuf>,
        /// Comma-separated layer sizes, input first.
        #[arg(long, value_delimiter = ',')]
        mlp: Option<Vec<usize>>,
        #[arg(long, default_value = "ELU")]
        activation: String,
        /// Label for the run record.
        #[arg(long, default_value = "model")]
        name: String,
    },
    /// Run the phased architecture search.
    Search {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: PathBuf,
    },
    /// Reorder and scan a trained layer for complex-multiply blocks.
    DecodeWeights {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, default_value_t = 0.15)]
        tolerance: f64,
    },
    /// Sweep the tone phase through a trained sinusoid MLP.
    ProbePhase {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        #[arg(long, default_value_t = 8.0)]
        m: f64,
        #[arg(long, default_value_t = 64)]
        steps: usize,
    },
    /// Tabulate run records and search results.
    Report {
        /// Run record files written by `train`.
        #[arg(long, num_args = 1..)]
        runs: Vec<PathBuf>,
        /// Search state written by `search`.
        #[arg(long)]
        search: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
    /// Accuracy of a trained network as the test audio is truncated.
    CropSweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[command(flatten)]
        source: AudioSource,
        #[arg(long, value_enum, default_value_t = Layout::Complex)]
        layout: Layout,
    },
}

#[derive(Args, Clone)]
struct AudioSource {
    /// AudioMNIST root (48 kHz WAV files).
    #[arg(long, conflicts_with = "synthetic")]
    root: Option<PathBuf>,
    /// Use the synthetic digit corpus with this many utterances per class.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 20)]
    speakers: usize,
    /// Noise level in dB; omit for clean audio.
    #[arg(long, allow_negative_numbers = true)]
    snr: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Layout {
    Complex,
    Interleaved,
}

impl From<Layout> for FeatureLayout {
    fn from(l: Layout) -> Self {
        match l {
            Layout::Complex => FeatureLayout::Complex,
            Layout::Interleaved => FeatureLayout::Interleaved,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum SavedModel {
    Network(Network),
    Mlp(Mlp),
}

impl SavedModel {
    fn as_model(&self) -> &dyn Model {
        match self {
            SavedModel::Network(n) => n,
            SavedModel::Mlp(m) => m,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    source: String,
    utterances: usize,
    snr_db: Option<f64>,
    layout: Layout,
    pipeline: AudioPipeline,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::data(path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::data(path, e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn load_utterances(src: &AudioSource, seed: u64) -> Result<(Vec<Utterance>, AudioPipeline, String)> {
    let noise = |p: AudioPipeline| p.with_snr(src.snr);
    match (&src.root, src.synthetic) {
        (Some(root), _) => {
            let p = noise(AudioPipeline::FULL_RATE);
            Ok((datasets::load_audiomnist(root, p.sample_rate)?, p, root.display().to_string()))
        }
        (None, Some(per_class)) => {
            let p = noise(AudioPipeline::PROXY);
            let utts = datasets::synthetic_digits(per_class, src.speakers, p.sample_rate, seed);
            Ok((utts, p, format!("synthetic:{per_class}")))
        }
        (None, None) => Err(Error::Config("give --root or --synthetic".into())),
    }
}

fn split_data(data: &Dataset, split: Option<&Path>) -> Result<(Dataset, Option<Dataset>, Option<Dataset>)> {
    match split {
        None => Ok((data.clone(), None, None)),
        Some(p) => {
            let s = Split::load(p)?;
            Ok((data.subset(&s.train)?, Some(data.subset(&s.val)?), Some(data.subset(&s.test)?)))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let out = &cli.out;
    fs::create_dir_all(out)?;
    let config = cli.config.as_deref();
    match cli.command {
        Command::GenSinusoid { count } => {
            let data = datasets::generate_sinusoid_dataset(count, cli.seed)?;
            write_json(&out.join("sinusoid.json"), &data.dataset()?)?;
            write_json(&out.join("sinusoid_params.json"), &data.params)?;
            println!("{count} samples -> {}", out.join("sinusoid.json").display());
        }
        Command::PrepAudio { source, layout } => {
            let (utts, pipeline, name) = load_utterances(&source, cli.seed)?;
            let data = datasets::build_audio_dataset(&utts, &pipeline, layout.into(), cli.seed, None)?;
            let split = datasets::split(data.labels().unwrap_or_default(), cli.seed);
            write_json(&out.join("dataset.json"), &data)?;
            split.save(&out.join("split.json"))?;
            write_json(
                &out.join("manifest.json"),
                &Manifest {
                    source: name,
                    utterances: utts.len(),
                    snr_db: source.snr,
                    layout,
                    pipeline,
                },
            )?;
            println!(
                "{} utterances: {} train / {} val / {} test",
                utts.len(),
                split.train.len(),
                split.val.len(),
                split.test.len()
            );
        }
        Command::Train {
            data,
            split,
            arch,
            mlp,
            activation,
            name,
        } => {
            let mut cfg: TrainConfig = read_config(config)?;
            cfg.seed = cli.seed;
            let dataset: Dataset = read_json(&data)?;
            let (tr, va, te) = split_data(&dataset, split.as_deref())?;
            let mut model = match (arch, mlp) {
                (Some(a), _) => SavedModel::Network(Network::build(&NetworkSpec::load(&a)?, cli.seed)?),
                (None, Some(sizes)) => {
                    let act = RealActivation::ALL
                        .into_iter()
                        .find(|a| a.name() == activation)
                        .ok_or_else(|| Error::UnknownName(activation.clone()))?;
                    SavedModel::Mlp(Mlp::new(&sizes, act, cli.seed)?)
                }
                (None, None) => return Err(Error::Config("give --arch or --mlp".into())),
            };
            let mut log = |e: &hnn::train::EpochStats| {
                println!("epoch {:>4} train {:.6} val {}", e.epoch + 1, e.train_loss, e.val_loss.map_or("-".into(), |v| format!("{v:.6}")));
                Control::Continue
            };
            let report = match &mut model {
                SavedModel::Network(n) => train(n, &tr, va.as_ref(), te.as_ref(), &cfg, &mut log)?,
                SavedModel::Mlp(m) => train(m, &tr, va.as_ref(), te.as_ref(), &cfg, &mut log)?,
            };
            write_json(&out.join("model.json"), &model)?;
            write_json(&out.join("train_report.json"), &report)?;
            let manifest: Option<Manifest> = data.parent().map(|d| d.join("manifest.json")).filter(|p| p.exists()).map(|p| read_json(&p)).transpose()?;
            if let Some(test) = report.test {
                let record = RunRecord {
                    snr_db: manifest.and_then(|m| m.snr_db),
                    model: name,
                    test_loss: test.loss,
                    params: report.param_count,
                };
                write_json(&out.join("run.json"), &record)?;
                println!("test loss {:.6} ({} parameters)", test.loss, report.param_count);
            }
        }
        Command::Search { data, split } => {
            let mut cfg: SearchConfig = read_config(config)?;
            cfg.seed = cli.seed;
            let dataset: Dataset = read_json(&data)?;
            let (tr, va, _) = split_data(&dataset, Some(&split))?;
            let va = va.expect("split gives a validation set");
            let outputs = match &tr.targets {
                hnn::train::Targets::Classes { classes, .. } => *classes,
                hnn::train::Targets::Values(t) => t.shape()[1],
            };
            let task = TaskSpec::from_dataset(&tr, outputs)?;
            let evaluator = TrainingEvaluator {
                train: tr,
                val: va,
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
            };
            let store = TrialStore::create(&out.join("trials.ndjson"))?;
            let state = run_search(task, cfg, &evaluator, store)?;
            write_json(&out.join("search_state.json"), &state)?;
            if let Some(best) = &state.best_architecture {
                write_json(&out.join("best_architecture.json"), best)?;
            }
            if let Some(t) = state.best() {
                println!(
                    "best trial {} val loss {:.6} with {} parameters",
                    t.trial_id,
                    t.validation_loss.unwrap_or(f64::NAN),
                    t.param_count
                );
            }
        }
        Command::DecodeWeights {
            model,
            layer,
            tolerance,
        } => {
            let saved: SavedModel = read_json(&model)?;
            let w = match &saved {
                SavedModel::Mlp(m) => WeightMap::from_linear(
                    m.layers
                        .get(layer)
                        .ok_or_else(|| Error::Config(format!("no layer {layer}")))?,
                )?,
                SavedModel::Network(n) => {
                    let path = n
                        .blocks
                        .first()
                        .and_then(|b| b.paths.first())
                        .ok_or_else(|| Error::Config("network has no paths".into()))?;
                    WeightMap::from_conv(&path.conv)?
                }
            };
            let ordered = analysis::reorder_rows(&w)?;
            let report = analysis::detect_complex_blocks(&ordered, tolerance)?;
            fs::write(out.join("weights.svg"), analysis::render_heatmap(&w, 12))?;
            fs::write(out.join("weights_ordered.svg"), analysis::render_heatmap(&ordered, 12))?;
            write_json(&out.join("complex_blocks.json"), &report)?;
            write_json(&out.join("bias_signs.json"), &ordered.bias_signs())?;
            println!(
                "{} blocks with residual < {tolerance} out of {} scanned (chance rate {:.4})",
                report.blocks.len(),
                report.scanned,
                analysis::random_block_pass_rate(tolerance)
            );
        }
        Command::ProbePhase { model, a, m, steps } => {
            let saved: SavedModel = read_json(&model)?;
            let SavedModel::Mlp(mlp) = saved else {
                return Err(Error::Config("phase probing needs a sinusoid MLP".into()));
            };
            let probe = analysis::phase_sweep_probe(&mlp, a, m, steps)?;
            write_json(&out.join("phase_probe.json"), &probe)?;
            let mut csv = String::from("layer,unit,phase,value\n");
            for (l, units) in probe.traces.iter().enumerate() {
                for (u, trace) in units.iter().enumerate() {
                    for (p, v) in probe.phases.iter().zip(trace) {
                        csv.push_str(&format!("{l},{u},{p:.6},{v:.6}\n"));
                    }
                }
            }
            fs::write(out.join("phase_probe.csv"), csv)?;
            println!("{} layers x {steps} phases", probe.traces.len());
        }
        Command::Report { runs, search, top } => {
            let mut records = Vec::new();
            for r in &runs {
                records.push(read_json::<RunRecord>(r)?);
            }
            if !records.is_empty() {
                fs::write(out.join("runs.csv"), analysis::runs_csv(&records)?)?;
                let md = analysis::runs_markdown(&records);
                fs::write(out.join("runs.md"), &md)?;
                print!("{md}");
            }
            if let Some(s) = search {
                let state: SearchState = read_json(&s)?;
                let mut done: Vec<_> = state
                    .trials
                    .iter()
                    .filter(|t| t.status == TrialStatus::Complete && t.feasible)
                    .collect();
                done.sort_by(|a, b| a.validation_loss.partial_cmp(&b.validation_loss).expect("finite losses"));
                let ranked: Vec<Vec<String>> = done
                    .iter()
                    .take(top)
                    .map(|t| {
                        t.architecture
                            .blocks
                            .iter()
                            .map(|b| {
                                b.paths
                                    .iter()
                                    .map(|(k, p)| format!("{k}:{}", p.activation))
                                    .collect::<Vec<_>>()
                                    .join(" ")
                            })
                            .collect()
                    })
                    .collect();
                fs::write(out.join("activations.csv"), analysis::activations_csv(&ranked)?)?;
                println!("{} ranked architectures", ranked.len());
            }
        }
        Command::CropSweep {
            model,
            split,
            source,
            layout,
        } => {
            let saved: SavedModel = read_json(&model)?;
            let split = Split::load(&split)?;
            let (utts, pipeline, _) = load_utterances(&source, cli.seed)?;
            let test: Vec<Utterance> = split
                .test
                .iter()
                .map(|&i| utts.get(i).cloned().ok_or_else(|| Error::Config(format!("split index {i} out of range for the audio source"))))
                .collect::<Result<_>>()?;
            let score = |ratio: Option<f64>| -> Result<(f64, f64)> {
                let d = datasets::build_audio_dataset(&test, &pipeline, layout.into(), cli.seed, ratio)?;
                let e = evaluate(saved.as_model(), &d, 64)?;
                Ok((e.accuracy.unwrap_or(f64::NAN), e.loss))
            };
            let (base, _) = score(None)?;
            let mut points = Vec::new();
            for r in analysis::crop_ratios() {
                let (accuracy, loss) = score(Some(r))?;
                points.push(CropPoint { ratio: r, accuracy, loss });
            }
            fs::write(out.join("crop.csv"), analysis::crop_csv(&points)?)?;
            println!("baseline accuracy {base:.4}; {} crop ratios evaluated", points.len());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnknownName(_) | Error::InvalidArgument(_) | Error::Json(_) | Error::EmptyBlock(_) | Error::DeadOutput(_) => 2,
        Error::Data { .. } | Error::Io(_) => 3,
        Error::Infeasible { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
