//! Phased architecture search over hybrid networks.
//!
//! Phases run in order: Customisation, BlockNumber, then InputSelection and
//! DependencyCheck alternating until the path masks stop changing (or the
//! iteration cap is hit), then StructureRefinement, ActivationDCChoice and
//! HyperparameterChoice. Up to and including BlockNumber only validation loss
//! matters; afterwards a candidate is accepted only if its parameter count is
//! within the configured bounds.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activations::{complex_presets, Activation, RealActivation};
use crate::conversion::{C2R, R2C};
use crate::error::{Error, Result};
use crate::graph::{adapt_io, prune_dependencies, BlockSpec, HeadSpec, InputSpec, IoDomain, IoStrategy, Network, NetworkSpec, PathKind, PathSpec};
use crate::layers::OptimizerKind;
use crate::train::{stream_rng, train, Control, Dataset, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Customisation,
    BlockNumber,
    InputSelection,
    DependencyCheck,
    StructureRefinement,
    ActivationDCChoice,
    HyperparameterChoice,
    Done,
}

impl Phase {
    /// Whether the parameter bounds apply to candidates of this phase.
    pub fn constrained(self) -> bool {
        self > Phase::BlockNumber
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lr: f64,
    pub optimizer: OptimizerKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Complete,
    Pruned,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: usize,
    pub phase: Phase,
    pub architecture: NetworkSpec,
    pub hyper: Hyper,
    /// Finite for complete trials.
    pub validation_loss: Option<f64>,
    /// Validation loss after each epoch.
    pub intermediate: Vec<f64>,
    pub param_count: usize,
    pub feasible: bool,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub wall_time: f64,
}

impl Trial {
    pub fn accepted_loss(&self) -> Option<f64> {
        match self.status {
            TrialStatus::Complete => self.validation_loss,
            _ => None,
        }
    }

    /// Everything except wall time, for reproducibility checks.
    pub fn same_outcome(&self, other: &Trial) -> bool {
        Trial {
            wall_time: 0.0,
            ..self.clone()
        } == Trial {
            wall_time: 0.0,
            ..other.clone()
        }
    }
}

/// One search-space dimension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Dim {
    /// Index into `n` options.
    Choice(usize),
    LogUniform(f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Index(usize),
    Real(f64),
}

impl Value {
    pub fn index(self) -> usize {
        match self {
            Value::Index(i) => i,
            Value::Real(_) => panic!("expected a categorical value"),
        }
    }

    pub fn real(self) -> f64 {
        match self {
            Value::Real(x) => x,
            Value::Index(_) => panic!("expected a continuous value"),
        }
    }
}

pub trait Sampler: Send {
    fn propose(&mut self, history: &[Trial], space: &[Dim]) -> Vec<Value>;
}

/// Independent uniform draws from a seeded stream.
pub struct RandomSampler {
    rng: ChaCha8Rng,
}

impl RandomSampler {
    pub fn new(seed: u64) -> Self {
        RandomSampler {
            rng: stream_rng(seed, 0x5A_4D),
        }
    }
}

impl Sampler for RandomSampler {
    fn propose(&mut self, _history: &[Trial], space: &[Dim]) -> Vec<Value> {
        space
            .iter()
            .map(|d| match *d {
                Dim::Choice(n) => Value::Index(self.rng.random_range(0..n.max(1))),
                Dim::LogUniform(lo, hi) => Value::Real((self.rng.random_range(lo.ln()..=hi.ln())).exp()),
            })
            .collect()
    }
}

/// Stops a trial at mid-training when its validation loss is worse than the
/// median of completed trials at the same epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedianPruner;

impl MedianPruner {
    pub fn check_epoch(total_epochs: usize) -> usize {
        (total_epochs / 2).max(1) - 1
    }

    pub fn should_prune(&self, epoch: usize, value: f64, total_epochs: usize, history: &[Trial]) -> bool {
        if epoch != Self::check_epoch(total_epochs) {
            return false;
        }
        let mut seen: Vec<f64> = history
            .iter()
            .filter(|t| t.status == TrialStatus::Complete)
            .filter_map(|t| t.intermediate.get(epoch).copied())
            .collect();
        if seen.is_empty() {
            return false;
        }
        seen.sort_by(f64::total_cmp);
        let mid = seen.len() / 2;
        let median = if seen.len() % 2 == 1 {
            seen[mid]
        } else {
            0.5 * (seen[mid - 1] + seen[mid])
        };
        value > median
    }
}

/// Result of evaluating one candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub intermediate: Vec<f64>,
    pub validation_loss: f64,
    pub pruned: bool,
}

/// Scores a candidate. `report` is called with each epoch's validation loss
/// and returns whether to stop.
pub trait Evaluator: Sync {
    fn evaluate(&self, spec: &NetworkSpec, hyper: &Hyper, seed: u64, report: &mut dyn FnMut(usize, f64) -> Control) -> Result<Outcome>;
}

/// Trains each candidate on fixed train/validation sets.
pub struct TrainingEvaluator {
    pub train: Dataset,
    pub val: Dataset,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Evaluator for TrainingEvaluator {
    fn evaluate(&self, spec: &NetworkSpec, hyper: &Hyper, seed: u64, report: &mut dyn FnMut(usize, f64) -> Control) -> Result<Outcome> {
        let mut net = Network::build(spec, seed)?;
        let cfg = TrainConfig {
            lr: hyper.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: hyper.optimizer,
            seed,
        };
        let mut intermediate = Vec::new();
        let r = train(&mut net, &self.train, Some(&self.val), None, &cfg, &mut |e| {
            let v = e.val_loss.unwrap_or(f64::NAN);
            intermediate.push(v);
            report(e.epoch, v)
        })?;
        let validation_loss = r
            .final_val_loss()
            .ok_or_else(|| Error::invalid("no validation loss"))?;
        Ok(Outcome {
            intermediate,
            validation_loss,
            pruned: r.stopped_early,
        })
    }
}

/// Append-only trial log, optionally mirrored to an NDJSON file.
pub struct TrialStore {
    path: Option<PathBuf>,
    trials: Mutex<Vec<Trial>>,
}

impl TrialStore {
    pub fn in_memory() -> Self {
        TrialStore {
            path: None,
            trials: Mutex::new(Vec::new()),
        }
    }

    /// Starts a fresh log at `path`.
    pub fn create(path: &Path) -> Result<Self> {
        File::create(path)?;
        Ok(TrialStore {
            path: Some(path.to_path_buf()),
            trials: Mutex::new(Vec::new()),
        })
    }

    pub fn append(&self, trial: Trial) -> Result<()> {
        let mut trials = self.trials.lock().expect("trial store lock");
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().append(true).create(true).open(path)?;
            writeln!(f, "{}", serde_json::to_string(&trial)?)?;
        }
        trials.push(trial);
        Ok(())
    }

    pub fn snapshot(&self) -> Vec<Trial> {
        self.trials.lock().expect("trial store lock").clone()
    }

    pub fn read(path: &Path) -> Result<Vec<Trial>> {
        let f = File::open(path)?;
        BufReader::new(f)
            .lines()
            .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
            .map(|l| Ok(serde_json::from_str(&l?)?))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub seed: u64,
    pub trials_per_phase: usize,
    pub min_blocks: usize,
    pub max_blocks: usize,
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub dropouts: Vec<f64>,
    pub min_params: usize,
    pub max_params: usize,
    /// Preliminary learning rate used until the last phase.
    pub lr: f64,
    pub lr_range: (f64, f64),
    pub optimizers: Vec<OptimizerKind>,
    pub epochs: usize,
    pub batch_size: usize,
    pub pruning: bool,
    pub iteration_cap: usize,
    pub io_strategy: IoStrategy,
    /// Starting block; a four-path default is used when absent.
    pub base_block: Option<BlockSpec>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            seed: 0,
            trials_per_phase: 8,
            min_blocks: 2,
            max_blocks: 7,
            channels: vec![4, 8, 16, 32],
            kernels: vec![1, 3, 5],
            dropouts: vec![0.0, 0.1, 0.2],
            min_params: 0,
            max_params: usize::MAX,
            lr: 1e-3,
            lr_range: (1e-4, 1e-2),
            optimizers: vec![OptimizerKind::Adam, OptimizerKind::Sgd],
            epochs: 5,
            batch_size: 32,
            pruning: false,
            iteration_cap: 5,
            io_strategy: IoStrategy::Convert,
            base_block: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.trials_per_phase == 0 {
            return bad("trials_per_phase must be positive");
        }
        if self.min_blocks == 0 || self.min_blocks > self.max_blocks {
            return bad("block range must be non-empty and start at 1 or more");
        }
        if self.channels.is_empty() || self.channels.contains(&0) || self.kernels.is_empty() || self.kernels.contains(&0) {
            return bad("channel and kernel choices must be positive and non-empty");
        }
        if self.min_params > self.max_params {
            return bad("min_params exceeds max_params");
        }
        if !(self.lr > 0.0) || !(self.lr_range.0 > 0.0 && self.lr_range.0 <= self.lr_range.1) {
            return bad("learning rates must be positive with lo <= hi");
        }
        if self.optimizers.is_empty() || self.iteration_cap == 0 || self.epochs == 0 || self.batch_size == 0 {
            return bad("optimizers, iteration cap, epochs and batch size must be non-empty/positive");
        }
        if self.dropouts.iter().any(|p| !(0.0..1.0).contains(p)) {
            return bad("dropout choices must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn feasible(&self, params: usize) -> bool {
        (self.min_params..=self.max_params).contains(&params)
    }
}

/// What the data offers and the task requires.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub input: InputSpec,
    pub input_domain: IoDomain,
    pub output_domain: IoDomain,
    pub outputs: usize,
    /// Sequence length of the inputs.
    pub length: usize,
}

impl TaskSpec {
    /// Derives the task from a dataset of `[n, channels, length]` inputs.
    pub fn from_dataset(d: &Dataset, outputs: usize) -> Result<TaskSpec> {
        let ch = |t: &Option<crate::tensor::Tensor>| t.as_ref().map_or(0, |t| t.shape().get(1).copied().unwrap_or(0));
        let length = d
            .real
            .as_ref()
            .or(d.complex.as_ref())
            .and_then(|t| t.shape().get(2).copied())
            .ok_or_else(|| Error::shape("search data must be [n, channels, length]"))?;
        let input = InputSpec {
            real_channels: ch(&d.real),
            complex_channels: ch(&d.complex),
            conversion: None,
        };
        Ok(TaskSpec {
            input_domain: input.domain(),
            input,
            output_domain: IoDomain::Real,
            outputs,
            length,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub phase: Phase,
    pub phases_run: Vec<Phase>,
    pub best_architecture: Option<NetworkSpec>,
    pub best_hyper: Hyper,
    pub best_trial: Option<usize>,
    pub trials: Vec<Trial>,
    pub seed: u64,
    pub min_params: usize,
    pub max_params: usize,
}

impl SearchState {
    pub fn best(&self) -> Option<&Trial> {
        self.best_trial.and_then(|id| self.trials.iter().find(|t| t.trial_id == id))
    }
}

fn default_block(c: usize) -> BlockSpec {
    let rr: Activation = Activation::Real(RealActivation::ReLU);
    let tanh: Activation = Activation::Real(RealActivation::Tanh);
    let ctanh: Activation = "cTanh".parse().expect("preset");
    BlockSpec::default()
        .with(PathKind::RR, PathSpec::new(c, 3, rr))
        .with(PathKind::RC, PathSpec::new(c, 3, tanh).with_conversion("Cartesian"))
        .with(PathKind::CR, PathSpec::new(c, 3, ctanh.clone()).with_conversion("Cartesian"))
        .with(PathKind::CC, PathSpec::new(c, 3, ctanh))
}

/// Real activations considered by the search.
pub fn real_candidates() -> Vec<Activation> {
    [
        RealActivation::ReLU,
        RealActivation::Softplus,
        RealActivation::Tanh,
        RealActivation::Abs,
        RealActivation::Tanhshrink,
    ]
    .into_iter()
    .map(Activation::Real)
    .collect()
}

/// Complex presets considered by the search.
pub fn complex_candidates() -> Vec<Activation> {
    complex_presets().into_iter().map(Activation::Complex).collect()
}

/// The search driver.
pub struct Search<'a> {
    pub task: TaskSpec,
    pub config: SearchConfig,
    evaluator: &'a dyn Evaluator,
    sampler: Box<dyn Sampler + 'a>,
    store: TrialStore,
    pruner: Option<MedianPruner>,
    pub state: SearchState,
}

impl<'a> Search<'a> {
    pub fn new(task: TaskSpec, config: SearchConfig, evaluator: &'a dyn Evaluator, store: TrialStore) -> Result<Self> {
        config.validate()?;
        let sampler = Box::new(RandomSampler::new(config.seed));
        let state = SearchState {
            phase: Phase::Customisation,
            phases_run: Vec::new(),
            best_architecture: None,
            best_hyper: Hyper {
                lr: config.lr,
                optimizer: config.optimizers[0],
            },
            best_trial: None,
            trials: Vec::new(),
            seed: config.seed,
            min_params: config.min_params,
            max_params: config.max_params,
        };
        Ok(Search {
            pruner: config.pruning.then_some(MedianPruner),
            task,
            config,
            evaluator,
            sampler,
            store,
            state,
        })
    }

    pub fn with_sampler(mut self, sampler: Box<dyn Sampler + 'a>) -> Self {
        self.sampler = sampler;
        self
    }

    fn count(spec: &NetworkSpec) -> Result<usize> {
        Ok(Network::build(spec, 0)?.count_parameters().total)
    }

    /// Evaluates candidates (already pruned) and records the trials in order.
    fn run_trials(&mut self, phase: Phase, candidates: Vec<Result<(NetworkSpec, Hyper)>>) -> Result<Vec<Trial>> {
        let first_id = self.state.trials.len();
        let mut prepared = Vec::with_capacity(candidates.len());
        for (i, c) in candidates.into_iter().enumerate() {
            let trial_id = first_id + i;
            prepared.push((trial_id, c.and_then(|(s, h)| Ok((Self::count(&s)?, s, h)))));
        }
        let evaluate = |trial_id: usize, cand: &Result<(usize, NetworkSpec, Hyper)>, history: &[Trial]| -> Trial {
            let start = Instant::now();
            let (params, spec, hyper) = match cand {
                Ok(c) => c.clone(),
                Err(e) => {
                    return Trial {
                        trial_id,
                        phase,
                        architecture: self.state.best_architecture.clone().expect("a base architecture exists"),
                        hyper: self.state.best_hyper,
                        validation_loss: None,
                        intermediate: Vec::new(),
                        param_count: 0,
                        feasible: false,
                        status: TrialStatus::Failed,
                        note: Some(e.to_string()),
                        wall_time: start.elapsed().as_secs_f64(),
                    }
                }
            };
            let feasible = self.config.feasible(params);
            let mut trial = Trial {
                trial_id,
                phase,
                architecture: spec.clone(),
                hyper,
                validation_loss: None,
                intermediate: Vec::new(),
                param_count: params,
                feasible,
                status: TrialStatus::Failed,
                note: None,
                wall_time: 0.0,
            };
            if phase.constrained() && !feasible {
                trial.note = Some(format!(
                    "{params} parameters outside [{}, {}]",
                    self.config.min_params, self.config.max_params
                ));
            } else {
                let seed = self.config.seed ^ (trial_id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                let epochs = self.config.epochs;
                let pruner = self.pruner;
                let result = self.evaluator.evaluate(&spec, &hyper, seed, &mut |epoch, v| match pruner {
                    Some(p) if p.should_prune(epoch, v, epochs, history) => Control::Stop,
                    _ => Control::Continue,
                });
                match result {
                    Ok(o) if o.pruned => {
                        trial.intermediate = o.intermediate;
                        trial.validation_loss = Some(o.validation_loss);
                        trial.status = TrialStatus::Pruned;
                    }
                    Ok(o) if o.validation_loss.is_finite() => {
                        trial.intermediate = o.intermediate;
                        trial.validation_loss = Some(o.validation_loss);
                        trial.status = TrialStatus::Complete;
                    }
                    Ok(o) => trial.note = Some(format!("non-finite validation loss {}", o.validation_loss)),
                    Err(e) => trial.note = Some(e.to_string()),
                }
            }
            trial.wall_time = start.elapsed().as_secs_f64();
            trial
        };
        let trials: Vec<Trial> = if self.pruner.is_some() {
            let mut history = self.state.trials.clone();
            let mut out = Vec::with_capacity(prepared.len());
            for (id, c) in &prepared {
                let t = evaluate(*id, c, &history);
                history.push(t.clone());
                out.push(t);
            }
            out
        } else {
            let history = self.state.trials.clone();
            prepared.par_iter().map(|(id, c)| evaluate(*id, c, &history)).collect()
        };
        for t in &trials {
            self.store.append(t.clone())?;
            self.state.trials.push(t.clone());
        }
        Ok(trials)
    }

    /// Adopts the best acceptable trial of `trials` if it beats the incumbent.
    fn accept(&mut self, phase: Phase, trials: &[Trial]) {
        let incumbent = self.state.best().cloned();
        let incumbent_ok = incumbent.as_ref().is_some_and(|t| !phase.constrained() || t.feasible);
        let mut best: Option<&Trial> = None;
        for t in trials {
            let Some(loss) = t.accepted_loss() else { continue };
            if phase.constrained() && !t.feasible {
                continue;
            }
            if best.is_none_or(|b| loss < b.validation_loss.unwrap_or(f64::INFINITY)) {
                best = Some(t);
            }
        }
        if let Some(b) = best {
            let better = match &incumbent {
                Some(inc) if incumbent_ok => b.validation_loss < inc.validation_loss,
                _ => true,
            };
            if better {
                self.state.best_trial = Some(b.trial_id);
                self.state.best_architecture = Some(b.architecture.clone());
                self.state.best_hyper = b.hyper;
            }
        }
    }

    fn enter(&mut self, phase: Phase) {
        self.state.phase = phase;
        self.state.phases_run.push(phase);
    }

    fn current(&self) -> Result<NetworkSpec> {
        self.state
            .best_architecture
            .clone()
            .ok_or_else(|| Error::invalid("no architecture yet"))
    }

    fn base_block(&self) -> BlockSpec {
        self.config.base_block.clone().unwrap_or_else(|| {
            let c = self.config.channels[self.config.channels.len() / 2];
            default_block(c)
        })
    }

    fn shaped(&self, blocks: usize) -> Result<NetworkSpec> {
        let spec = NetworkSpec {
            input: self.task.input.clone(),
            blocks: vec![self.base_block(); blocks],
            head: HeadSpec {
                outputs: self.task.outputs,
                real: true,
                complex: true,
                complex_conversion: C2R::Real,
            },
        };
        adapt_io(&spec, self.task.input_domain, self.task.output_domain, self.config.io_strategy)
    }

    /// Fits the I/O ports to the task and scores the starting point.
    pub fn phase_customisation(&mut self) -> Result<()> {
        self.enter(Phase::Customisation);
        let spec = self.shaped(self.config.min_blocks)?;
        self.state.best_architecture = Some(spec.clone());
        let hyper = self.state.best_hyper;
        let trials = self.run_trials(Phase::Customisation, vec![Ok((spec, hyper))])?;
        self.accept(Phase::Customisation, &trials);
        Ok(())
    }

    /// Picks the block count with the lowest validation loss.
    pub fn phase_block_number(&mut self) -> Result<()> {
        self.enter(Phase::BlockNumber);
        let range: Vec<usize> = (self.config.min_blocks..=self.config.max_blocks).collect();
        if range.len() == 1 {
            return Ok(());
        }
        let current = self.current()?.blocks.len();
        let mut counts: Vec<usize> = range.iter().copied().filter(|&n| n != current).collect();
        if counts.len() > self.config.trials_per_phase {
            let space = vec![Dim::Choice(counts.len()); 1];
            let mut chosen = Vec::new();
            while chosen.len() < self.config.trials_per_phase {
                let i = self.sampler.propose(&self.state.trials, &space)[0].index();
                if !chosen.contains(&counts[i]) {
                    chosen.push(counts[i]);
                }
            }
            chosen.sort_unstable();
            counts = chosen;
        }
        let hyper = self.state.best_hyper;
        let candidates = counts.iter().map(|&n| Ok((self.shaped(n)?, hyper))).collect();
        let trials = self.run_trials(Phase::BlockNumber, candidates)?;
        self.accept(Phase::BlockNumber, &trials);
        Ok(())
    }

    fn masked(spec: &NetworkSpec, mask: &[Vec<PathKind>]) -> Result<NetworkSpec> {
        let mut s = spec.clone();
        for (block, off) in s.blocks.iter_mut().zip(mask) {
            for k in off {
                block.paths.remove(k);
            }
        }
        for (b, block) in s.blocks.iter().enumerate() {
            if block.paths.is_empty() {
                return Err(Error::EmptyBlock(b));
            }
        }
        let s = prune_dependencies(&s)?;
        s.validate()?;
        Ok(s)
    }

    /// Proposes path on/off masks: the incumbent, the incumbent without its
    /// complex-to-complex paths, and random masks.
    pub fn phase_input_selection(&mut self) -> Result<()> {
        self.enter(Phase::InputSelection);
        let base = self.current()?;
        let hyper = self.state.best_hyper;
        let live: Vec<Vec<PathKind>> = base.blocks.iter().map(|b| b.paths.keys().copied().collect()).collect();
        let mut masks: Vec<Vec<Vec<PathKind>>> = vec![vec![Vec::new(); live.len()]];
        masks.push(live.iter().map(|p| p.iter().copied().filter(|k| *k == PathKind::CC).collect()).collect());
        let space: Vec<Dim> = live.iter().flat_map(|p| vec![Dim::Choice(4); p.len()]).collect();
        while masks.len() < self.config.trials_per_phase {
            let v = self.sampler.propose(&self.state.trials, &space);
            let mut it = v.into_iter();
            let mask = live
                .iter()
                .map(|paths| paths.iter().copied().filter(|_| it.next().map(Value::index) == Some(0)).collect())
                .collect();
            masks.push(mask);
        }
        masks.truncate(self.config.trials_per_phase.max(1));
        let candidates = masks.iter().map(|m| Ok((Self::masked(&base, m)?, hyper))).collect();
        let trials = self.run_trials(Phase::InputSelection, candidates)?;
        self.accept(Phase::InputSelection, &trials);
        Ok(())
    }

    /// Prunes the incumbent; returns whether its path set changed since
    /// `previous`.
    pub fn phase_dependency_check(&mut self, previous: &NetworkSpec) -> Result<bool> {
        self.enter(Phase::DependencyCheck);
        let pruned = prune_dependencies(&self.current()?)?;
        self.state.best_architecture = Some(pruned.clone());
        let paths = |s: &NetworkSpec| -> Vec<Vec<PathKind>> { s.blocks.iter().map(|b| b.paths.keys().copied().collect()).collect() };
        Ok(paths(&pruned) != paths(previous))
    }

    /// Samples channels, kernels, pooling, normalisation and dropout.
    pub fn phase_structure_refinement(&mut self) -> Result<()> {
        self.enter(Phase::StructureRefinement);
        let base = self.current()?;
        let hyper = self.state.best_hyper;
        let per_path = 4;
        let mut space = Vec::new();
        for b in &base.blocks {
            space.push(Dim::Choice(2));
            for _ in &b.paths {
                space.extend([
                    Dim::Choice(self.config.channels.len()),
                    Dim::Choice(self.config.kernels.len()),
                    Dim::Choice(2),
                    Dim::Choice(self.config.dropouts.len().max(1)),
                ]);
            }
        }
        let mut candidates = Vec::new();
        for _ in 0..self.config.trials_per_phase {
            let v = self.sampler.propose(&self.state.trials, &space);
            let mut s = base.clone();
            let mut at = 0;
            let mut length = self.task.length;
            for block in &mut s.blocks {
                let pool = v[at].index() == 1 && length >= 4;
                block.pool = pool.then_some(2);
                if pool {
                    length /= 2;
                }
                at += 1;
                for (&kind, p) in block.paths.iter_mut() {
                    let c = self.config.channels[v[at].index()];
                    p.conv.c = round_to_arity(c, kind, p)?;
                    p.conv.k = self.config.kernels[v[at + 1].index()];
                    p.conv.n = 1;
                    p.optional.norm = v[at + 2].index() == 1;
                    let d = self.config.dropouts.get(v[at + 3].index()).copied().unwrap_or(0.0);
                    p.optional.dropout = (d > 0.0).then_some(d);
                    at += per_path;
                }
            }
            candidates.push(s.validate().map(|_| (s, hyper)));
        }
        let trials = self.run_trials(Phase::StructureRefinement, candidates)?;
        self.accept(Phase::StructureRefinement, &trials);
        Ok(())
    }

    /// Samples activations per path and conversion kinds per cross path.
    pub fn phase_activation_dc_choice(&mut self) -> Result<()> {
        self.enter(Phase::ActivationDCChoice);
        let base = self.current()?;
        let hyper = self.state.best_hyper;
        let real = real_candidates();
        let complex = complex_candidates();
        let options = |kind: PathKind| -> Vec<Activation> {
            let mut o = match kind.input() {
                crate::layers::Domain::Real => real.clone(),
                crate::layers::Domain::Complex => complex.clone(),
            };
            if kind.is_cross() {
                o.push(Activation::None);
            }
            o
        };
        let mut space = Vec::new();
        for b in &base.blocks {
            for &kind in b.paths.keys() {
                space.push(Dim::Choice(options(kind).len()));
                space.push(Dim::Choice(match kind {
                    PathKind::RC => R2C::ALL.len(),
                    PathKind::CR => C2R::ALL.len(),
                    _ => 1,
                }));
            }
        }
        let mut candidates = Vec::new();
        for _ in 0..self.config.trials_per_phase {
            let v = self.sampler.propose(&self.state.trials, &space);
            let mut s = base.clone();
            let mut at = 0;
            for block in &mut s.blocks {
                for (&kind, p) in block.paths.iter_mut() {
                    p.activation = options(kind)[v[at].index()].clone();
                    match kind {
                        PathKind::RC => p.conversion = Some(format!("{:?}", R2C::ALL[v[at + 1].index()])),
                        PathKind::CR => {
                            p.conversion = Some(format!("{:?}", C2R::ALL[v[at + 1].index()]));
                            p.n_phases = None;
                        }
                        _ => {}
                    }
                    at += 2;
                }
            }
            let candidate = (|| -> Result<NetworkSpec> {
                for block in &mut s.blocks {
                    for (&kind, p) in block.paths.iter_mut() {
                        p.conv.c = round_to_arity(p.conv.c, kind, p)?;
                    }
                }
                s.validate()?;
                Ok(s)
            })();
            candidates.push(candidate.map(|s| (s, hyper)));
        }
        let trials = self.run_trials(Phase::ActivationDCChoice, candidates)?;
        self.accept(Phase::ActivationDCChoice, &trials);
        Ok(())
    }

    /// Samples the learning rate (log-uniform) and optimizer.
    pub fn phase_hyperparameter_choice(&mut self) -> Result<()> {
        self.enter(Phase::HyperparameterChoice);
        let base = self.current()?;
        let space = [
            Dim::LogUniform(self.config.lr_range.0, self.config.lr_range.1),
            Dim::Choice(self.config.optimizers.len()),
        ];
        let mut candidates = Vec::new();
        for _ in 0..self.config.trials_per_phase {
            let v = self.sampler.propose(&self.state.trials, &space);
            let hyper = Hyper {
                lr: v[0].real(),
                optimizer: self.config.optimizers[v[1].index()],
            };
            candidates.push(Ok((base.clone(), hyper)));
        }
        let trials = self.run_trials(Phase::HyperparameterChoice, candidates)?;
        self.accept(Phase::HyperparameterChoice, &trials);
        Ok(())
    }

    /// Runs every phase and returns the final state, or the best infeasible
    /// trial when nothing satisfies the parameter bounds.
    pub fn run(mut self) -> Result<SearchState> {
        self.phase_customisation()?;
        self.phase_block_number()?;
        for _ in 0..self.config.iteration_cap {
            let before = self.current()?;
            self.phase_input_selection()?;
            if !self.phase_dependency_check(&before)? {
                break;
            }
        }
        self.phase_structure_refinement()?;
        self.phase_activation_dc_choice()?;
        self.phase_hyperparameter_choice()?;
        self.enter(Phase::Done);
        let feasible = self.state.best().is_some_and(|t| t.feasible);
        if !feasible {
            let cfg = &self.config;
            let distance = |p: usize| {
                if p < cfg.min_params {
                    cfg.min_params - p
                } else {
                    p.saturating_sub(cfg.max_params)
                }
            };
            let closest = self
                .state
                .trials
                .iter()
                .filter(|t| t.param_count > 0)
                .min_by_key(|t| (distance(t.param_count), t.trial_id))
                .ok_or_else(|| Error::Config("no trial produced a buildable architecture".into()))?;
            return Err(Error::Infeasible {
                trial_id: closest.trial_id,
                param_count: closest.param_count,
            });
        }
        Ok(self.state)
    }
}

/// Rounds a path's channel count up to a multiple of its conversion arity.
fn round_to_arity(c: usize, kind: PathKind, p: &PathSpec) -> Result<usize> {
    let arity = match p.conversion_spec(kind)? {
        Some(spec) => spec.in_arity(),
        None => 1,
    };
    Ok(c.div_ceil(arity) * arity)
}

/// Convenience wrapper: search with the default random sampler.
pub fn run_search(task: TaskSpec, config: SearchConfig, evaluator: &dyn Evaluator, store: TrialStore) -> Result<SearchState> {
    Search::new(task, config, evaluator, store)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phases_are_ordered() {
        assert!(Phase::Customisation < Phase::BlockNumber);
        assert!(!Phase::BlockNumber.constrained());
        assert!(Phase::InputSelection.constrained());
    }

    #[test]
    fn random_sampler_is_reproducible() {
        let space = [Dim::Choice(5), Dim::LogUniform(1e-4, 1e-2)];
        let mut a = RandomSampler::new(3);
        let mut b = RandomSampler::new(3);
        for _ in 0..10 {
            let (x, y) = (a.propose(&[], &space), b.propose(&[], &space));
            assert_eq!(x, y);
            assert!((1e-4..=1e-2).contains(&x[1].real()));
        }
    }

    #[test]
    fn pruner_ignores_empty_history() {
        assert!(!MedianPruner.should_prune(MedianPruner::check_epoch(4), 1e9, 4, &[]));
    }

    #[test]
    fn config_validation() {
        assert!(SearchConfig::default().validate().is_ok());
        let c = SearchConfig {
            min_blocks: 3,
            max_blocks: 2,
            ..SearchConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
