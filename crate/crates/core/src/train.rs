//! Minibatch training and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activations::RealActivation;
use crate::autograd::{Param, Session, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Network;
use crate::layers::{count_parameters, Domain, Init, Linear, Module, OptimizerKind};
use crate::tensor::{Storage, Tensor};

/// Independent random stream `stream` of the generator seeded by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Classes { labels: Vec<usize>, classes: usize },
    /// Regression targets `[n, k]`.
    Values(Tensor),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values(t) => t.shape().first().copied().unwrap_or(0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(&self, idx: &[usize]) -> Result<Targets> {
        Ok(match self {
            Targets::Classes { labels, classes } => Targets::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
            Targets::Values(t) => Targets::Values(gather_rows(t, idx)?),
        })
    }
}

/// Examples along axis 0 of each present input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub real: Option<Tensor>,
    pub complex: Option<Tensor>,
    pub targets: Targets,
}

/// Rows `idx` of `t` along axis 0.
pub fn gather_rows(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let n = *t.shape().first().ok_or_else(|| Error::shape("cannot index a scalar"))?;
    let row = if n == 0 { 0 } else { t.len() / n };
    if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
        return Err(Error::shape(format!("row {bad} out of range for {n} rows")));
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    let storage = match t.storage() {
        Storage::Real(v) => Storage::Real(idx.iter().flat_map(|&i| v[i * row..(i + 1) * row].iter().copied()).collect()),
        Storage::Complex(v) => {
            Storage::Complex(idx.iter().flat_map(|&i| v[i * row..(i + 1) * row].iter().copied()).collect())
        }
    };
    Tensor::from_storage(shape, storage)
}

impl Dataset {
    pub fn new(real: Option<Tensor>, complex: Option<Tensor>, targets: Targets) -> Result<Self> {
        let n = targets.len();
        for t in real.iter().chain(complex.iter()) {
            if t.shape().first() != Some(&n) {
                return Err(Error::shape(format!(
                    "input {:?} does not have {n} examples",
                    t.shape()
                )));
            }
        }
        if real.as_ref().is_some_and(|t| t.is_complex()) || complex.as_ref().is_some_and(|t| !t.is_complex()) {
            return Err(Error::dtype("real/complex inputs are mistyped"));
        }
        if let Targets::Classes { labels, classes } = &targets {
            if labels.iter().any(|&l| l >= *classes) {
                return Err(Error::invalid("label out of range"));
            }
        }
        Ok(Dataset { real, complex, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            real: self.real.as_ref().map(|t| gather_rows(t, idx)).transpose()?,
            complex: self.complex.as_ref().map(|t| gather_rows(t, idx)).transpose()?,
            targets: self.targets.gather(idx)?,
        })
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes { labels, .. } => Some(labels),
            Targets::Values(_) => None,
        }
    }
}

/// Anything that maps dataset inputs to real outputs `[batch, k]`.
pub trait Model: Module + Sync {
    fn forward<'t>(&self, s: &Session<'t>, real: Option<Var<'t>>, complex: Option<Var<'t>>) -> Result<Var<'t>>;
}

impl Model for Network {
    fn forward<'t>(&self, s: &Session<'t>, real: Option<Var<'t>>, complex: Option<Var<'t>>) -> Result<Var<'t>> {
        Network::forward(self, s, real, complex)
    }
}

/// Fully connected network with one activation after every hidden layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: RealActivation,
}

impl Mlp {
    pub fn new(sizes: &[usize], activation: RealActivation, seed: u64) -> Result<Mlp> {
        if sizes.len() < 2 {
            return Err(Error::invalid("an MLP needs input and output sizes"));
        }
        let mut init = Init::new(seed);
        let layers = sizes
            .windows(2)
            .map(|w| Linear::new(&mut init, Domain::Real, w[0], w[1], true))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers, activation })
    }

    /// Hidden activations of every layer for an untracked input `[n, features]`.
    pub fn trace(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let tape = Tape::new();
        let s = Session::eval(&tape);
        let mut h = s.constant(x.clone());
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&s, h)?;
            if i + 1 < self.layers.len() {
                h = self.activation.apply(h)?;
            }
            out.push(h.value());
        }
        Ok(out)
    }
}

impl Module for Mlp {
    fn params(&self) -> Vec<&Param> {
        self.layers.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.params_mut()
    }
}

impl Model for Mlp {
    fn forward<'t>(&self, s: &Session<'t>, real: Option<Var<'t>>, _complex: Option<Var<'t>>) -> Result<Var<'t>> {
        let mut h = real.ok_or_else(|| Error::invalid("MLP needs real input"))?;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(s, h)?;
            if i + 1 < self.layers.len() {
                h = self.activation.apply(h)?;
            }
        }
        Ok(h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 10,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub loss: f64,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_train_loss: f64,
    pub initial_val_loss: Option<f64>,
    pub epochs: Vec<EpochStats>,
    pub test: Option<EvalStats>,
    pub param_count: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn final_val_loss(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.val_loss).or(self.initial_val_loss)
    }
}

fn batch_loss<'t>(out: Var<'t>, targets: &Targets) -> Result<Var<'t>> {
    match targets {
        Targets::Classes { labels, .. } => out.cross_entropy(labels),
        Targets::Values(t) => {
            if out.shape() != t.shape() {
                return Err(Error::shape(format!(
                    "model output {:?} vs targets {:?}",
                    out.shape(),
                    t.shape()
                )));
            }
            let d = out.sub(out.tape().constant(t.clone()))?;
            d.mul(d)?.mean()
        }
    }
}

fn inputs<'t>(s: &Session<'t>, d: &Dataset) -> (Option<Var<'t>>, Option<Var<'t>>) {
    (
        d.real.as_ref().map(|t| s.constant(t.clone())),
        d.complex.as_ref().map(|t| s.constant(t.clone())),
    )
}

fn batches(n: usize, batch_size: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..n.div_ceil(batch_size)).map(move |b| b * batch_size..((b + 1) * batch_size).min(n))
}

/// Model outputs for every example, in eval mode.
pub fn predict<M: Model + ?Sized>(model: &M, data: &Dataset, batch_size: usize) -> Result<Tensor> {
    let order: Vec<usize> = (0..data.len()).collect();
    let mut parts = Vec::new();
    for r in batches(data.len(), batch_size.max(1)) {
        let batch = data.subset(&order[r])?;
        let tape = Tape::new();
        let s = Session::eval(&tape);
        let (re, co) = inputs(&s, &batch);
        parts.push(model.forward(&s, re, co)?.value());
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    crate::kernels::concat(&refs, 0)
}

/// Mean loss (and accuracy for classification) in eval mode.
pub fn evaluate<M: Model + ?Sized>(model: &M, data: &Dataset, batch_size: usize) -> Result<EvalStats> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation on an empty dataset"));
    }
    let order: Vec<usize> = (0..data.len()).collect();
    let (mut loss, mut correct) = (0.0, 0usize);
    for r in batches(data.len(), batch_size.max(1)) {
        let n = r.len();
        let batch = data.subset(&order[r])?;
        let tape = Tape::new();
        let s = Session::eval(&tape);
        let (re, co) = inputs(&s, &batch);
        let out = model.forward(&s, re, co)?;
        loss += batch_loss(out, &batch.targets)?.item()? * n as f64;
        if let Targets::Classes { labels, .. } = &batch.targets {
            let v = out.value();
            let logits = v.real_data()?;
            let k = v.shape()[1];
            correct += labels
                .iter()
                .enumerate()
                .filter(|(i, &l)| {
                    let row = &logits[i * k..(i + 1) * k];
                    let best = (0..k).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                    best == l
                })
                .count();
        }
    }
    let loss = loss / data.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("evaluation loss {loss}")));
    }
    let accuracy = matches!(data.targets, Targets::Classes { .. }).then(|| correct as f64 / data.len() as f64);
    Ok(EvalStats { loss, accuracy })
}

/// What the per-epoch callback wants next.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Trains `model` in place. `on_epoch` sees each epoch's statistics and may
/// stop training early.
pub fn train<M: Model + ?Sized>(
    model: &mut M,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochStats) -> Control,
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("batch size and learning rate must be positive".into()));
    }
    let eval_batch = cfg.batch_size.max(64);
    let initial_train_loss = evaluate(model, train_set, eval_batch)?.loss;
    let initial_val_loss = val_set.map(|v| evaluate(model, v, eval_batch)).transpose()?.map(|e| e.loss);
    let mut optimizer = cfg.optimizer.build(cfg.lr);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle = stream_rng(cfg.seed, 0);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    let mut stopped_early = false;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for r in batches(order.len(), cfg.batch_size) {
            let n = r.len();
            let batch = train_set.subset(&order[r])?;
            let tape = Tape::new();
            let s = Session::new(&tape, true, cfg.seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            step += 1;
            let (re, co) = inputs(&s, &batch);
            let out = model.forward(&s, re, co)?;
            let loss = batch_loss(out, &batch.targets)?;
            let value = loss.item()?;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {value} at epoch {epoch}, step {step}"
                )));
            }
            total += value * n as f64;
            let grads = tape.backward(loss)?;
            optimizer.step(model.params_mut(), &grads)?;
        }
        let stats = EpochStats {
            epoch,
            train_loss: total / train_set.len() as f64,
            val_loss: val_set.map(|v| evaluate(model, v, eval_batch)).transpose()?.map(|e| e.loss),
        };
        epochs.push(stats);
        if on_epoch(&stats) == Control::Stop {
            stopped_early = true;
            break;
        }
    }
    let test = test_set.map(|t| evaluate(model, t, eval_batch)).transpose()?;
    Ok(TrainReport {
        initial_train_loss,
        initial_val_loss,
        epochs,
        test,
        param_count: count_parameters(model).total,
        stopped_early,
    })
}
