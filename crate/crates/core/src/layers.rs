//! Convolution, fully connected, pooling, dropout and normalisation layers,
//! the optimizers, and parameter counting.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{same_padding, Gradients, Param, ParamId, Session, Var};
use crate::error::{Error, Result};
use crate::tensor::{DType, Storage, Tensor, C64};

/// Numeric domain of a layer or signal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    Real,
    Complex,
}

impl Domain {
    pub fn dtype(self) -> DType {
        match self {
            Domain::Real => DType::Real64,
            Domain::Complex => DType::Complex128,
        }
    }

    pub fn of(dtype: DType) -> Domain {
        match dtype {
            DType::Real64 => Domain::Real,
            DType::Complex128 => Domain::Complex,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    #[default]
    Same,
    Valid,
}

/// Hands out parameter ids and initial values from one seeded stream.
pub struct Init {
    next: usize,
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            next: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_id(&mut self) -> ParamId {
        let id = ParamId(self.next);
        self.next += 1;
        id
    }

    /// Uniform initialisation scaled by `1/sqrt(fan_in)`; complex parameters
    /// split the variance between the real and imaginary parts.
    pub fn uniform(&mut self, name: &str, domain: Domain, shape: Vec<usize>, fan_in: usize) -> Param {
        let n: usize = shape.iter().product();
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let value = match domain {
            Domain::Real => {
                let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
                Tensor::real(shape, data)
            }
            Domain::Complex => {
                let b = bound / std::f64::consts::SQRT_2;
                let data = (0..n)
                    .map(|_| C64::new(self.rng.random_range(-b..b), self.rng.random_range(-b..b)))
                    .collect();
                Tensor::complex(shape, data)
            }
        }
        .expect("shape and data agree");
        Param::new(self.next_id(), name, value)
    }

    pub fn zeros(&mut self, name: &str, domain: Domain, shape: Vec<usize>) -> Param {
        Param::new(self.next_id(), name, Tensor::zeros(shape, domain.dtype()))
    }
}

/// Anything that owns trainable parameters.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
}

/// Relative error between autodiff and central-difference gradients of a
/// real scalar `loss(module, session, x)`, taken jointly over the module
/// parameters and the input `x`. Every evaluation uses a training session
/// seeded identically, so dropout masks agree.
pub fn gradient_check<M, F>(module: &M, x: &Tensor, step: f64, loss: F) -> Result<f64>
where
    M: Module + Clone,
    F: for<'t> Fn(&M, &Session<'t>, Var<'t>) -> Result<Var<'t>>,
{
    let input = Param::new(ParamId(usize::MAX), "input", x.clone());
    let tape = crate::autograd::Tape::new();
    let s = Session::new(&tape, true, 0);
    let out = loss(module, &s, s.param(&input))?;
    let grads = tape.backward(out)?;
    let mut all: Vec<&Param> = module.params();
    all.push(&input);
    let analytic: Vec<Tensor> = all
        .iter()
        .map(|p| grads.get(p.id).cloned().unwrap_or_else(|| p.value.zeros_like()))
        .collect();
    let values: Vec<Tensor> = all.iter().map(|p| p.value.clone()).collect();
    let numeric = crate::autograd::finite_difference_gradient(
        |v| {
            let mut m = module.clone();
            for (p, t) in m.params_mut().into_iter().zip(v) {
                p.value = t.clone();
            }
            let input = Param::new(ParamId(usize::MAX), "input", v[v.len() - 1].clone());
            let tape = crate::autograd::Tape::new();
            let s = Session::new(&tape, true, 0);
            loss(&m, &s, s.param(&input))?.item()
        },
        &values,
        step,
    )?;
    crate::autograd::relative_error(&analytic, &numeric, 1e-6)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: usize,
}

pub fn count_parameters<M: Module + ?Sized>(module: &M) -> ParamCount {
    ParamCount {
        total: module.params().iter().map(|p| p.count()).sum(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "one")]
    pub groups: usize,
    #[serde(default)]
    pub padding: Padding,
    #[serde(default = "yes")]
    pub bias: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl ConvConfig {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvConfig {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            groups: 1,
            padding: Padding::Same,
            bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(Error::invalid(format!("conv extents must be positive: {self:?}")));
        }
        if self.groups == 0
            || !self.in_channels.is_multiple_of(self.groups)
            || !self.out_channels.is_multiple_of(self.groups)
        {
            return Err(Error::invalid(format!(
                "groups {} must divide in {} and out {}",
                self.groups, self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }
}

/// 1-D convolution over inputs shaped `[batch, channels, length]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub domain: Domain,
    pub config: ConvConfig,
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Conv1d {
    pub fn new(init: &mut Init, domain: Domain, config: ConvConfig) -> Result<Self> {
        config.validate()?;
        let fan_in = config.in_channels / config.groups * config.kernel;
        let weight = init.uniform(
            "conv.weight",
            domain,
            vec![config.out_channels, config.in_channels / config.groups, config.kernel],
            fan_in,
        );
        let bias = config
            .bias
            .then(|| init.uniform("conv.bias", domain, vec![config.out_channels], fan_in));
        Ok(Conv1d {
            domain,
            config,
            weight,
            bias,
        })
    }

    pub fn output_length(&self, length: usize) -> Result<usize> {
        let c = &self.config;
        match c.padding {
            Padding::Same => Ok(same_padding(length, c.kernel, c.stride).1),
            Padding::Valid => {
                if length < c.kernel {
                    return Err(Error::shape(format!(
                        "input length {length} is shorter than kernel {}",
                        c.kernel
                    )));
                }
                Ok((length - c.kernel) / c.stride + 1)
            }
        }
    }

    pub fn forward<'t>(&self, s: &Session<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != self.config.in_channels {
            return Err(Error::shape(format!(
                "conv expects [batch, {}, length], got {shape:?}",
                self.config.in_channels
            )));
        }
        if x.dtype() != self.domain.dtype() {
            return Err(Error::dtype(format!(
                "{:?} conv received {} input",
                self.domain,
                x.dtype()
            )));
        }
        let c = &self.config;
        let out_len = self.output_length(shape[2])?;
        let pad_left = match c.padding {
            Padding::Same => same_padding(shape[2], c.kernel, c.stride).0,
            Padding::Valid => 0,
        };
        let y = x.conv1d(s.param(&self.weight), c.stride, pad_left, c.groups, out_len)?;
        match &self.bias {
            Some(b) => y.add(s.param(b).reshape(&[c.out_channels, 1])?),
            None => Ok(y),
        }
    }

    /// Real convolution with doubled channels that computes the same map on
    /// interleaved `(re, im)` channels: each complex weight `wr + i·wi`
    /// becomes the block `[[wr, −wi], [wi, wr]]`.
    pub fn real_equivalent(&self, init: &mut Init) -> Result<Conv1d> {
        if self.domain != Domain::Complex {
            return Err(Error::dtype("real_equivalent needs a complex layer"));
        }
        let c = &self.config;
        let cin_g = c.in_channels / c.groups;
        let w = self.weight.value.complex_data()?;
        let mut out = vec![0.0; 4 * w.len()];
        let rows = 2 * cin_g * c.kernel;
        for o in 0..c.out_channels {
            for i in 0..cin_g {
                for k in 0..c.kernel {
                    let z = w[(o * cin_g + i) * c.kernel + k];
                    let at = |oo: usize, ii: usize| oo * rows + ii * c.kernel + k;
                    out[at(2 * o, 2 * i)] = z.re;
                    out[at(2 * o, 2 * i + 1)] = -z.im;
                    out[at(2 * o + 1, 2 * i)] = z.im;
                    out[at(2 * o + 1, 2 * i + 1)] = z.re;
                }
            }
        }
        let config = ConvConfig {
            in_channels: 2 * c.in_channels,
            out_channels: 2 * c.out_channels,
            ..c.clone()
        };
        let weight = Param::new(
            init.next_id(),
            "conv.weight",
            Tensor::real(vec![2 * c.out_channels, 2 * cin_g, c.kernel], out)?,
        );
        let bias = match &self.bias {
            Some(b) => Some(Param::new(
                init.next_id(),
                "conv.bias",
                interleave_complex(&b.value, 0)?,
            )),
            None => None,
        };
        Ok(Conv1d {
            domain: Domain::Real,
            config,
            weight,
            bias,
        })
    }
}

impl Module for Conv1d {
    fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

/// Fully connected layer over inputs shaped `[batch, features]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub domain: Domain,
    pub in_features: usize,
    pub out_features: usize,
    /// `[out, in]`.
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Linear {
    pub fn new(init: &mut Init, domain: Domain, in_features: usize, out_features: usize, bias: bool) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(Error::invalid("linear layer extents must be positive"));
        }
        let weight = init.uniform("linear.weight", domain, vec![out_features, in_features], in_features);
        let bias = bias.then(|| init.uniform("linear.bias", domain, vec![out_features], in_features));
        Ok(Linear {
            domain,
            in_features,
            out_features,
            weight,
            bias,
        })
    }

    pub fn forward<'t>(&self, s: &Session<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.in_features {
            return Err(Error::shape(format!(
                "linear expects [batch, {}], got {shape:?}",
                self.in_features
            )));
        }
        if x.dtype() != self.domain.dtype() {
            return Err(Error::dtype(format!(
                "{:?} linear layer received {} input",
                self.domain,
                x.dtype()
            )));
        }
        let y = x.matmul(s.param(&self.weight).transpose()?)?;
        match &self.bias {
            Some(b) => y.add(s.param(b)),
            None => Ok(y),
        }
    }

    /// Weight matrix `[out, in + 1]` with the bias in column 0.
    pub fn weight_map(&self) -> Result<Vec<Vec<f64>>> {
        let w = self.weight.value.real_data()?;
        let b = match &self.bias {
            Some(b) => b.value.real_data()?.to_vec(),
            None => vec![0.0; self.out_features],
        };
        Ok((0..self.out_features)
            .map(|o| {
                std::iter::once(b[o])
                    .chain(w[o * self.in_features..(o + 1) * self.in_features].iter().copied())
                    .collect()
            })
            .collect())
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

impl Module for () {
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

impl<M: Module> Module for [M] {
    fn params(&self) -> Vec<&Param> {
        self.iter().flat_map(|m| m.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.iter_mut().flat_map(|m| m.params_mut()).collect()
    }
}

impl<M: Module> Module for Vec<M> {
    fn params(&self) -> Vec<&Param> {
        self.as_slice().params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.as_mut_slice().params_mut()
    }
}

/// Inverted dropout. Complex elements are kept or dropped as a whole.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout rate {p} outside [0, 1)")));
        }
        Ok(Dropout { p })
    }

    pub fn forward<'t>(&self, s: &Session<'t>, x: Var<'t>) -> Result<Var<'t>> {
        if !s.training() || self.p == 0.0 {
            return Ok(x);
        }
        let shape = x.shape();
        let n: usize = shape.iter().product();
        let keep = 1.0 / (1.0 - self.p);
        let mask: Vec<f64> = s.with_rng(|rng| {
            (0..n)
                .map(|_| if rng.random::<f64>() < self.p { 0.0 } else { keep })
                .collect()
        });
        let mask = Tensor::real(shape, mask)?;
        let mask = if x.is_complex() { mask.to_complex() } else { mask };
        x.mul(s.constant(mask))
    }
}

/// Average pooling over the last axis with a non-overlapping window.
pub fn avg_pool<'t>(x: Var<'t>, kernel: usize) -> Result<Var<'t>> {
    x.avg_pool(kernel)
}

/// Per-channel magnitude normalisation: divides by the mean magnitude over
/// batch and length, preserving every element's phase.
#[derive(Debug, Serialize, Deserialize)]
pub struct Bamn {
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    running_mean: Mutex<Vec<f64>>,
}

impl Clone for Bamn {
    fn clone(&self) -> Self {
        Bamn {
            channels: self.channels,
            eps: self.eps,
            momentum: self.momentum,
            running_mean: Mutex::new(self.running_mean()),
        }
    }
}

impl PartialEq for Bamn {
    fn eq(&self, other: &Self) -> bool {
        self.channels == other.channels
            && self.eps == other.eps
            && self.momentum == other.momentum
            && self.running_mean() == other.running_mean()
    }
}

impl Bamn {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Self {
        Bamn {
            channels,
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
            running_mean: Mutex::new(vec![1.0; channels]),
        }
    }

    pub fn running_mean(&self) -> Vec<f64> {
        self.running_mean.lock().expect("running mean lock").clone()
    }

    pub fn forward<'t>(&self, s: &Session<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != self.channels {
            return Err(Error::shape(format!(
                "normalisation expects [batch, {}, length], got {shape:?}",
                self.channels
            )));
        }
        if shape[0] == 0 || shape[2] == 0 {
            return Err(Error::invalid("normalisation of an empty batch"));
        }
        let denom = if s.training() {
            let m = x.abs()?.mean_axes(&[0, 2])?;
            let batch = m.value().into_real()?;
            let mut running = self.running_mean.lock().expect("running mean lock");
            for (r, b) in running.iter_mut().zip(&batch) {
                *r = (1.0 - self.momentum) * *r + self.momentum * b;
            }
            m.add_scalar(self.eps)?
        } else {
            let r: Vec<f64> = self.running_mean().iter().map(|r| r + self.eps).collect();
            s.constant(Tensor::real(vec![1, self.channels, 1], r)?)
        };
        let denom = if x.is_complex() { denom.to_complex()? } else { denom };
        x.div(denom)
    }
}

/// `[.., c, ..]` complex → `[.., 2c, ..]` real with `(re, im)` pairs along `axis`.
pub fn interleave_complex(t: &Tensor, axis: usize) -> Result<Tensor> {
    let z = t.complex_data()?;
    let shape = t.shape();
    if axis >= shape.len() {
        return Err(Error::shape(format!("axis {axis} out of range for {shape:?}")));
    }
    let outer: usize = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; 2 * z.len()];
    for o in 0..outer {
        for c in 0..mid {
            for i in 0..inner {
                let v = z[(o * mid + c) * inner + i];
                out[(o * 2 * mid + 2 * c) * inner + i] = v.re;
                out[(o * 2 * mid + 2 * c + 1) * inner + i] = v.im;
            }
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape[axis] *= 2;
    Tensor::real(new_shape, out)
}

/// Inverse of [`interleave_complex`].
pub fn deinterleave_complex(t: &Tensor, axis: usize) -> Result<Tensor> {
    let x = t.real_data()?;
    let shape = t.shape();
    if axis >= shape.len() || !shape[axis].is_multiple_of(2) {
        return Err(Error::shape(format!(
            "axis {axis} of {shape:?} must exist and have even extent"
        )));
    }
    let outer: usize = shape[..axis].iter().product();
    let mid = shape[axis] / 2;
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![C64::new(0.0, 0.0); x.len() / 2];
    for o in 0..outer {
        for c in 0..mid {
            for i in 0..inner {
                out[(o * mid + c) * inner + i] = C64::new(
                    x[(o * 2 * mid + 2 * c) * inner + i],
                    x[(o * 2 * mid + 2 * c + 1) * inner + i],
                );
            }
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape[axis] = mid;
    Tensor::complex(new_shape, out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn build(self, lr: f64) -> Box<dyn Optimizer> {
        match self {
            OptimizerKind::Sgd => Box::new(Sgd::new(lr, 0.9)),
            OptimizerKind::Adam => Box::new(Adam::new(lr)),
        }
    }
}

/// Split-real optimizers: complex parameters update exactly as two real ones.
pub trait Optimizer: Send {
    fn step(&mut self, params: Vec<&mut Param>, grads: &Gradients) -> Result<()>;
    fn learning_rate(&self) -> f64;
}

fn checked_grad<'g>(p: &Param, grads: &'g Gradients) -> Result<Option<&'g Tensor>> {
    let Some(g) = grads.get(p.id) else {
        return Ok(None);
    };
    if g.shape() != p.value.shape() || g.dtype() != p.value.dtype() {
        return Err(Error::shape(format!(
            "gradient for `{}` is {} {:?}, parameter is {} {:?}",
            p.name,
            g.dtype(),
            g.shape(),
            p.value.dtype(),
            p.value.shape()
        )));
    }
    if !g.all_finite() {
        return Err(Error::NonFinite(format!("gradient for `{}`", p.name)));
    }
    Ok(Some(g))
}

/// Views a real or complex buffer as a flat slice of reals.
fn components(t: &Tensor) -> Vec<f64> {
    match t.storage() {
        Storage::Real(v) => v.clone(),
        Storage::Complex(v) => v.iter().flat_map(|z| [z.re, z.im]).collect(),
    }
}

fn apply(p: &mut Param, f: impl Fn(usize, f64) -> f64) -> Result<()> {
    match p.value.dtype() {
        DType::Real64 => {
            for (i, w) in p.value.real_data_mut()?.iter_mut().enumerate() {
                *w = f(i, *w);
            }
        }
        DType::Complex128 => {
            for (i, w) in p.value.complex_data_mut()?.iter_mut().enumerate() {
                w.re = f(2 * i, w.re);
                w.im = f(2 * i + 1, w.im);
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: HashMap<ParamId, Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: HashMap::new(),
        }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: Vec<&mut Param>, grads: &Gradients) -> Result<()> {
        for p in params {
            let Some(g) = checked_grad(p, grads)? else {
                continue;
            };
            let g = components(g);
            let v = self
                .velocity
                .entry(p.id)
                .or_insert_with(|| vec![0.0; g.len()]);
            for (vi, gi) in v.iter_mut().zip(&g) {
                *vi = self.momentum * *vi + gi;
            }
            let lr = self.lr;
            apply(p, |i, w| w - lr * v[i])?;
        }
        Ok(())
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    moments: HashMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: HashMap::new(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: Vec<&mut Param>, grads: &Gradients) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for p in params {
            let Some(g) = checked_grad(p, grads)? else {
                continue;
            };
            let g = components(g);
            let (m, v) = self
                .moments
                .entry(p.id)
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
            }
            let (lr, eps) = (self.lr, self.eps);
            apply(p, |i, w| w - lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps))?;
        }
        Ok(())
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }
}
