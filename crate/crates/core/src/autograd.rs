//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Operations are recorded on a [`Tape`] as they execute; [`Tape::backward`]
//! replays them in reverse.
//!
//! Gradient convention: for a real scalar loss `L` and a node `w`, the stored
//! gradient is `∂L/∂Re(w) + i·∂L/∂Im(w)` (which equals `2·∂L/∂conj(w)`).
//! A complex parameter therefore behaves exactly like two real parameters and
//! an optimizer step is simply `w -= lr * grad`. Real nodes carry real
//! gradients.
//!
//! Backward rules in this convention, for an output `o = f(z)` with incoming
//! gradient `g`:
//! * holomorphic `f`: `g · conj(f'(z))`
//! * general `f`: `conj(g)·∂o/∂conj(z) + g·conj(∂o/∂z)`
//! * real-valued `f`: `g · (∂f/∂x + i ∂f/∂y)`

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{DType, Storage, Tensor, C64};

/// Stable identifier of a trainable tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// A trainable tensor together with its identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub id: ParamId,
    pub name: String,
    pub value: Tensor,
}

impl Param {
    pub fn new(id: ParamId, name: impl Into<String>, value: Tensor) -> Self {
        Param {
            id,
            name: name.into(),
            value,
        }
    }

    /// Parameter count under the two-per-complex-element rule.
    pub fn count(&self) -> usize {
        match self.value.dtype() {
            DType::Real64 => self.value.len(),
            DType::Complex128 => 2 * self.value.len(),
        }
    }
}

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Conj,
    Abs,
    Arg,
    Exp,
    Sqrt,
    Real,
    Imag,
    Max,
    Sign,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Max(NodeId, NodeId),
    Neg(NodeId),
    Conj(NodeId),
    Abs(NodeId),
    Arg(NodeId),
    Exp(NodeId),
    Sqrt(NodeId),
    Re(NodeId),
    Im(NodeId),
    Sign(NodeId),
    ToComplex(NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Softplus(NodeId),
    Elu(NodeId),
    Relu(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    Sum(NodeId),
    MeanAxes { input: NodeId, axes: Vec<usize> },
    Narrow { input: NodeId, axis: usize, start: usize },
    Concat { inputs: Vec<NodeId>, axis: usize },
    Conv1d { input: NodeId, weight: NodeId, stride: usize, pad_left: usize, groups: usize },
    AvgPool { input: NodeId, kernel: usize },
    CrossEntropy { logits: NodeId, labels: Vec<usize> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Records operations for one forward/backward pass. Confined to a single thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Per-parameter gradients produced by [`Tape::backward`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Tensor)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Untracked input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Tracked leaf that is not a named parameter.
    pub fn variable(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Tracked leaf for a parameter; its gradient is reported by `backward`.
    pub fn param(&self, param: &Param) -> Var<'_> {
        let var = self.push(param.value.clone(), Op::Leaf, true);
        self.nodes.borrow_mut()[var.id].param = Some(param.id);
        var
    }

    pub fn scalar(&self, x: f64) -> Var<'_> {
        self.constant(Tensor::scalar(x))
    }

    pub fn scalar_complex(&self, z: C64) -> Var<'_> {
        self.constant(Tensor::scalar_complex(z))
    }

    fn requires(&self, ids: &[NodeId]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn unary(
        &self,
        a: NodeId,
        op: Op,
        f: impl FnOnce(&Tensor) -> Result<Tensor>,
    ) -> Result<Var<'_>> {
        let value = f(&self.nodes.borrow()[a].value)?;
        let rg = self.requires(&[a]);
        Ok(self.push(value, op, rg))
    }

    fn binary(
        &self,
        a: NodeId,
        b: NodeId,
        op: Op,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var<'_>> {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a].value, &nodes[b].value)?
        };
        let rg = self.requires(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    /// Dispatches one of the named elementwise operations.
    pub fn elementwise<'t>(
        &'t self,
        kind: ElementwiseOp,
        a: Var<'t>,
        b: Option<Var<'t>>,
    ) -> Result<Var<'t>> {
        let rhs = || b.ok_or_else(|| Error::invalid(format!("{kind:?} needs two operands")));
        match kind {
            ElementwiseOp::Add => a.add(rhs()?),
            ElementwiseOp::Sub => a.sub(rhs()?),
            ElementwiseOp::Mul => a.mul(rhs()?),
            ElementwiseOp::Div => a.div(rhs()?),
            ElementwiseOp::Max => a.max(rhs()?),
            ElementwiseOp::Neg => a.neg(),
            ElementwiseOp::Conj => a.conj(),
            ElementwiseOp::Abs => a.abs(),
            ElementwiseOp::Arg => a.arg(),
            ElementwiseOp::Exp => a.exp(),
            ElementwiseOp::Sqrt => a.sqrt(),
            ElementwiseOp::Real => a.re(),
            ElementwiseOp::Imag => a.im(),
            ElementwiseOp::Sign => a.sign(),
        }
    }

    /// Gradients of a real scalar `loss` with respect to every parameter leaf on
    /// this tape. Parameters the loss does not depend on get zero gradients.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::NotScalar(root.value.shape().to_vec()));
        }
        if root.value.is_complex() {
            return Err(Error::NotReal);
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::real(root.value.shape().to_vec(), vec![1.0])?);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            for (input, contribution) in node_backward(&nodes, node, &g)? {
                if !nodes[input].requires_grad {
                    continue;
                }
                let target = &nodes[input].value;
                let contribution = kernels::fit_gradient(contribution, target)?;
                grads[input] = Some(match grads[input].take() {
                    None => contribution,
                    Some(acc) => kernels::add(&acc, &contribution)?,
                });
            }
        }

        let mut out = Gradients::default();
        for (id, node) in nodes.iter().enumerate() {
            if let Some(pid) = node.param {
                let g = grads
                    .get_mut(id)
                    .and_then(Option::take)
                    .unwrap_or_else(|| node.value.zeros_like());
                match out.grads.get_mut(&pid) {
                    Some(acc) => *acc = kernels::add(acc, &g)?,
                    None => {
                        out.grads.insert(pid, g);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn node_backward(nodes: &[Node], node: &Node, g: &Tensor) -> Result<Vec<(NodeId, Tensor)>> {
    use kernels as k;
    let val = |i: NodeId| &nodes[i].value;
    let out = &node.value;
    Ok(match &node.op {
        Op::Leaf => Vec::new(),
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, k::neg(g))],
        Op::Mul(a, b) => vec![
            (*a, k::mul_conj(g, val(*b))?),
            (*b, k::mul_conj(g, val(*a))?),
        ],
        Op::Div(a, b) => {
            // d(a/b)/da = 1/b, d(a/b)/db = -out/b
            let inv_b = k::div(&k::ones_like(val(*b)), val(*b))?;
            let ga = k::mul_conj(g, &inv_b)?;
            let gb = k::neg(&k::mul_conj(g, &k::mul(out, &inv_b)?)?);
            vec![(*a, ga), (*b, gb)]
        }
        Op::Max(a, b) => {
            let (ga, gb) = k::max_backward(g, val(*a), val(*b))?;
            vec![(*a, ga), (*b, gb)]
        }
        Op::Neg(a) => vec![(*a, k::neg(g))],
        Op::Conj(a) => vec![(*a, k::conj(g))],
        Op::Abs(a) => vec![(*a, k::abs_backward(g, val(*a))?)],
        Op::Arg(a) => vec![(*a, k::arg_backward(g, val(*a))?)],
        Op::Exp(a) => vec![(*a, k::mul_conj(g, out)?)],
        Op::Sqrt(a) => vec![(*a, k::sqrt_backward(g, out)?)],
        Op::Re(a) => vec![(*a, g.clone())],
        Op::Im(a) => vec![(*a, k::times_i(g)?)],
        Op::Sign(a) => vec![(*a, val(*a).zeros_like())],
        Op::ToComplex(a) => vec![(*a, g.re())],
        Op::Scale(a, s) => vec![(*a, k::scale(g, *s))],
        Op::Tanh(a) => vec![(*a, k::real_unary_backward(g, val(*a), out, |_, y| 1.0 - y * y)?)],
        Op::Softplus(a) => vec![(
            *a,
            k::real_unary_backward(g, val(*a), out, |x, _| 1.0 / (1.0 + (-x).exp()))?,
        )],
        Op::Elu(a) => vec![(
            *a,
            k::real_unary_backward(g, val(*a), out, |x, y| if x > 0.0 { 1.0 } else { y + 1.0 })?,
        )],
        Op::Relu(a) => vec![(
            *a,
            k::real_unary_backward(g, val(*a), out, |x, _| if x > 0.0 { 1.0 } else { 0.0 })?,
        )],
        Op::MatMul(a, b) => {
            // out = A B  =>  gA = g B^H, gB = A^H g
            let bh = k::conj(&k::transpose(val(*b))?);
            let ah = k::conj(&k::transpose(val(*a))?);
            vec![(*a, k::matmul(g, &bh)?), (*b, k::matmul(&ah, g)?)]
        }
        Op::Transpose(a) => vec![(*a, k::transpose(g)?)],
        Op::Reshape(a) => vec![(*a, g.reshape(val(*a).shape().to_vec())?)],
        Op::Sum(a) => vec![(*a, k::broadcast_to(g, val(*a).shape())?)],
        Op::MeanAxes { input, axes } => {
            let shape = val(*input).shape();
            let count: usize = axes.iter().map(|&ax| shape[ax]).product();
            let expanded = k::broadcast_to(g, shape)?;
            vec![(*input, k::scale(&expanded, 1.0 / count as f64))]
        }
        Op::Narrow { input, axis, start } => {
            vec![(*input, k::pad_narrow(g, val(*input).shape(), *axis, *start)?)]
        }
        Op::Concat { inputs, axis } => {
            let mut start = 0;
            let mut out = Vec::with_capacity(inputs.len());
            for &i in inputs {
                let len = val(i).shape()[*axis];
                out.push((i, k::narrow(g, *axis, start, len)?));
                start += len;
            }
            out
        }
        Op::Conv1d {
            input,
            weight,
            stride,
            pad_left,
            groups,
        } => {
            let (gx, gw) =
                k::conv1d_backward(g, val(*input), val(*weight), *stride, *pad_left, *groups)?;
            vec![(*input, gx), (*weight, gw)]
        }
        Op::AvgPool { input, kernel } => {
            vec![(*input, k::avg_pool_backward(g, val(*input).shape(), *kernel)?)]
        }
        Op::CrossEntropy { logits, labels } => {
            vec![(*logits, k::cross_entropy_backward(g, val(*logits), labels)?)]
        }
    })
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Copy of the current value.
    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|t| t.shape().to_vec())
    }

    pub fn dtype(&self) -> DType {
        self.with_value(|t| t.dtype())
    }

    pub fn is_complex(&self) -> bool {
        self.dtype() == DType::Complex128
    }

    pub fn item(&self) -> Result<f64> {
        self.with_value(|t| t.item())
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape
            .binary(self.id, rhs.id, Op::Add(self.id, rhs.id), kernels::add)
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape
            .binary(self.id, rhs.id, Op::Sub(self.id, rhs.id), kernels::sub)
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape
            .binary(self.id, rhs.id, Op::Mul(self.id, rhs.id), kernels::mul)
    }

    /// Elementwise division. Any exactly-zero denominator is an error.
    pub fn div(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(self.id, rhs.id, Op::Div(self.id, rhs.id), |a, b| {
            kernels::check_nonzero(b)?;
            kernels::div(a, b)
        })
    }

    /// Real elementwise maximum; ties route the gradient to `self`.
    pub fn max(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape
            .binary(self.id, rhs.id, Op::Max(self.id, rhs.id), kernels::max)
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.tape.unary(self.id, Op::Neg(self.id), |a| Ok(kernels::neg(a)))
    }

    pub fn conj(self) -> Result<Var<'t>> {
        self.tape.unary(self.id, Op::Conj(self.id), |a| Ok(kernels::conj(a)))
    }

    /// Magnitude; always real. The gradient at zero is defined as zero.
    pub fn abs(self) -> Result<Var<'t>> {
        self.tape.unary(self.id, Op::Abs(self.id), |a| Ok(kernels::abs(a)))
    }

    /// Principal argument in (-π, π]; arg(0) = 0.
    pub fn arg(self) -> Result<Var<'t>> {
        self.tape.unary(self.id, Op::Arg(self.id), |a| Ok(kernels::arg(a)))
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.tape.unary(self.id, Op::Exp(self.id), |a| Ok(kernels::exp(a)))
    }

    /// Principal square root. Real inputs must be nonnegative.
    pub fn sqrt(self) -> Result<Var<'t>> {
        self.tape.unary(self.id, Op::Sqrt(self.id), kernels::sqrt)
    }

    pub fn re(self) -> Result<Var<'t>> {
        self.tape.unary(self.id, Op::Re(self.id), |a| Ok(a.re()))
    }

    pub fn im(self) -> Result<Var<'t>> {
        self.tape.unary(self.id, Op::Im(self.id), |a| Ok(a.im()))
    }

    /// Real sign with sign(0) = 0.
    pub fn sign(self) -> Result<Var<'t>> {
        self.tape.unary(self.id, Op::Sign(self.id), kernels::sign)
    }

    /// Real → complex promotion; identity on complex input.
    pub fn to_complex(self) -> Result<Var<'t>> {
        if self.is_complex() {
            return Ok(self);
        }
        self.tape
            .unary(self.id, Op::ToComplex(self.id), |a| Ok(a.to_complex()))
    }

    pub fn scale(self, s: f64) -> Result<Var<'t>> {
        self.tape
            .unary(self.id, Op::Scale(self.id, s), |a| Ok(kernels::scale(a, s)))
    }

    /// Adds a real constant (promoted when `self` is complex).
    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        let k = if self.is_complex() {
            self.tape.scalar_complex(C64::new(c, 0.0))
        } else {
            self.tape.scalar(c)
        };
        self.add(k)
    }

    /// Multiplies by a complex constant; `self` is promoted if real.
    pub fn mul_complex(self, c: C64) -> Result<Var<'t>> {
        let z = self.to_complex()?;
        z.mul(self.tape.scalar_complex(c))
    }

    /// `self^n` by repeated multiplication (n ≥ 1).
    pub fn powi(self, n: u32) -> Result<Var<'t>> {
        if n == 0 {
            return Err(Error::invalid("powi exponent must be at least 1"));
        }
        let mut acc = self;
        for _ in 1..n {
            acc = acc.mul(self)?;
        }
        Ok(acc)
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.tape.unary(self.id, Op::Tanh(self.id), |a| {
            kernels::real_map(a, f64::tanh)
        })
    }

    pub fn softplus(self) -> Result<Var<'t>> {
        self.tape.unary(self.id, Op::Softplus(self.id), |a| {
            kernels::real_map(a, |x| x.max(0.0) + (-x.abs()).exp().ln_1p())
        })
    }

    pub fn elu(self) -> Result<Var<'t>> {
        self.tape.unary(self.id, Op::Elu(self.id), |a| {
            kernels::real_map(a, |x| if x > 0.0 { x } else { x.exp_m1() })
        })
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.tape.unary(self.id, Op::Relu(self.id), |a| {
            kernels::real_map(a, |x| x.max(0.0))
        })
    }

    /// 2-D matrix product.
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape
            .binary(self.id, rhs.id, Op::MatMul(self.id, rhs.id), kernels::matmul)
    }

    /// 2-D transpose (no conjugation).
    pub fn transpose(self) -> Result<Var<'t>> {
        self.tape
            .unary(self.id, Op::Transpose(self.id), kernels::transpose)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        self.tape
            .unary(self.id, Op::Reshape(self.id), |a| a.reshape(shape.to_vec()))
    }

    /// Sum of all elements as a 0-d tensor.
    pub fn sum(self) -> Result<Var<'t>> {
        self.tape.unary(self.id, Op::Sum(self.id), |a| Ok(kernels::sum_all(a)))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let n = self.with_value(|t| t.len());
        if n == 0 {
            return Err(Error::invalid("mean of an empty tensor"));
        }
        self.sum()?.scale(1.0 / n as f64)
    }

    /// Mean over `axes`, keeping them as extent-1 dimensions.
    pub fn mean_axes(self, axes: &[usize]) -> Result<Var<'t>> {
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        let shape = self.shape();
        if axes.iter().any(|&a| a >= shape.len()) {
            return Err(Error::shape(format!("axes {axes:?} out of range for {shape:?}")));
        }
        if axes.iter().any(|&a| shape[a] == 0) {
            return Err(Error::invalid("mean over an empty axis"));
        }
        let op = Op::MeanAxes {
            input: self.id,
            axes: axes.clone(),
        };
        self.tape
            .unary(self.id, op, |a| kernels::mean_axes(a, &axes))
    }

    /// Slice `len` entries of `axis` starting at `start`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let op = Op::Narrow {
            input: self.id,
            axis,
            start,
        };
        self.tape
            .unary(self.id, op, |a| kernels::narrow(a, axis, start, len))
    }

    /// Picks one index of `axis`, removing that axis.
    pub fn select(self, axis: usize, index: usize) -> Result<Var<'t>> {
        let mut shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::shape(format!("axis {axis} out of range for {shape:?}")));
        }
        let sliced = self.narrow(axis, index, 1)?;
        shape.remove(axis);
        sliced.reshape(&shape)
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        if parts.len() == 1 {
            return Ok(*first);
        }
        let tape = first.tape;
        let ids: Vec<NodeId> = parts.iter().map(|v| v.id).collect();
        let value = {
            let nodes = tape.nodes.borrow();
            let values: Vec<&Tensor> = ids.iter().map(|&i| &nodes[i].value).collect();
            kernels::concat(&values, axis)?
        };
        let rg = tape.requires(&ids);
        Ok(tape.push(value, Op::Concat { inputs: ids, axis }, rg))
    }

    /// Stacks equally-shaped tensors along a new axis.
    pub fn stack(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let mut expanded = Vec::with_capacity(parts.len());
        for p in parts {
            let mut shape = p.shape();
            if axis > shape.len() {
                return Err(Error::shape(format!("axis {axis} out of range for {shape:?}")));
            }
            shape.insert(axis, 1);
            expanded.push(p.reshape(&shape)?);
        }
        Var::concat(&expanded, axis)
    }

    /// 1-D convolution of `self` [batch, in, length] with `weight`
    /// [out, in/groups, kernel], zero padding `pad_left` before the signal and
    /// whatever is needed after it to produce `out_len` outputs.
    pub fn conv1d(
        self,
        weight: Var<'t>,
        stride: usize,
        pad_left: usize,
        groups: usize,
        out_len: usize,
    ) -> Result<Var<'t>> {
        let op = Op::Conv1d {
            input: self.id,
            weight: weight.id,
            stride,
            pad_left,
            groups,
        };
        self.tape.binary(self.id, weight.id, op, |x, w| {
            kernels::conv1d(x, w, stride, pad_left, groups, out_len)
        })
    }

    /// Non-overlapping average pooling over the last axis.
    pub fn avg_pool(self, kernel: usize) -> Result<Var<'t>> {
        let op = Op::AvgPool {
            input: self.id,
            kernel,
        };
        self.tape
            .unary(self.id, op, |a| kernels::avg_pool(a, kernel))
    }

    /// Mean softmax cross-entropy of real logits [batch, classes].
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'t>> {
        let op = Op::CrossEntropy {
            logits: self.id,
            labels: labels.to_vec(),
        };
        self.tape
            .unary(self.id, op, |a| kernels::cross_entropy(a, labels))
    }
}

/// Forward-pass context: a tape, a train/eval flag, and a seeded random
/// stream for stochastic layers.
pub struct Session<'t> {
    tape: &'t Tape,
    training: bool,
    params: RefCell<HashMap<ParamId, NodeId>>,
    rng: RefCell<ChaCha8Rng>,
}

impl<'t> Session<'t> {
    pub fn new(tape: &'t Tape, training: bool, seed: u64) -> Self {
        Session {
            tape,
            training,
            params: RefCell::new(HashMap::new()),
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn eval(tape: &'t Tape) -> Self {
        Session::new(tape, false, 0)
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn training(&self) -> bool {
        self.training
    }

    /// Leaf for `param`, created once per session.
    pub fn param(&self, param: &Param) -> Var<'t> {
        if let Some(&id) = self.params.borrow().get(&param.id) {
            return Var {
                tape: self.tape,
                id,
            };
        }
        let var = self.tape.param(param);
        self.params.borrow_mut().insert(param.id, var.id);
        var
    }

    pub fn constant(&self, t: Tensor) -> Var<'t> {
        self.tape.constant(t)
    }

    pub fn with_rng<R>(&self, f: impl FnOnce(&mut ChaCha8Rng) -> R) -> R {
        f(&mut self.rng.borrow_mut())
    }
}

/// Central-difference gradients of `f` with respect to every real and
/// imaginary component of `params`, packed in the same convention as
/// [`Tape::backward`].
pub fn finite_difference_gradient(
    f: impl Fn(&[Tensor]) -> Result<f64>,
    params: &[Tensor],
    step: f64,
) -> Result<Vec<Tensor>> {
    if !(step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let eval = |work: &[Tensor]| -> Result<f64> {
        let v = f(work)?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("objective evaluated to {v}")));
        }
        Ok(v)
    };
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let n = params[p].len();
        match params[p].storage() {
            Storage::Real(orig) => {
                let orig = orig.clone();
                let mut g = vec![0.0; n];
                for i in 0..n {
                    work[p].real_data_mut()?[i] = orig[i] + step;
                    let plus = eval(&work)?;
                    work[p].real_data_mut()?[i] = orig[i] - step;
                    let minus = eval(&work)?;
                    work[p].real_data_mut()?[i] = orig[i];
                    g[i] = (plus - minus) / (2.0 * step);
                }
                out.push(Tensor::real(params[p].shape().to_vec(), g)?);
            }
            Storage::Complex(orig) => {
                let orig = orig.clone();
                let mut g = vec![C64::new(0.0, 0.0); n];
                for i in 0..n {
                    for (dir, slot) in [(C64::new(step, 0.0), 0), (C64::new(0.0, step), 1)] {
                        work[p].complex_data_mut()?[i] = orig[i] + dir;
                        let plus = eval(&work)?;
                        work[p].complex_data_mut()?[i] = orig[i] - dir;
                        let minus = eval(&work)?;
                        let d = (plus - minus) / (2.0 * step);
                        if slot == 0 {
                            g[i].re = d;
                        } else {
                            g[i].im = d;
                        }
                    }
                    work[p].complex_data_mut()?[i] = orig[i];
                }
                out.push(Tensor::complex(params[p].shape().to_vec(), g)?);
            }
        }
    }
    Ok(out)
}

/// Runs `f` on a fresh tape with `inputs` as tracked leaves and returns the
/// value and the gradient for each input.
pub fn value_and_grad<F>(f: F, inputs: &[Tensor]) -> Result<(f64, Vec<Tensor>)>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let params: Vec<Param> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| Param::new(ParamId(i), format!("x{i}"), t.clone()))
        .collect();
    let vars: Vec<Var<'_>> = params.iter().map(|p| tape.param(p)).collect();
    let loss = f(&tape, &vars)?;
    let value = loss.item()?;
    let grads = tape.backward(loss)?;
    let out = params
        .iter()
        .map(|p| grads.get(p.id).cloned().unwrap_or_else(|| p.value.zeros_like()))
        .collect();
    Ok((value, out))
}

/// Normwise relative error ‖a − b‖ / max(‖b‖, floor) across a list of tensors.
pub fn relative_error(a: &[Tensor], b: &[Tensor], floor: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("gradient lists differ in length"));
    }
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (x, y) in a.iter().zip(b) {
        if x.shape() != y.shape() {
            return Err(Error::shape(format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        for i in 0..x.len() {
            diff += (x.get_complex(i) - y.get_complex(i)).norm_sqr();
            norm += y.get_complex(i).norm_sqr();
        }
    }
    Ok(diff.sqrt() / norm.sqrt().max(floor))
}

/// Output length of a convolution with "same" padding semantics.
pub fn same_padding(length: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out_len = length.div_ceil(stride);
    let needed = ((out_len.saturating_sub(1)) * stride + kernel).saturating_sub(length);
    (needed / 2, out_len)
}
