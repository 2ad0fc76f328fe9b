//! Untracked tensor kernels shared by the forward and backward passes.

use crate::error::{Error, Result};
use crate::tensor::{
    broadcast_shapes, for_each_broadcast, numel, reduce_to_shape, Element, Storage, Tensor, C64,
};

macro_rules! dispatch {
    ($t:expr, $v:ident => $body:expr) => {
        match $t.storage() {
            Storage::Real($v) => $body,
            Storage::Complex($v) => $body,
        }
    };
}

fn zip_typed<T: Element>(
    a: &[T],
    ashape: &[usize],
    b: &[T],
    bshape: &[usize],
    f: impl Fn(T, T) -> T,
) -> Result<Tensor> {
    let out_shape = broadcast_shapes(ashape, bshape)?;
    let mut out = Vec::with_capacity(numel(&out_shape));
    for_each_broadcast(ashape, bshape, &out_shape, |i, j| out.push(f(a[i], b[j])));
    Ok(Tensor::from_vec(out_shape, out))
}

/// Same-dtype broadcasting zip; mixed dtypes are an error.
fn zip(
    a: &Tensor,
    b: &Tensor,
    fr: impl Fn(f64, f64) -> f64,
    fc: impl Fn(C64, C64) -> C64,
) -> Result<Tensor> {
    match (a.storage(), b.storage()) {
        (Storage::Real(x), Storage::Real(y)) => zip_typed(x, a.shape(), y, b.shape(), fr),
        (Storage::Complex(x), Storage::Complex(y)) => zip_typed(x, a.shape(), y, b.shape(), fc),
        _ => Err(Error::dtype(format!(
            "operands are {} and {}; promote explicitly",
            a.dtype(),
            b.dtype()
        ))),
    }
}

/// Broadcasting zip that promotes a real operand when the other is complex.
fn zip_promote(
    a: &Tensor,
    b: &Tensor,
    fr: impl Fn(f64, f64) -> f64,
    fc: impl Fn(C64, C64) -> C64,
) -> Result<Tensor> {
    if a.dtype() == b.dtype() {
        zip(a, b, fr, fc)
    } else {
        zip(&a.to_complex(), &b.to_complex(), fr, fc)
    }
}

fn map(a: &Tensor, fr: impl Fn(f64) -> f64, fc: impl Fn(C64) -> C64) -> Tensor {
    match a.storage() {
        Storage::Real(v) => Tensor::from_vec(a.shape().to_vec(), v.iter().map(|&x| fr(x)).collect()),
        Storage::Complex(v) => {
            Tensor::from_vec(a.shape().to_vec(), v.iter().map(|&z| fc(z)).collect())
        }
    }
}

fn map_to_real(a: &Tensor, fr: impl Fn(f64) -> f64, fc: impl Fn(C64) -> f64) -> Tensor {
    let data: Vec<f64> = match a.storage() {
        Storage::Real(v) => v.iter().map(|&x| fr(x)).collect(),
        Storage::Complex(v) => v.iter().map(|&z| fc(z)).collect(),
    };
    Tensor::from_vec(a.shape().to_vec(), data)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip(a, b, |x, y| x + y, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip(a, b, |x, y| x - y, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip(a, b, |x, y| x * y, |x, y| x * y)
}

pub fn div(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip(a, b, |x, y| x / y, |x, y| x / y)
}

pub fn max(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.is_complex() || b.is_complex() {
        return Err(Error::dtype("max is defined for real tensors only"));
    }
    zip(a, b, f64::max, |x, _| x)
}

/// `g · conj(x)` with promotion, in the broadcast shape.
pub fn mul_conj(g: &Tensor, x: &Tensor) -> Result<Tensor> {
    zip_promote(g, x, |a, b| a * b, |a, b| a * b.conj())
}

pub fn check_nonzero(t: &Tensor) -> Result<()> {
    let any_zero = match t.storage() {
        Storage::Real(v) => v.contains(&0.0),
        Storage::Complex(v) => v.iter().any(|z| z.re == 0.0 && z.im == 0.0),
    };
    if any_zero {
        Err(Error::DivisionByZero)
    } else {
        Ok(())
    }
}

pub fn ones_like(t: &Tensor) -> Tensor {
    map(t, |_| 1.0, |_| C64::new(1.0, 0.0))
}

pub fn neg(a: &Tensor) -> Tensor {
    map(a, |x| -x, |z| -z)
}

pub fn conj(a: &Tensor) -> Tensor {
    map(a, |x| x, |z| z.conj())
}

pub fn scale(a: &Tensor, s: f64) -> Tensor {
    map(a, |x| x * s, |z| z * s)
}

pub fn abs(a: &Tensor) -> Tensor {
    map_to_real(a, f64::abs, |z| z.norm())
}

pub fn arg(a: &Tensor) -> Tensor {
    map_to_real(
        a,
        |x| if x < 0.0 { std::f64::consts::PI } else { 0.0 },
        |z| {
            if z.re == 0.0 && z.im == 0.0 {
                0.0
            } else {
                z.im.atan2(z.re)
            }
        },
    )
}

pub fn exp(a: &Tensor) -> Tensor {
    map(a, f64::exp, |z| z.exp())
}

/// Principal square root: `sqrt(x)` for x ≥ 0, `i·sqrt(|x|)` on the negative real axis.
pub fn principal_sqrt(z: C64) -> C64 {
    let r = z.norm();
    let re = ((r + z.re) * 0.5).max(0.0).sqrt();
    let im = ((r - z.re) * 0.5).max(0.0).sqrt();
    C64::new(re, if z.im < 0.0 { -im } else { im })
}

pub fn sqrt(a: &Tensor) -> Result<Tensor> {
    if let Storage::Real(v) = a.storage() {
        if v.iter().any(|&x| x < 0.0) {
            return Err(Error::invalid(
                "real sqrt of a negative value; promote to complex first",
            ));
        }
    }
    Ok(map(a, f64::sqrt, principal_sqrt))
}

pub fn sign(a: &Tensor) -> Result<Tensor> {
    match a.storage() {
        Storage::Real(v) => Ok(Tensor::from_vec(
            a.shape().to_vec(),
            v.iter()
                .map(|&x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
        )),
        Storage::Complex(_) => Err(Error::dtype("sign is defined for real tensors only")),
    }
}

pub fn real_map(a: &Tensor, f: impl Fn(f64) -> f64) -> Result<Tensor> {
    let v = a.real_data()?;
    Ok(Tensor::from_vec(a.shape().to_vec(), v.iter().map(|&x| f(x)).collect()))
}

/// `g · df(x, y)` for a real unary op with output `y`.
pub fn real_unary_backward(
    g: &Tensor,
    x: &Tensor,
    y: &Tensor,
    df: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let x_shape = x.shape().to_vec();
    let (g, x, y) = (g.real_data()?, x.real_data()?, y.real_data()?);
    let out = g
        .iter()
        .zip(x.iter().zip(y))
        .map(|(&g, (&x, &y))| g * df(x, y))
        .collect();
    Ok(Tensor::from_vec(x_shape, out))
}

pub fn abs_backward(g: &Tensor, x: &Tensor) -> Result<Tensor> {
    let g = g.real_data()?;
    Ok(match x.storage() {
        Storage::Real(v) => Tensor::from_vec(
            x.shape().to_vec(),
            g.iter()
                .zip(v)
                .map(|(&g, &x)| {
                    if x > 0.0 {
                        g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                })
                .collect(),
        ),
        Storage::Complex(v) => Tensor::from_vec(
            x.shape().to_vec(),
            g.iter()
                .zip(v)
                .map(|(&g, &z)| {
                    let r = z.norm();
                    if r == 0.0 {
                        C64::new(0.0, 0.0)
                    } else {
                        z * (g / r)
                    }
                })
                .collect(),
        ),
    })
}

pub fn arg_backward(g: &Tensor, x: &Tensor) -> Result<Tensor> {
    let g = g.real_data()?;
    Ok(match x.storage() {
        Storage::Real(_) => x.zeros_like(),
        Storage::Complex(v) => Tensor::from_vec(
            x.shape().to_vec(),
            g.iter()
                .zip(v)
                .map(|(&g, &z)| {
                    let r2 = z.norm_sqr();
                    if r2 == 0.0 {
                        C64::new(0.0, 0.0)
                    } else {
                        // ∂arg/∂x + i ∂arg/∂y = (−y + i x)/|z|² = i z/|z|²
                        C64::new(-z.im, z.re) * (g / r2)
                    }
                })
                .collect(),
        ),
    })
}

pub fn sqrt_backward(g: &Tensor, y: &Tensor) -> Result<Tensor> {
    let shape = y.shape().to_vec();
    match (g.storage(), y.storage()) {
        (Storage::Real(g), Storage::Real(y)) => Ok(Tensor::from_vec(
            shape,
            g.iter()
                .zip(y)
                .map(|(&g, &y)| if y == 0.0 { 0.0 } else { g / (2.0 * y) })
                .collect(),
        )),
        (Storage::Complex(g), Storage::Complex(y)) => Ok(Tensor::from_vec(
            shape,
            g.iter()
                .zip(y)
                .map(|(&g, &y)| {
                    if y.norm_sqr() == 0.0 {
                        C64::new(0.0, 0.0)
                    } else {
                        g * (C64::new(0.5, 0.0) / y).conj()
                    }
                })
                .collect(),
        )),
        _ => Err(Error::dtype("sqrt gradient dtype mismatch")),
    }
}

pub fn times_i(g: &Tensor) -> Result<Tensor> {
    Ok(match g.storage() {
        Storage::Real(v) => Tensor::from_vec(
            g.shape().to_vec(),
            v.iter().map(|&x| C64::new(0.0, x)).collect(),
        ),
        Storage::Complex(v) => Tensor::from_vec(
            g.shape().to_vec(),
            v.iter().map(|&z| C64::new(-z.im, z.re)).collect(),
        ),
    })
}

pub fn max_backward(g: &Tensor, a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
    let out_shape = broadcast_shapes(a.shape(), b.shape())?;
    let (av, bv, gv) = (a.real_data()?, b.real_data()?, g.real_data()?);
    let mut ga = vec![0.0; gv.len()];
    let mut gb = vec![0.0; gv.len()];
    let mut k = 0;
    for_each_broadcast(a.shape(), b.shape(), &out_shape, |i, j| {
        if av[i] >= bv[j] {
            ga[k] = gv[k];
        } else {
            gb[k] = gv[k];
        }
        k += 1;
    });
    Ok((
        Tensor::from_vec(out_shape.clone(), ga),
        Tensor::from_vec(out_shape, gb),
    ))
}

/// Reduces a gradient to the target's shape and dtype.
pub fn fit_gradient(g: Tensor, target: &Tensor) -> Result<Tensor> {
    let g = match (g.is_complex(), target.is_complex()) {
        (true, false) => g.re(),
        (false, true) => g.to_complex(),
        _ => g,
    };
    if g.shape() == target.shape() {
        return Ok(g);
    }
    if g.len() == target.len() {
        return g.reshape(target.shape().to_vec());
    }
    let reduced = dispatch!(g, v => Tensor::from_vec(
        target.shape().to_vec(),
        reduce_to_shape(v, g.shape(), target.shape())
    ));
    Ok(reduced)
}

/// Expands `g` (broadcast-compatible) to `shape`.
pub fn broadcast_to(g: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let out_shape = broadcast_shapes(g.shape(), shape)?;
    if out_shape != shape {
        return Err(Error::shape(format!(
            "{:?} does not broadcast to {:?}",
            g.shape(),
            shape
        )));
    }
    Ok(dispatch!(g, v => {
        let mut out = Vec::with_capacity(numel(shape));
        for_each_broadcast(g.shape(), shape, shape, |i, _| out.push(v[i]));
        Tensor::from_vec(shape.to_vec(), out)
    }))
}

pub fn sum_all(a: &Tensor) -> Tensor {
    match a.storage() {
        Storage::Real(v) => Tensor::scalar(v.iter().sum()),
        Storage::Complex(v) => Tensor::scalar_complex(v.iter().sum()),
    }
}

pub fn mean_axes(a: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let mut out_shape = a.shape().to_vec();
    let mut count = 1;
    for &ax in axes {
        count *= out_shape[ax];
        out_shape[ax] = 1;
    }
    let s = 1.0 / count as f64;
    Ok(dispatch!(a, v => {
        let r: Vec<_> = reduce_to_shape(v, a.shape(), &out_shape)
            .into_iter()
            .map(|x| x.scale(s))
            .collect();
        Tensor::from_vec(out_shape.clone(), r)
    }))
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn narrow(a: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    let shape = a.shape();
    if axis >= shape.len() || start + len > shape[axis] {
        return Err(Error::shape(format!(
            "narrow(axis={axis}, start={start}, len={len}) out of range for {shape:?}"
        )));
    }
    let (outer, extent, inner) = split_axis(shape, axis);
    let mut out_shape = shape.to_vec();
    out_shape[axis] = len;
    Ok(dispatch!(a, v => {
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            out.extend_from_slice(&v[base..base + len * inner]);
        }
        Tensor::from_vec(out_shape.clone(), out)
    }))
}

/// Scatters `g` back into a zero tensor of `full` shape (inverse of `narrow`).
pub fn pad_narrow(g: &Tensor, full: &[usize], axis: usize, start: usize) -> Result<Tensor> {
    let len = g.shape()[axis];
    let (outer, extent, inner) = split_axis(full, axis);
    Ok(dispatch!(g, v => {
        let mut out = vec![Element::zero(); numel(full)];
        for o in 0..outer {
            let dst = (o * extent + start) * inner;
            let src = o * len * inner;
            out[dst..dst + len * inner].copy_from_slice(&v[src..src + len * inner]);
        }
        Tensor::from_vec(full.to_vec(), out)
    }))
}

pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts[0];
    let rank = first.rank();
    if axis >= rank {
        return Err(Error::shape(format!("concat axis {axis} out of range for rank {rank}")));
    }
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = 0;
    for p in parts {
        if p.dtype() != first.dtype() {
            return Err(Error::dtype("concat of mixed real and complex tensors"));
        }
        let same_other = p.rank() == rank
            && (0..rank).all(|d| d == axis || p.shape()[d] == first.shape()[d]);
        if !same_other {
            return Err(Error::shape(format!(
                "cannot concat {:?} with {:?} along axis {axis}",
                first.shape(),
                p.shape()
            )));
        }
        out_shape[axis] += p.shape()[axis];
    }
    let (outer, _, inner) = split_axis(&out_shape, axis);
    fn gather<T: Element>(parts: &[&[T]], extents: &[usize], outer: usize, inner: usize) -> Vec<T> {
        let total: usize = parts.iter().map(|p| p.len()).sum();
        let mut out = Vec::with_capacity(total);
        for o in 0..outer {
            for (p, &e) in parts.iter().zip(extents) {
                out.extend_from_slice(&p[o * e * inner..(o + 1) * e * inner]);
            }
        }
        out
    }
    let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    Ok(match first.storage() {
        Storage::Real(_) => {
            let views: Vec<&[f64]> = parts.iter().map(|p| p.data::<f64>().unwrap()).collect();
            Tensor::from_vec(out_shape, gather(&views, &extents, outer, inner))
        }
        Storage::Complex(_) => {
            let views: Vec<&[C64]> = parts.iter().map(|p| p.data::<C64>().unwrap()).collect();
            Tensor::from_vec(out_shape, gather(&views, &extents, outer, inner))
        }
    })
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 {
        return Err(Error::shape(format!("transpose expects a matrix, got {:?}", a.shape())));
    }
    let (r, c) = (a.shape()[0], a.shape()[1]);
    Ok(dispatch!(a, v => {
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                out.push(v[i * c + j]);
            }
        }
        Tensor::from_vec(vec![c, r], out)
    }))
}

fn matmul_typed<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::shape(format!(
            "matmul expects matrices, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::shape(format!(
            "inner dimensions differ: {:?} × {:?}",
            a.shape(),
            b.shape()
        )));
    }
    match (a.storage(), b.storage()) {
        (Storage::Real(x), Storage::Real(y)) => {
            Ok(Tensor::from_vec(vec![m, n], matmul_typed(x, y, m, k, n)))
        }
        (Storage::Complex(x), Storage::Complex(y)) => {
            Ok(Tensor::from_vec(vec![m, n], matmul_typed(x, y, m, k, n)))
        }
        _ => Err(Error::dtype("matmul operands must share a dtype")),
    }
}

struct ConvGeom {
    batch: usize,
    cin: usize,
    len: usize,
    cout: usize,
    cin_g: usize,
    kernel: usize,
    groups: usize,
    stride: usize,
    pad: usize,
    out_len: usize,
}

impl ConvGeom {
    fn new(
        x: &Tensor,
        w: &Tensor,
        stride: usize,
        pad: usize,
        groups: usize,
        out_len: usize,
    ) -> Result<Self> {
        if x.rank() != 3 || w.rank() != 3 {
            return Err(Error::shape(format!(
                "conv1d expects input [batch, channels, length] and weight [out, in/groups, kernel], got {:?} and {:?}",
                x.shape(),
                w.shape()
            )));
        }
        let (batch, cin, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (cout, cin_g, kernel) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        if groups == 0 || stride == 0 || kernel == 0 {
            return Err(Error::invalid("conv1d needs positive groups, stride and kernel"));
        }
        if cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g {
            return Err(Error::shape(format!(
                "conv1d channel mismatch: input {cin} channels, weight {:?}, groups {groups}",
                w.shape()
            )));
        }
        Ok(ConvGeom {
            batch,
            cin,
            len,
            cout,
            cin_g,
            kernel,
            groups,
            stride,
            pad,
            out_len,
        })
    }

    /// Output positions `t` whose tap `kk` reads inside the signal.
    #[inline]
    fn valid_range(&self, kk: usize) -> (usize, usize) {
        // pos = t*stride + kk - pad ∈ [0, len)
        let lo = if self.pad > kk {
            (self.pad - kk).div_ceil(self.stride)
        } else {
            0
        };
        let hi = if self.len + self.pad > kk {
            ((self.len + self.pad - kk - 1) / self.stride + 1).min(self.out_len)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

fn conv_forward_typed<T: Element>(x: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let mut out = vec![T::zero(); g.batch * g.cout * g.out_len];
    let cout_g = g.cout / g.groups;
    for b in 0..g.batch {
        for co in 0..g.cout {
            let grp = co / cout_g;
            let orow = &mut out[(b * g.cout + co) * g.out_len..(b * g.cout + co + 1) * g.out_len];
            for cl in 0..g.cin_g {
                let ci = grp * g.cin_g + cl;
                let xrow = &x[(b * g.cin + ci) * g.len..(b * g.cin + ci + 1) * g.len];
                for kk in 0..g.kernel {
                    let wv = w[(co * g.cin_g + cl) * g.kernel + kk];
                    let (lo, hi) = g.valid_range(kk);
                    if g.stride == 1 {
                        let off = lo + kk - g.pad;
                        for (o, &xv) in orow[lo..hi].iter_mut().zip(&xrow[off..off + hi - lo]) {
                            *o += wv * xv;
                        }
                    } else {
                        for t in lo..hi {
                            orow[t] += wv * xrow[t * g.stride + kk - g.pad];
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward_typed<T: Element>(gout: &[T], x: &[T], w: &[T], g: &ConvGeom) -> (Vec<T>, Vec<T>) {
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); w.len()];
    let cout_g = g.cout / g.groups;
    for b in 0..g.batch {
        for co in 0..g.cout {
            let grp = co / cout_g;
            let grow = &gout[(b * g.cout + co) * g.out_len..(b * g.cout + co + 1) * g.out_len];
            for cl in 0..g.cin_g {
                let ci = grp * g.cin_g + cl;
                let base = (b * g.cin + ci) * g.len;
                for kk in 0..g.kernel {
                    let widx = (co * g.cin_g + cl) * g.kernel + kk;
                    let wc = w[widx].conj();
                    let (lo, hi) = g.valid_range(kk);
                    let mut acc = T::zero();
                    for t in lo..hi {
                        let pos = base + t * g.stride + kk - g.pad;
                        acc += grow[t] * x[pos].conj();
                        gx[pos] += grow[t] * wc;
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    (gx, gw)
}

pub fn conv1d(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    groups: usize,
    out_len: usize,
) -> Result<Tensor> {
    let geom = ConvGeom::new(x, w, stride, pad, groups, out_len)?;
    let shape = vec![geom.batch, geom.cout, out_len];
    match (x.storage(), w.storage()) {
        (Storage::Real(xv), Storage::Real(wv)) => {
            Ok(Tensor::from_vec(shape, conv_forward_typed(xv, wv, &geom)))
        }
        (Storage::Complex(xv), Storage::Complex(wv)) => {
            Ok(Tensor::from_vec(shape, conv_forward_typed(xv, wv, &geom)))
        }
        _ => Err(Error::dtype(format!(
            "conv1d input is {} but weights are {}",
            x.dtype(),
            w.dtype()
        ))),
    }
}

pub fn conv1d_backward(
    gout: &Tensor,
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Result<(Tensor, Tensor)> {
    let out_len = gout.shape()[2];
    let geom = ConvGeom::new(x, w, stride, pad, groups, out_len)?;
    match (gout.storage(), x.storage(), w.storage()) {
        (Storage::Real(gv), Storage::Real(xv), Storage::Real(wv)) => {
            let (gx, gw) = conv_backward_typed(gv, xv, wv, &geom);
            Ok((
                Tensor::from_vec(x.shape().to_vec(), gx),
                Tensor::from_vec(w.shape().to_vec(), gw),
            ))
        }
        (Storage::Complex(gv), Storage::Complex(xv), Storage::Complex(wv)) => {
            let (gx, gw) = conv_backward_typed(gv, xv, wv, &geom);
            Ok((
                Tensor::from_vec(x.shape().to_vec(), gx),
                Tensor::from_vec(w.shape().to_vec(), gw),
            ))
        }
        _ => Err(Error::dtype("conv1d gradient dtype mismatch")),
    }
}

pub fn avg_pool(a: &Tensor, kernel: usize) -> Result<Tensor> {
    let shape = a.shape();
    let len = *shape
        .last()
        .ok_or_else(|| Error::shape("avg_pool needs at least one axis"))?;
    if kernel == 0 || kernel > len {
        return Err(Error::invalid(format!(
            "pool kernel {kernel} invalid for length {len}"
        )));
    }
    let out_len = len / kernel;
    let rows = a.len() / len;
    let mut out_shape = shape.to_vec();
    *out_shape.last_mut().unwrap() = out_len;
    let s = 1.0 / kernel as f64;
    Ok(dispatch!(a, v => {
        let mut out = Vec::with_capacity(rows * out_len);
        for r in 0..rows {
            let row = &v[r * len..(r + 1) * len];
            for t in 0..out_len {
                let mut acc = row[t * kernel];
                for &x in &row[t * kernel + 1..(t + 1) * kernel] {
                    acc += x;
                }
                out.push(acc.scale(s));
            }
        }
        Tensor::from_vec(out_shape.clone(), out)
    }))
}

pub fn avg_pool_backward(g: &Tensor, in_shape: &[usize], kernel: usize) -> Result<Tensor> {
    let len = *in_shape.last().unwrap();
    let out_len = len / kernel;
    let rows = numel(in_shape) / len;
    let s = 1.0 / kernel as f64;
    Ok(dispatch!(g, v => {
        let mut out = vec![Element::zero(); numel(in_shape)];
        for r in 0..rows {
            for t in 0..out_len {
                let gv = Element::scale(v[r * out_len + t], s);
                for slot in &mut out[r * len + t * kernel..r * len + (t + 1) * kernel] {
                    *slot = gv;
                }
            }
        }
        Tensor::from_vec(in_shape.to_vec(), out)
    }))
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

fn check_logits(logits: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    if logits.rank() != 2 {
        return Err(Error::shape(format!(
            "cross-entropy expects [batch, classes], got {:?}",
            logits.shape()
        )));
    }
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b {
        return Err(Error::shape(format!("{} labels for batch of {b}", labels.len())));
    }
    if b == 0 {
        return Err(Error::invalid("cross-entropy of an empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::invalid(format!("label {bad} out of range for {c} classes")));
    }
    Ok((b, c))
}

pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, c) = check_logits(logits, labels)?;
    let v = logits.real_data()?;
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        total -= log_softmax_row(&v[i * c..(i + 1) * c])[l];
    }
    Ok(Tensor::scalar(total / b as f64))
}

pub fn cross_entropy_backward(g: &Tensor, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, c) = check_logits(logits, labels)?;
    let scale = g.item()? / b as f64;
    let v = logits.real_data()?;
    let mut out = Vec::with_capacity(b * c);
    for (i, &l) in labels.iter().enumerate() {
        let lsm = log_softmax_row(&v[i * c..(i + 1) * c]);
        for (j, lp) in lsm.into_iter().enumerate() {
            let target = if j == l { 1.0 } else { 0.0 };
            out.push(scale * (lp.exp() - target));
        }
    }
    Ok(Tensor::from_vec(vec![b, c], out))
}

/// Row-wise softmax probabilities of real logits [batch, classes].
pub fn softmax_rows(logits: &Tensor) -> Result<Vec<Vec<f64>>> {
    if logits.rank() != 2 {
        return Err(Error::shape("softmax expects [batch, classes]"));
    }
    let c = logits.shape()[1];
    let v = logits.real_data()?;
    Ok(v.chunks(c.max(1))
        .map(|row| log_softmax_row(row).into_iter().map(f64::exp).collect())
        .collect())
}
