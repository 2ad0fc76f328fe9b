//! Dense row-major tensors over `f64` or `Complex<f64>`.
//!
//! A [`Tensor`] never changes its element type after creation. Mixing real
//! and complex operands requires an explicit [`Tensor::to_complex`]
//! promotion.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type C64 = Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DType {
    #[serde(rename = "real64")]
    Real64,
    #[serde(rename = "complex128")]
    Complex128,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::Real64 => "real64",
            DType::Complex128 => "complex128",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Scalar types a tensor can hold. Kernels are written once against this.
pub trait Element:
    Copy
    + Send
    + Sync
    + fmt::Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + 'static
{
    const DTYPE: DType;
    fn zero() -> Self;
    fn conj(self) -> Self;
    fn scale(self, s: f64) -> Self;
    fn wrap(v: Vec<Self>) -> Storage;
    fn slice(storage: &Storage) -> Option<&[Self]>;
}

impl Element for f64 {
    const DTYPE: DType = DType::Real64;
    #[inline]
    fn zero() -> Self {
        0.0
    }
    #[inline]
    fn conj(self) -> Self {
        self
    }
    #[inline]
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn wrap(v: Vec<Self>) -> Storage {
        Storage::Real(v)
    }
    fn slice(storage: &Storage) -> Option<&[Self]> {
        match storage {
            Storage::Real(v) => Some(v),
            Storage::Complex(_) => None,
        }
    }
}

impl Element for C64 {
    const DTYPE: DType = DType::Complex128;
    #[inline]
    fn zero() -> Self {
        C64::new(0.0, 0.0)
    }
    #[inline]
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    #[inline]
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn wrap(v: Vec<Self>) -> Storage {
        Storage::Complex(v)
    }
    fn slice(storage: &Storage) -> Option<&[Self]> {
        match storage {
            Storage::Complex(v) => Some(v),
            Storage::Real(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Storage {
    Real(Vec<f64>),
    Complex(Vec<C64>),
}

impl Storage {
    pub fn len(&self) -> usize {
        match self {
            Storage::Real(v) => v.len(),
            Storage::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            Storage::Real(_) => DType::Real64,
            Storage::Complex(_) => DType::Complex128,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    storage: Storage,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn from_storage(shape: Vec<usize>, storage: Storage) -> Result<Self> {
        if numel(&shape) != storage.len() {
            return Err(Error::shape(format!(
                "shape {:?} holds {} elements but buffer has {}",
                shape,
                numel(&shape),
                storage.len()
            )));
        }
        Ok(Tensor { shape, storage })
    }

    pub fn real(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        Self::from_storage(shape.into(), Storage::Real(data))
    }

    pub fn complex(shape: impl Into<Vec<usize>>, data: Vec<C64>) -> Result<Self> {
        Self::from_storage(shape.into(), Storage::Complex(data))
    }

    pub fn zeros(shape: impl Into<Vec<usize>>, dtype: DType) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        let storage = match dtype {
            DType::Real64 => Storage::Real(vec![0.0; n]),
            DType::Complex128 => Storage::Complex(vec![C64::new(0.0, 0.0); n]),
        };
        Tensor { shape, storage }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            storage: Storage::Real(vec![x]),
        }
    }

    pub fn scalar_complex(z: C64) -> Self {
        Tensor {
            shape: Vec::new(),
            storage: Storage::Complex(vec![z]),
        }
    }

    /// 1-D real tensor.
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            storage: Storage::Real(data),
        }
    }

    /// 1-D complex tensor.
    pub fn complex_vector(data: Vec<C64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            storage: Storage::Complex(data),
        }
    }

    pub(crate) fn from_vec<T: Element>(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        let storage = T::wrap(data);
        Tensor { shape, storage }
    }

    /// Typed view of the buffer; `None` when `T` is not this tensor's dtype.
    pub fn data<T: Element>(&self) -> Option<&[T]> {
        T::slice(&self.storage)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dtype(&self) -> DType {
        self.storage.dtype()
    }

    pub fn is_complex(&self) -> bool {
        self.dtype() == DType::Complex128
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn storage(&self) -> &Storage {
        &self.storage
    }

    pub fn real_data(&self) -> Result<&[f64]> {
        match &self.storage {
            Storage::Real(v) => Ok(v),
            Storage::Complex(_) => Err(Error::dtype("expected real64 tensor, got complex128")),
        }
    }

    pub fn complex_data(&self) -> Result<&[C64]> {
        match &self.storage {
            Storage::Complex(v) => Ok(v),
            Storage::Real(_) => Err(Error::dtype("expected complex128 tensor, got real64")),
        }
    }

    pub fn real_data_mut(&mut self) -> Result<&mut [f64]> {
        match &mut self.storage {
            Storage::Real(v) => Ok(v),
            Storage::Complex(_) => Err(Error::dtype("expected real64 tensor, got complex128")),
        }
    }

    pub fn complex_data_mut(&mut self) -> Result<&mut [C64]> {
        match &mut self.storage {
            Storage::Complex(v) => Ok(v),
            Storage::Real(_) => Err(Error::dtype("expected complex128 tensor, got real64")),
        }
    }

    pub fn into_real(self) -> Result<Vec<f64>> {
        match self.storage {
            Storage::Real(v) => Ok(v),
            Storage::Complex(_) => Err(Error::dtype("expected real64 tensor, got complex128")),
        }
    }

    pub fn into_complex(self) -> Result<Vec<C64>> {
        match self.storage {
            Storage::Complex(v) => Ok(v),
            Storage::Real(_) => Err(Error::dtype("expected complex128 tensor, got real64")),
        }
    }

    /// Value of a single-element tensor as a real number.
    pub fn item(&self) -> Result<f64> {
        if self.len() != 1 {
            return Err(Error::NotScalar(self.shape.clone()));
        }
        Ok(self.real_data()?[0])
    }

    pub fn item_complex(&self) -> Result<C64> {
        if self.len() != 1 {
            return Err(Error::NotScalar(self.shape.clone()));
        }
        match &self.storage {
            Storage::Real(v) => Ok(C64::new(v[0], 0.0)),
            Storage::Complex(v) => Ok(v[0]),
        }
    }

    /// Element `i` of the flat buffer, promoted to complex.
    pub fn get_complex(&self, i: usize) -> C64 {
        match &self.storage {
            Storage::Real(v) => C64::new(v[i], 0.0),
            Storage::Complex(v) => v[i],
        }
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let shape = shape.into();
        if numel(&shape) != self.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(Tensor {
            shape,
            storage: self.storage.clone(),
        })
    }

    /// Real → complex promotion. A complex tensor is returned unchanged.
    pub fn to_complex(&self) -> Tensor {
        match &self.storage {
            Storage::Real(v) => Tensor {
                shape: self.shape.clone(),
                storage: Storage::Complex(v.iter().map(|&x| C64::new(x, 0.0)).collect()),
            },
            Storage::Complex(_) => self.clone(),
        }
    }

    /// Real part as a real tensor (identity for real tensors).
    pub fn re(&self) -> Tensor {
        match &self.storage {
            Storage::Real(_) => self.clone(),
            Storage::Complex(v) => Tensor {
                shape: self.shape.clone(),
                storage: Storage::Real(v.iter().map(|z| z.re).collect()),
            },
        }
    }

    pub fn im(&self) -> Tensor {
        match &self.storage {
            Storage::Real(v) => Tensor {
                shape: self.shape.clone(),
                storage: Storage::Real(vec![0.0; v.len()]),
            },
            Storage::Complex(v) => Tensor {
                shape: self.shape.clone(),
                storage: Storage::Real(v.iter().map(|z| z.im).collect()),
            },
        }
    }

    pub fn zeros_like(&self) -> Tensor {
        Tensor::zeros(self.shape.clone(), self.dtype())
    }

    /// Largest absolute element-wise difference; errors on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok((0..self.len())
            .map(|i| (self.get_complex(i) - other.get_complex(i)).norm())
            .fold(0.0, f64::max))
    }

    pub fn all_finite(&self) -> bool {
        match &self.storage {
            Storage::Real(v) => v.iter().all(|x| x.is_finite()),
            Storage::Complex(v) => v.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Tensor> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorRepr {
    shape: Vec<usize>,
    dtype: DType,
    data: Vec<f64>,
}

impl Serialize for Tensor {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let data = match &self.storage {
            Storage::Real(v) => v.clone(),
            Storage::Complex(v) => v.iter().flat_map(|z| [z.re, z.im]).collect(),
        };
        TensorRepr {
            shape: self.shape.clone(),
            dtype: self.dtype(),
            data,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Tensor {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = TensorRepr::deserialize(deserializer)?;
        let storage = match repr.dtype {
            DType::Real64 => Storage::Real(repr.data),
            DType::Complex128 => {
                if repr.data.len() % 2 != 0 {
                    return Err(D::Error::custom("complex data must be interleaved re/im pairs"));
                }
                Storage::Complex(
                    repr.data
                        .chunks_exact(2)
                        .map(|p| C64::new(p[0], p[1]))
                        .collect(),
                )
            }
        };
        Tensor::from_storage(repr.shape, storage).map_err(D::Error::custom)
    }
}

/// Broadcast two shapes with trailing-dimension alignment.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::shape(format!(
                    "shapes {:?} and {:?} are not broadcastable",
                    a, b
                )))
            }
        };
    }
    Ok(out)
}

/// Strides of `shape` expressed in the index space of `out` (0 on broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 {
            strides[i + offset] = acc;
        }
        acc *= shape[i];
    }
    strides
}

/// Visits every output element of a broadcast, yielding (a_index, b_index).
pub(crate) fn for_each_broadcast(
    a: &[usize],
    b: &[usize],
    out: &[usize],
    mut f: impl FnMut(usize, usize),
) {
    let n = numel(out);
    if a == out && b == out {
        for i in 0..n {
            f(i, i);
        }
        return;
    }
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for _ in 0..n {
        f(ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// Sums a buffer laid out over `from` down to the (broadcast-compatible) `to` shape.
pub(crate) fn reduce_to_shape<T: Element>(data: &[T], from: &[usize], to: &[usize]) -> Vec<T> {
    if from == to {
        return data.to_vec();
    }
    let mut out = vec![T::zero(); numel(to)];
    let strides = broadcast_strides(to, from);
    let rank = from.len();
    let mut idx = vec![0usize; rank];
    let mut io = 0usize;
    for &v in data {
        out[io] += v;
        for d in (0..rank).rev() {
            idx[d] += 1;
            io += strides[d];
            if idx[d] < from[d] {
                break;
            }
            io -= strides[d] * from[d];
            idx[d] = 0;
        }
    }
    out
}
