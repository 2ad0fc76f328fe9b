//! Fixed real↔complex domain conversions.
//!
//! Channels live on axis 1. Multi-channel conversions work on consecutive
//! blocks: an R2C kind of arity `a` turns channels `[g·a, g·a + a)` into
//! complex channel `g`, and a C2R kind emitting `a` values per element writes
//! complex channel `c` to real channels `[c·a, c·a + a)`. Phases are
//! normalised by π.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autograd::{Session, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, C64};

/// Real → complex kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum R2C {
    /// `x₁`
    Real,
    /// `e^{iπx₁}`
    Exp,
    /// principal `√x₁`
    Sqrt,
    /// `|x₁|e^{iπx₁}`
    MagExp,
    /// `x₁ + ix₂`
    Cartesian,
    /// `x₁e^{iπx₂}`
    Polar,
    /// `(x₁ + ix₂)e^{iπx₃}`
    Rotation,
}

/// Complex → real kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum C2R {
    Real,
    Mag,
    SquareMag,
    AbsPhase,
    MagAbsPhase,
    Cartesian,
    Polar,
    MultiMagReal,
    MultiMagPhase,
}

impl R2C {
    pub const ALL: [R2C; 7] = [
        R2C::Real,
        R2C::Exp,
        R2C::Sqrt,
        R2C::MagExp,
        R2C::Cartesian,
        R2C::Polar,
        R2C::Rotation,
    ];

    pub fn in_arity(self) -> usize {
        match self {
            R2C::Cartesian | R2C::Polar => 2,
            R2C::Rotation => 3,
            _ => 1,
        }
    }
}

impl C2R {
    pub const ALL: [C2R; 9] = [
        C2R::Real,
        C2R::Mag,
        C2R::SquareMag,
        C2R::AbsPhase,
        C2R::MagAbsPhase,
        C2R::Cartesian,
        C2R::Polar,
        C2R::MultiMagReal,
        C2R::MultiMagPhase,
    ];

    pub fn is_multi_phase(self) -> bool {
        matches!(self, C2R::MultiMagReal | C2R::MultiMagPhase)
    }

    pub fn out_arity(self, n_phases: usize) -> usize {
        match self {
            C2R::MagAbsPhase | C2R::Cartesian | C2R::Polar => 2,
            C2R::MultiMagReal | C2R::MultiMagPhase => n_phases,
            _ => 1,
        }
    }
}

/// A conversion together with its direction and phase count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "direction")]
pub enum ConversionSpec {
    R2C { kind: R2C },
    C2R {
        kind: C2R,
        #[serde(default = "default_phases")]
        n_phases: usize,
    },
}

fn default_phases() -> usize {
    ConversionSpec::DEFAULT_PHASES
}

impl fmt::Display for ConversionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConversionSpec::R2C { kind } => write!(f, "{kind:?}"),
            ConversionSpec::C2R { kind, n_phases } if kind.is_multi_phase() => {
                write!(f, "{kind:?}{n_phases}")
            }
            ConversionSpec::C2R { kind, .. } => write!(f, "{kind:?}"),
        }
    }
}

fn cis(theta: f64) -> C64 {
    C64::new(theta.cos(), theta.sin())
}

impl ConversionSpec {
    pub const DEFAULT_PHASES: usize = 3;

    pub fn r2c(kind: R2C) -> Self {
        ConversionSpec::R2C { kind }
    }

    pub fn c2r(kind: C2R) -> Self {
        ConversionSpec::C2R {
            kind,
            n_phases: Self::DEFAULT_PHASES,
        }
    }

    pub fn multi_phase(kind: C2R, n_phases: usize) -> Self {
        ConversionSpec::C2R { kind, n_phases }
    }

    /// Every conversion kind, multi-phase ones with the default phase count.
    pub fn all() -> Vec<ConversionSpec> {
        R2C::ALL
            .iter()
            .map(|&k| Self::r2c(k))
            .chain(C2R::ALL.iter().map(|&k| Self::c2r(k)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ConversionSpec::C2R { kind, n_phases } if kind.is_multi_phase() && *n_phases == 0 => {
                Err(Error::invalid("multi-phase conversions need at least one phase"))
            }
            _ => Ok(()),
        }
    }

    pub fn in_arity(&self) -> usize {
        match self {
            ConversionSpec::R2C { kind } => kind.in_arity(),
            ConversionSpec::C2R { .. } => 1,
        }
    }

    pub fn out_arity(&self) -> usize {
        match self {
            ConversionSpec::R2C { .. } => 1,
            ConversionSpec::C2R { kind, n_phases } => kind.out_arity(*n_phases),
        }
    }

    /// Channel count after conversion, or an error if `channels` is not a
    /// multiple of the input arity.
    pub fn output_channels(&self, channels: usize) -> Result<usize> {
        let a = self.in_arity();
        if !channels.is_multiple_of(a) {
            return Err(Error::shape(format!(
                "{self} consumes {a} channels per output but got {channels}"
            )));
        }
        Ok(channels / a * self.out_arity())
    }

    /// Whether `invert_lossless` can reconstruct the input.
    pub fn is_lossless(&self) -> bool {
        match self {
            ConversionSpec::C2R { kind, n_phases } => match kind {
                C2R::Cartesian | C2R::Polar => true,
                C2R::MultiMagReal => *n_phases >= 3,
                _ => false,
            },
            ConversionSpec::R2C { .. } => false,
        }
    }

    pub fn apply<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        self.validate()?;
        let shape = x.shape();
        if shape.len() < 2 {
            return Err(Error::shape(format!("conversion needs a channel axis, got {shape:?}")));
        }
        match *self {
            ConversionSpec::R2C { kind } => {
                if x.is_complex() {
                    return Err(Error::dtype("real-to-complex conversion of complex input"));
                }
                let out_c = self.output_channels(shape[1])?;
                let parts = split_groups(x, kind.in_arity())?;
                let z = r2c_group(kind, &parts)?;
                let mut out_shape = shape.clone();
                out_shape[1] = out_c;
                z.reshape(&out_shape)
            }
            ConversionSpec::C2R { kind, n_phases } => {
                if !x.is_complex() {
                    return Err(Error::dtype("complex-to-real conversion of real input"));
                }
                let outs = c2r_elements(kind, n_phases, x)?;
                let mut out_shape = shape.clone();
                out_shape[1] *= outs.len();
                if outs.len() == 1 {
                    return Ok(outs[0]);
                }
                Var::stack(&outs, 2)?.reshape(&out_shape)
            }
        }
    }
}

/// `[b, g·a, ...]` → `a` tensors `[b, g, ...]` holding group member `j`.
fn split_groups<'t>(x: Var<'t>, arity: usize) -> Result<Vec<Var<'t>>> {
    if arity == 1 {
        return Ok(vec![x]);
    }
    let shape = x.shape();
    let groups = shape[1] / arity;
    let mut grouped = vec![shape[0], groups, arity];
    grouped.extend_from_slice(&shape[2..]);
    let x = x.reshape(&grouped)?;
    let mut member = shape.clone();
    member[1] = groups;
    (0..arity)
        .map(|j| x.narrow(2, j, 1)?.reshape(&member))
        .collect()
}

fn i_pi<'t>(x: Var<'t>) -> Result<Var<'t>> {
    x.mul_complex(C64::new(0.0, PI))?.exp()
}

fn r2c_group<'t>(kind: R2C, p: &[Var<'t>]) -> Result<Var<'t>> {
    match kind {
        R2C::Real => p[0].to_complex(),
        R2C::Exp => i_pi(p[0]),
        R2C::Sqrt => p[0].to_complex()?.sqrt(),
        R2C::MagExp => p[0].abs()?.to_complex()?.mul(i_pi(p[0])?),
        R2C::Cartesian => cartesian(p[0], p[1]),
        R2C::Polar => p[0].to_complex()?.mul(i_pi(p[1])?),
        R2C::Rotation => cartesian(p[0], p[1])?.mul(i_pi(p[2])?),
    }
}

fn cartesian<'t>(re: Var<'t>, im: Var<'t>) -> Result<Var<'t>> {
    re.to_complex()?.add(im.mul_complex(C64::new(0.0, 1.0))?)
}

fn c2r_elements<'t>(kind: C2R, n_phases: usize, z: Var<'t>) -> Result<Vec<Var<'t>>> {
    let phase = |v: Var<'t>| v.arg()?.scale(1.0 / PI);
    let abs_phase = |v: Var<'t>| v.arg()?.abs()?.scale(1.0 / PI);
    let shifted = |n: usize| z.mul_complex(cis(-2.0 * PI * n as f64 / n_phases as f64));
    Ok(match kind {
        C2R::Real => vec![z.re()?],
        C2R::Mag => vec![z.abs()?],
        C2R::SquareMag => {
            let m = z.abs()?;
            vec![m.mul(m)?]
        }
        C2R::AbsPhase => vec![abs_phase(z)?],
        C2R::MagAbsPhase => vec![z.abs()?, abs_phase(z)?],
        C2R::Cartesian => vec![z.re()?, z.im()?],
        C2R::Polar => vec![z.abs()?, phase(z)?],
        C2R::MultiMagReal => {
            let m = z.abs()?;
            (0..n_phases)
                .map(|n| m.add(shifted(n)?.re()?)?.scale(0.5))
                .collect::<Result<_>>()?
        }
        C2R::MultiMagPhase => {
            let m = z.abs()?;
            (0..n_phases)
                .map(|n| m.mul(abs_phase(shifted(n)?)?))
                .collect::<Result<_>>()?
        }
    })
}

/// Untracked application of `spec` to a tensor with channels on axis 1.
pub fn convert(spec: &ConversionSpec, x: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let s = Session::eval(&tape);
    Ok(spec.apply(s.constant(x.clone()))?.value())
}

/// Reconstructs the complex input of a lossless C2R conversion from its
/// output (channels on axis 1).
pub fn invert_lossless(spec: &ConversionSpec, y: &Tensor) -> Result<Tensor> {
    if !spec.is_lossless() {
        return Err(Error::invalid(format!("{spec} is not invertible")));
    }
    let ConversionSpec::C2R { kind, n_phases } = *spec else {
        unreachable!("lossless conversions are complex-to-real");
    };
    let shape = y.shape();
    let a = spec.out_arity();
    if shape.len() < 2 || !shape[1].is_multiple_of(a) {
        return Err(Error::shape(format!("{spec} output cannot have shape {shape:?}")));
    }
    let data = y.real_data()?;
    let outer = shape[0];
    let groups = shape[1] / a;
    let inner: usize = shape[2..].iter().product();
    let mut out = Vec::with_capacity(outer * groups * inner);
    for o in 0..outer {
        for g in 0..groups {
            for i in 0..inner {
                let at = |j: usize| data[((o * groups + g) * a + j) * inner + i];
                out.push(match kind {
                    C2R::Cartesian => C64::new(at(0), at(1)),
                    C2R::Polar => C64::from_polar(at(0), PI * at(1)),
                    C2R::MultiMagReal => {
                        let np = n_phases as f64;
                        let (mut x, mut y) = (0.0, 0.0);
                        for n in 0..n_phases {
                            let theta = 2.0 * PI * n as f64 / np;
                            x += at(n) * theta.cos();
                            y += at(n) * theta.sin();
                        }
                        C64::new(4.0 * x / np, 4.0 * y / np)
                    }
                    _ => unreachable!(),
                });
            }
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[1] = groups;
    Tensor::complex(out_shape, out)
}
