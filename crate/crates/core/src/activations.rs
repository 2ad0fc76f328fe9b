//! Real activations and the parameterised complex activation families.
//!
//! The complex families, for input `z`:
//! * `P`:  `αz + Σₙ kₙzⁿ / (|z|^q + ε)`
//! * `Ps`: `αz + Σₙ kₙzⁿ / sqrt(|z|^q + ε)`
//! * `D`:  `z(1 − |α| + α·sign(v))`
//! * `E`:  `z(1 − |α| + α·v^q / (|z|^q + ε))`
//!
//! with `v = max(0, Re z − k₁|Im z| − k₀)` and `n = 0..=3`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Session, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RealActivation {
    ReLU,
    Softplus,
    Tanh,
    Abs,
    Tanhshrink,
    ELU,
}

impl RealActivation {
    pub const ALL: [RealActivation; 6] = [
        RealActivation::ReLU,
        RealActivation::Softplus,
        RealActivation::Tanh,
        RealActivation::Abs,
        RealActivation::Tanhshrink,
        RealActivation::ELU,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RealActivation::ReLU => "ReLU",
            RealActivation::Softplus => "Softplus",
            RealActivation::Tanh => "Tanh",
            RealActivation::Abs => "Abs",
            RealActivation::Tanhshrink => "Tanhshrink",
            RealActivation::ELU => "ELU",
        }
    }

    pub fn apply<'t>(self, x: Var<'t>) -> Result<Var<'t>> {
        if x.is_complex() {
            return Err(Error::dtype(format!("{} needs real input", self.name())));
        }
        match self {
            RealActivation::ReLU => x.relu(),
            RealActivation::Softplus => x.softplus(),
            RealActivation::Tanh => x.tanh(),
            RealActivation::Abs => x.abs(),
            RealActivation::Tanhshrink => x.sub(x.tanh()?),
            RealActivation::ELU => x.elu(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    P,
    Ps,
    D,
    E,
}

/// One member of a complex activation family with its coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexActivation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub family: Family,
    #[serde(default)]
    pub q: u32,
    pub alpha: C64,
    pub k: [C64; 4],
    #[serde(default)]
    pub epsilon: f64,
}

fn r(x: f64) -> C64 {
    C64::new(x, 0.0)
}

impl ComplexActivation {
    pub fn new(family: Family, q: u32, alpha: f64, k: [f64; 4], epsilon: f64) -> Self {
        ComplexActivation {
            name: None,
            family,
            q,
            alpha: r(alpha),
            k: k.map(r),
            epsilon,
        }
    }

    fn named(name: &str, family: Family, q: u32, alpha: f64, k: [f64; 4], epsilon: f64) -> Self {
        ComplexActivation {
            name: Some(name.to_string()),
            ..Self::new(family, q, alpha, k, epsilon)
        }
    }

    /// `0.373z + z(1.513 + 0.627z)/(|z| + 2.411)`, a smooth ELU substitute.
    pub fn elu_surrogate() -> Self {
        Self::named("cELU", Family::P, 1, 0.373, [0.0, 1.513, 0.627, 0.0], 2.411)
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            Family::P | Family::Ps | Family::E if !(self.epsilon > 0.0) => {
                Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)))
            }
            Family::D | Family::E if self.alpha.norm() > 1.0 => {
                Err(Error::invalid(format!("|alpha| must not exceed 1, got {}", self.alpha)))
            }
            Family::P | Family::Ps | Family::E if self.q == 0 => {
                Err(Error::invalid("q must be at least 1"))
            }
            _ => Ok(()),
        }
    }

    fn real_coefficients(&self) -> bool {
        self.alpha.im == 0.0 && self.k.iter().all(|k| k.im == 0.0)
    }

    /// `|z|^q`, real.
    fn magnitude_pow<'t>(&self, z: Var<'t>) -> Result<Var<'t>> {
        let m = z.abs()?;
        match self.q {
            1 => Ok(m),
            2 if z.is_complex() => z.re()?.powi(2)?.add(z.im()?.powi(2)?),
            q => m.powi(q),
        }
    }

    /// Multiplies by a coefficient, staying real when both sides are real.
    fn times<'t>(x: Var<'t>, c: C64) -> Result<Var<'t>> {
        if c.im == 0.0 {
            x.scale(c.re)
        } else {
            x.mul_complex(c)
        }
    }

    fn lift<'t>(x: Var<'t>, complex: bool) -> Result<Var<'t>> {
        if complex {
            x.to_complex()
        } else {
            Ok(x)
        }
    }

    pub fn apply<'t>(&self, z: Var<'t>) -> Result<Var<'t>> {
        self.validate()?;
        let complex = z.is_complex() || !self.real_coefficients();
        let z = Self::lift(z, complex)?;
        match self.family {
            Family::P | Family::Ps => {
                let mut denom = self.magnitude_pow(z)?.add_scalar(self.epsilon)?;
                if self.family == Family::Ps {
                    denom = denom.sqrt()?;
                }
                let mut num: Option<Var<'t>> = None;
                let mut power: Option<Var<'t>> = None;
                for (n, &k) in self.k.iter().enumerate() {
                    if n > 0 {
                        power = Some(match power {
                            None => z,
                            Some(p) => p.mul(z)?,
                        });
                    }
                    if k == C64::new(0.0, 0.0) {
                        continue;
                    }
                    let term = match power {
                        None if complex => z.tape().scalar_complex(k),
                        None => z.tape().scalar(k.re),
                        Some(p) => Self::times(p, k)?,
                    };
                    num = Some(match num {
                        None => term,
                        Some(acc) => acc.add(term)?,
                    });
                }
                let mut out = Self::times(z, self.alpha)?;
                if let Some(num) = num {
                    let frac = num.div(Self::lift(denom, complex)?)?;
                    out = out.add(frac)?;
                }
                Ok(out)
            }
            Family::D | Family::E => {
                let (re, im_abs) = if z.is_complex() {
                    (z.re()?, z.im()?.abs()?)
                } else {
                    (z, z.scale(0.0)?)
                };
                let zero = z.tape().scalar(0.0);
                let v = re
                    .sub(im_abs.scale(self.k[1].re)?)?
                    .add_scalar(-self.k[0].re)?
                    .max(zero)?;
                let gate = if self.family == Family::D {
                    v.sign()?
                } else {
                    let denom = self.magnitude_pow(z)?.add_scalar(self.epsilon)?;
                    v.powi(self.q)?.div(denom)?
                };
                let factor = Self::times(Self::lift(gate, complex)?, self.alpha)?
                    .add_scalar(1.0 - self.alpha.norm())?;
                z.mul(factor)
            }
        }
    }
}

/// Any activation accepted by a network path.
#[derive(Clone, Debug, PartialEq)]
pub enum Activation {
    /// The "no activation" option; only allowed right before a conversion.
    None,
    Real(RealActivation),
    Complex(ComplexActivation),
}

impl Activation {
    pub const NONE_NAME: &'static str = "none";

    pub fn name(&self) -> String {
        match self {
            Activation::None => Self::NONE_NAME.to_string(),
            Activation::Real(a) => a.name().to_string(),
            Activation::Complex(c) => c.name.clone().unwrap_or_else(|| "custom".to_string()),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Activation::None)
    }

    pub fn apply<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            Activation::None => Ok(x),
            Activation::Real(a) => a.apply(x),
            Activation::Complex(c) => c.apply(x),
        }
    }

    /// Whether this activation can take input of the given domain.
    pub fn accepts_complex(&self) -> bool {
        !matches!(self, Activation::Real(_))
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == Self::NONE_NAME {
            return Ok(Activation::None);
        }
        if let Some(a) = RealActivation::ALL.iter().find(|a| a.name() == s) {
            return Ok(Activation::Real(*a));
        }
        complex_presets()
            .into_iter()
            .chain(std::iter::once(ComplexActivation::elu_surrogate()))
            .find(|p| p.name.as_deref() == Some(s))
            .map(Activation::Complex)
            .ok_or_else(|| Error::UnknownName(s.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ActivationRepr {
    Name(String),
    Custom(ComplexActivation),
}

impl Serialize for Activation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Activation::Complex(c) if c.name.is_none() => ActivationRepr::Custom(c.clone()),
            other => ActivationRepr::Name(other.name()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Activation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match ActivationRepr::deserialize(d)? {
            ActivationRepr::Name(n) => n.parse().map_err(serde::de::Error::custom),
            ActivationRepr::Custom(c) => {
                c.validate().map_err(serde::de::Error::custom)?;
                Ok(Activation::Complex(c))
            }
        }
    }
}

/// The eight complex presets.
pub fn complex_presets() -> Vec<ComplexActivation> {
    use Family::*;
    vec![
        ComplexActivation::named("cRecip", P, 1, 0.0, [0.0, 1.0, 0.0, 0.0], 0.01),
        ComplexActivation::named("cReLU", P, 1, 0.5, [0.0, 0.0, 0.5, 0.0], 0.01),
        ComplexActivation::named("cAbs", P, 1, 0.0, [0.0, 0.0, 1.0, 0.0], 0.01),
        ComplexActivation::named("cTanhshrink", P, 2, 0.0, [0.0, 0.0, 0.0, 1.0], 1.0),
        ComplexActivation::named("cTanh", Ps, 2, 0.0, [0.0, 1.0, 0.0, 0.0], 1.0),
        ComplexActivation::named("cSoftPlus", Ps, 2, 0.5, [2.134, 0.0, 0.5, 0.0], 9.481),
        ComplexActivation::named("cReImLU", D, 0, 0.95, [0.1, 1.0, 0.0, 0.0], 0.0),
        ComplexActivation::named("cRecipMax", E, 2, 0.9, [0.1, 0.5, 0.0, 0.0], 0.1),
    ]
}

/// The complex presets plus the "no activation" sentinel.
pub fn list_presets() -> Vec<Activation> {
    complex_presets()
        .into_iter()
        .map(Activation::Complex)
        .chain(std::iter::once(Activation::None))
        .collect()
}

/// Untracked evaluation of `activation` on a tensor.
pub fn activate(activation: &Activation, z: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let s = Session::eval(&tape);
    Ok(activation.apply(s.constant(z.clone()))?.value())
}

/// Untracked evaluation of a real activation by name.
pub fn activate_real(name: &str, x: &Tensor) -> Result<Tensor> {
    let a = RealActivation::ALL
        .iter()
        .find(|a| a.name() == name)
        .ok_or_else(|| Error::UnknownName(name.to_string()))?;
    activate(&Activation::Real(*a), x)
}
