//! The four-path hybrid block and series networks built from it.
//!
//! Each block reads a real input and a complex input (either may be absent)
//! and runs up to four paths:
//!
//! | path | input   | conv    | exit conversion | feeds        |
//! |------|---------|---------|-----------------|--------------|
//! | RR   | real    | real    | none            | real out     |
//! | RC   | real    | real    | R2C             | complex out  |
//! | CR   | complex | complex | C2R             | real out     |
//! | CC   | complex | complex | none            | complex out  |
//!
//! A path is conv → activation → [norm] → [dropout] → [conversion], with the
//! block-level pool applied right after the activation. Outputs are
//! concatenated along channels as `real = [RR, CR]` and `complex = [CC, RC]`.
//! Network heads average over length and apply a fully connected layer.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::activations::Activation;
use crate::autograd::{Param, Session, Var};
use crate::conversion::{ConversionSpec, C2R, R2C};
use crate::error::{Error, Result};
use crate::layers::{count_parameters, Bamn, Conv1d, ConvConfig, Domain, Dropout, Init, Linear, Module, ParamCount};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PathKind {
    RR,
    RC,
    CR,
    CC,
}

impl PathKind {
    pub const ALL: [PathKind; 4] = [PathKind::RR, PathKind::RC, PathKind::CR, PathKind::CC];

    pub fn input(self) -> Domain {
        match self {
            PathKind::RR | PathKind::RC => Domain::Real,
            PathKind::CR | PathKind::CC => Domain::Complex,
        }
    }

    pub fn output(self) -> Domain {
        match self {
            PathKind::RR | PathKind::CR => Domain::Real,
            PathKind::RC | PathKind::CC => Domain::Complex,
        }
    }

    pub fn is_cross(self) -> bool {
        self.input() != self.output()
    }
}

impl fmt::Display for PathKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Convolution settings in the `c`/`k`/`n` notation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    /// Output channels.
    pub c: usize,
    /// Kernel size.
    pub k: usize,
    /// Number of groups.
    #[serde(default = "one")]
    pub n: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Optional {
    #[serde(default)]
    pub norm: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub conv: ConvSpec,
    pub activation: Activation,
    /// Exit conversion kind name; required on RC and CR paths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conversion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_phases: Option<usize>,
    #[serde(default)]
    pub optional: Optional,
}

fn parse_r2c(name: &str) -> Result<R2C> {
    R2C::ALL
        .iter()
        .copied()
        .find(|k| format!("{k:?}") == name)
        .ok_or_else(|| Error::UnknownName(name.to_string()))
}

fn parse_c2r(name: &str) -> Result<C2R> {
    C2R::ALL
        .iter()
        .copied()
        .find(|k| format!("{k:?}") == name)
        .ok_or_else(|| Error::UnknownName(name.to_string()))
}

impl PathSpec {
    pub fn new(c: usize, k: usize, activation: Activation) -> Self {
        PathSpec {
            conv: ConvSpec { c, k, n: 1 },
            activation,
            conversion: None,
            n_phases: None,
            optional: Optional::default(),
        }
    }

    pub fn with_conversion(mut self, name: &str) -> Self {
        self.conversion = Some(name.to_string());
        self
    }

    /// Resolves the exit conversion for a path of the given kind.
    pub fn conversion_spec(&self, kind: PathKind) -> Result<Option<ConversionSpec>> {
        match (kind, &self.conversion) {
            (PathKind::RR | PathKind::CC, None) => Ok(None),
            (PathKind::RR | PathKind::CC, Some(_)) => Err(Error::Config(format!(
                "{kind} path cannot carry a conversion"
            ))),
            (_, None) => Err(Error::Config(format!("{kind} path needs a conversion"))),
            (PathKind::RC, Some(name)) => Ok(Some(ConversionSpec::r2c(parse_r2c(name)?))),
            (PathKind::CR, Some(name)) => Ok(Some(ConversionSpec::multi_phase(
                parse_c2r(name)?,
                self.n_phases.unwrap_or(ConversionSpec::DEFAULT_PHASES),
            ))),
        }
    }

    /// Channels this path contributes to its output concat.
    pub fn output_channels(&self, kind: PathKind) -> Result<usize> {
        match self.conversion_spec(kind)? {
            Some(conv) => conv.output_channels(self.conv.c),
            None => Ok(self.conv.c),
        }
    }

    fn validate(&self, kind: PathKind, block: usize) -> Result<()> {
        let ctx = |msg: String| Error::Config(format!("block {block} {kind}: {msg}"));
        if self.conv.c == 0 || self.conv.k == 0 || self.conv.n == 0 {
            return Err(ctx("conv extents must be positive".into()));
        }
        if !self.conv.c.is_multiple_of(self.conv.n) {
            return Err(ctx(format!("groups {} must divide channels {}", self.conv.n, self.conv.c)));
        }
        if let Some(conv) = self.conversion_spec(kind)? {
            conv.validate()?;
            conv.output_channels(self.conv.c).map_err(|e| ctx(e.to_string()))?;
        }
        if self.activation.is_none() && !kind.is_cross() {
            return Err(ctx("\"none\" activation is only allowed before a conversion".into()));
        }
        if kind.input() == Domain::Complex && !self.activation.accepts_complex() {
            return Err(ctx(format!("{} is a real activation", self.activation)));
        }
        if let Some(p) = self.optional.dropout {
            Dropout::new(p).map_err(|e| ctx(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub paths: BTreeMap<PathKind, PathSpec>,
    /// Average-pool kernel applied to every path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<usize>,
}

/// Channel counts of a block's outputs; zero means absent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Channels {
    pub real: usize,
    pub complex: usize,
}

impl Channels {
    pub fn get(self, d: Domain) -> usize {
        match d {
            Domain::Real => self.real,
            Domain::Complex => self.complex,
        }
    }
}

impl BlockSpec {
    pub fn with(mut self, kind: PathKind, path: PathSpec) -> Self {
        self.paths.insert(kind, path);
        self
    }

    pub fn output_channels(&self) -> Result<Channels> {
        let mut out = Channels::default();
        for (&kind, p) in &self.paths {
            let c = p.output_channels(kind)?;
            match kind.output() {
                Domain::Real => out.real += c,
                Domain::Complex => out.complex += c,
            }
        }
        Ok(out)
    }

    pub fn uses(&self, d: Domain) -> bool {
        self.paths.keys().any(|k| k.input() == d)
    }

    pub fn produces(&self, d: Domain) -> bool {
        self.paths.keys().any(|k| k.output() == d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IoDomain {
    Real,
    Complex,
    Both,
}

impl IoDomain {
    pub fn has(self, d: Domain) -> bool {
        matches!(
            (self, d),
            (IoDomain::Both, _) | (IoDomain::Real, Domain::Real) | (IoDomain::Complex, Domain::Complex)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    /// Real input channels supplied by the data; 0 when absent.
    #[serde(default)]
    pub real_channels: usize,
    /// Complex input channels supplied by the data; 0 when absent.
    #[serde(default)]
    pub complex_channels: usize,
    /// Derives the missing domain from the present one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conversion: Option<ConversionSpec>,
}

impl InputSpec {
    pub fn channels(&self) -> Result<Channels> {
        let mut ch = Channels {
            real: self.real_channels,
            complex: self.complex_channels,
        };
        match self.conversion {
            Some(spec @ ConversionSpec::C2R { .. }) => {
                if ch.real != 0 || ch.complex == 0 {
                    return Err(Error::Config("C2R input conversion needs complex-only data".into()));
                }
                ch.real = spec.output_channels(ch.complex)?;
            }
            Some(spec @ ConversionSpec::R2C { .. }) => {
                if ch.complex != 0 || ch.real == 0 {
                    return Err(Error::Config("R2C input conversion needs real-only data".into()));
                }
                ch.complex = spec.output_channels(ch.real)?;
            }
            None => {}
        }
        Ok(ch)
    }

    pub fn domain(&self) -> IoDomain {
        match (self.real_channels > 0, self.complex_channels > 0) {
            (true, true) => IoDomain::Both,
            (false, true) => IoDomain::Complex,
            _ => IoDomain::Real,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub outputs: usize,
    #[serde(default)]
    pub real: bool,
    #[serde(default)]
    pub complex: bool,
    /// Maps complex head outputs to real logits.
    #[serde(default = "default_head_conversion")]
    pub complex_conversion: C2R,
}

fn default_head_conversion() -> C2R {
    C2R::Real
}

impl HeadSpec {
    pub fn real(outputs: usize) -> Self {
        HeadSpec {
            outputs,
            real: true,
            complex: false,
            complex_conversion: C2R::Real,
        }
    }

    pub fn requires(&self, d: Domain) -> bool {
        match d {
            Domain::Real => self.real,
            Domain::Complex => self.complex,
        }
    }
}

/// Architecture description of a series network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: InputSpec,
    pub blocks: Vec<BlockSpec>,
    pub head: HeadSpec,
}

impl NetworkSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        let spec: NetworkSpec = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Structural checks: path configs, conversion arities, and that every
    /// present path and head has its input available.
    pub fn validate(&self) -> Result<()> {
        if self.head.outputs == 0 {
            return Err(Error::Config("head needs at least one output".into()));
        }
        if !self.head.real && !self.head.complex {
            return Err(Error::Config("at least one head must be enabled".into()));
        }
        let out = self.head.complex_conversion;
        if ConversionSpec::c2r(out).out_arity() != 1 {
            return Err(Error::Config(format!("{out:?} cannot map head outputs to logits")));
        }
        let mut ch = self.input.channels()?;
        for (b, block) in self.blocks.iter().enumerate() {
            if block.paths.is_empty() {
                return Err(Error::EmptyBlock(b));
            }
            if block.pool == Some(0) {
                return Err(Error::Config(format!("block {b}: pool kernel must be positive")));
            }
            for (&kind, p) in &block.paths {
                p.validate(kind, b)?;
                let cin = ch.get(kind.input());
                if cin == 0 {
                    return Err(Error::Config(format!(
                        "block {b} {kind} has no {:?} input; prune the architecture first",
                        kind.input()
                    )));
                }
                if cin % p.conv.n != 0 {
                    return Err(Error::Config(format!(
                        "block {b} {kind}: groups {} must divide input channels {cin}",
                        p.conv.n
                    )));
                }
            }
            ch = block.output_channels()?;
        }
        for d in [Domain::Real, Domain::Complex] {
            if self.head.requires(d) && ch.get(d) == 0 {
                return Err(Error::DeadOutput(format!("{d:?} head")));
            }
        }
        Ok(())
    }

    pub fn total_paths(&self) -> usize {
        self.blocks.iter().map(|b| b.paths.len()).sum()
    }
}

/// Removes every path that is not on a route from an available input to a
/// required head, iterating forward and backward reachability to a fixpoint.
pub fn prune_dependencies(spec: &NetworkSpec) -> Result<NetworkSpec> {
    let mut spec = spec.clone();
    loop {
        let before = spec.clone();
        let ch = spec.input.channels()?;
        let (mut real, mut complex) = (ch.real > 0, ch.complex > 0);
        for block in &mut spec.blocks {
            block.paths.retain(|k, _| match k.input() {
                Domain::Real => real,
                Domain::Complex => complex,
            });
            real = block.produces(Domain::Real);
            complex = block.produces(Domain::Complex);
        }
        let (mut need_real, mut need_complex) = (spec.head.real, spec.head.complex);
        for block in spec.blocks.iter_mut().rev() {
            block.paths.retain(|k, _| match k.output() {
                Domain::Real => need_real,
                Domain::Complex => need_complex,
            });
            need_real = block.uses(Domain::Real);
            need_complex = block.uses(Domain::Complex);
        }
        let input_conversion_needed = match spec.input.conversion {
            Some(ConversionSpec::C2R { .. }) => need_real,
            Some(ConversionSpec::R2C { .. }) => need_complex,
            None => true,
        };
        if !input_conversion_needed {
            spec.input.conversion = None;
        }
        if spec == before {
            break;
        }
    }
    if let Some(b) = spec.blocks.iter().position(|b| b.paths.is_empty()) {
        let which = if spec.head.real { "Real head" } else { "Complex head" };
        return Err(Error::DeadOutput(format!("{which} (block {b} lost all paths)")));
    }
    let mut ch = spec.input.channels()?;
    for block in &spec.blocks {
        ch = block.output_channels()?;
    }
    for d in [Domain::Real, Domain::Complex] {
        if spec.head.requires(d) && ch.get(d) == 0 {
            return Err(Error::DeadOutput(format!("{d:?} head")));
        }
    }
    Ok(spec)
}

/// How [`adapt_io`] handles paths whose input domain the data lacks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IoStrategy {
    /// Derive the missing domain from the present one.
    #[default]
    Convert,
    /// Drop the ports that cannot be fed.
    Remove,
}

/// Default conversions used to derive a missing input domain.
pub const INPUT_C2R: C2R = C2R::Cartesian;
pub const INPUT_R2C: R2C = R2C::Cartesian;

/// Fits the network to the available input and required output domains.
pub fn adapt_io(
    spec: &NetworkSpec,
    input: IoDomain,
    output: IoDomain,
    strategy: IoStrategy,
) -> Result<NetworkSpec> {
    let mut spec = spec.clone();
    spec.head.real = output.has(Domain::Real);
    spec.head.complex = output.has(Domain::Complex);
    let first_uses = |d: Domain| spec.blocks.first().is_some_and(|b| b.uses(d));
    let wants_real = first_uses(Domain::Real) || (spec.blocks.is_empty() && spec.head.real);
    let wants_complex = first_uses(Domain::Complex) || (spec.blocks.is_empty() && spec.head.complex);
    spec.input.conversion = None;
    match input {
        IoDomain::Real => {
            spec.input.complex_channels = 0;
            if wants_complex && strategy == IoStrategy::Convert {
                spec.input.conversion = Some(ConversionSpec::r2c(INPUT_R2C));
                if !spec.input.real_channels.is_multiple_of(INPUT_R2C.in_arity()) {
                    spec.input.conversion = Some(ConversionSpec::r2c(R2C::Real));
                }
            }
        }
        IoDomain::Complex => {
            spec.input.real_channels = 0;
            if wants_real && strategy == IoStrategy::Convert {
                spec.input.conversion = Some(ConversionSpec::c2r(INPUT_C2R));
            }
        }
        IoDomain::Both => {}
    }
    if let Some(first) = spec.blocks.first_mut() {
        let ch = spec.input.channels()?;
        for (&kind, p) in first.paths.iter_mut() {
            let cin = ch.get(kind.input());
            if cin > 0 && cin % p.conv.n != 0 {
                p.conv.n = 1;
            }
        }
    }
    prune_dependencies(&spec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathModule {
    pub kind: PathKind,
    pub conv: Conv1d,
    pub activation: Activation,
    pub norm: Option<Bamn>,
    pub dropout: Option<Dropout>,
    pub conversion: Option<ConversionSpec>,
}

impl PathModule {
    fn forward<'t>(&self, s: &Session<'t>, x: Var<'t>, pool: Option<usize>) -> Result<Var<'t>> {
        let mut y = self.activation.apply(self.conv.forward(s, x)?)?;
        if let Some(k) = pool {
            y = y.avg_pool(k)?;
        }
        if let Some(n) = &self.norm {
            y = n.forward(s, y)?;
        }
        if let Some(d) = &self.dropout {
            y = d.forward(s, y)?;
        }
        match &self.conversion {
            Some(c) => c.apply(y),
            None => Ok(y),
        }
    }
}

impl Module for PathModule {
    fn params(&self) -> Vec<&Param> {
        self.conv.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.conv.params_mut()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub paths: Vec<PathModule>,
    pub pool: Option<usize>,
}

impl Block {
    pub fn build(init: &mut Init, spec: &BlockSpec, input: Channels) -> Result<Block> {
        let mut paths = Vec::with_capacity(spec.paths.len());
        for (&kind, p) in &spec.paths {
            let mut cfg = ConvConfig::new(input.get(kind.input()), p.conv.c, p.conv.k);
            cfg.groups = p.conv.n;
            let conv = Conv1d::new(init, kind.input(), cfg)?;
            let norm = p.optional.norm.then(|| Bamn::new(p.conv.c));
            let dropout = p.optional.dropout.map(Dropout::new).transpose()?;
            paths.push(PathModule {
                kind,
                conv,
                activation: p.activation.clone(),
                norm,
                dropout,
                conversion: p.conversion_spec(kind)?,
            });
        }
        Ok(Block {
            paths,
            pool: spec.pool,
        })
    }

    pub fn path(&self, kind: PathKind) -> Option<&PathModule> {
        self.paths.iter().find(|p| p.kind == kind)
    }

    /// Runs every path and concatenates like-domain results along channels.
    pub fn forward<'t>(
        &self,
        s: &Session<'t>,
        real: Option<Var<'t>>,
        complex: Option<Var<'t>>,
    ) -> Result<(Option<Var<'t>>, Option<Var<'t>>)> {
        if self.paths.is_empty() {
            return Err(Error::invalid("block has no paths"));
        }
        let mut outs: BTreeMap<PathKind, Var<'t>> = BTreeMap::new();
        for p in &self.paths {
            let x = match p.kind.input() {
                Domain::Real => real,
                Domain::Complex => complex,
            }
            .ok_or_else(|| Error::dtype(format!("{} path has no {:?} input", p.kind, p.kind.input())))?;
            outs.insert(p.kind, p.forward(s, x, self.pool)?);
        }
        let gather = |kinds: [PathKind; 2]| -> Result<Option<Var<'t>>> {
            let parts: Vec<Var<'t>> = kinds.iter().filter_map(|k| outs.get(k).copied()).collect();
            if parts.is_empty() {
                Ok(None)
            } else {
                Var::concat(&parts, 1).map(Some)
            }
        };
        Ok((
            gather([PathKind::RR, PathKind::CR])?,
            gather([PathKind::CC, PathKind::RC])?,
        ))
    }
}

impl Module for Block {
    fn params(&self) -> Vec<&Param> {
        self.paths.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.paths.params_mut()
    }
}

/// A built, trainable series network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub spec: NetworkSpec,
    pub blocks: Vec<Block>,
    pub real_head: Option<Linear>,
    pub complex_head: Option<Linear>,
}

impl Network {
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Network> {
        spec.validate()?;
        let mut init = Init::new(seed);
        let mut ch = spec.input.channels()?;
        let mut blocks = Vec::with_capacity(spec.blocks.len());
        for b in &spec.blocks {
            blocks.push(Block::build(&mut init, b, ch)?);
            ch = b.output_channels()?;
        }
        let outputs = spec.head.outputs;
        let real_head = if spec.head.real {
            Some(Linear::new(&mut init, Domain::Real, ch.real, outputs, true)?)
        } else {
            None
        };
        let complex_head = if spec.head.complex {
            Some(Linear::new(&mut init, Domain::Complex, ch.complex, outputs, true)?)
        } else {
            None
        };
        Ok(Network {
            spec: spec.clone(),
            blocks,
            real_head,
            complex_head,
        })
    }

    /// Maps `[batch, channels, length]` inputs to real outputs `[batch, outputs]`.
    pub fn forward<'t>(
        &self,
        s: &Session<'t>,
        real: Option<Var<'t>>,
        complex: Option<Var<'t>>,
    ) -> Result<Var<'t>> {
        let (mut real, mut complex) = (real, complex);
        if real.is_some_and(|r| r.is_complex()) || complex.is_some_and(|c| !c.is_complex()) {
            return Err(Error::dtype("network inputs are swapped or mistyped"));
        }
        match self.spec.input.conversion {
            Some(c @ ConversionSpec::C2R { .. }) => {
                let z = complex.ok_or_else(|| Error::invalid("network expects complex input"))?;
                real = Some(c.apply(z)?);
            }
            Some(c @ ConversionSpec::R2C { .. }) => {
                let x = real.ok_or_else(|| Error::invalid("network expects real input"))?;
                complex = Some(c.apply(x)?);
            }
            None => {}
        }
        for block in &self.blocks {
            (real, complex) = block.forward(s, real, complex)?;
        }
        let head = |lin: &Linear, x: Option<Var<'t>>| -> Result<Var<'t>> {
            let x = x.ok_or_else(|| Error::DeadOutput(format!("{:?} head", lin.domain)))?;
            let pooled = x.mean_axes(&[2])?;
            let shape = pooled.shape();
            lin.forward(s, pooled.reshape(&shape[..2])?)
        };
        let mut out: Option<Var<'t>> = None;
        if let Some(lin) = &self.real_head {
            out = Some(head(lin, real)?);
        }
        if let Some(lin) = &self.complex_head {
            let z = head(lin, complex)?;
            let y = ConversionSpec::c2r(self.spec.head.complex_conversion).apply(z)?;
            out = Some(match out {
                Some(o) => o.add(y)?,
                None => y,
            });
        }
        out.ok_or_else(|| Error::Config("network has no head".into()))
    }

    pub fn count_parameters(&self) -> ParamCount {
        count_parameters(self)
    }

    /// Applies [`prune_dependencies`] while keeping the weights of every
    /// surviving layer.
    pub fn prune(&self) -> Result<Network> {
        let spec = prune_dependencies(&self.spec)?;
        let mut blocks = Vec::with_capacity(spec.blocks.len());
        for (old, new) in self.blocks.iter().zip(&spec.blocks) {
            blocks.push(Block {
                paths: old
                    .paths
                    .iter()
                    .filter(|p| new.paths.contains_key(&p.kind))
                    .cloned()
                    .collect(),
                pool: old.pool,
            });
        }
        let net = Network {
            real_head: if spec.head.real { self.real_head.clone() } else { None },
            complex_head: if spec.head.complex { self.complex_head.clone() } else { None },
            spec,
            blocks,
        };
        let fresh = Network::build(&net.spec, 0)?;
        let shapes = |n: &Network| -> Vec<Vec<usize>> {
            n.params().iter().map(|p| p.value.shape().to_vec()).collect()
        };
        if shapes(&fresh) != shapes(&net) {
            return Err(Error::Config(
                "pruning changed the shape of a live layer; the network was not consistent".into(),
            ));
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Network> {
        let text = std::fs::read_to_string(path)?;
        let net: Network = serde_json::from_str(&text)?;
        net.spec.validate()?;
        Ok(net)
    }
}

impl Module for Network {
    fn params(&self) -> Vec<&Param> {
        let mut out = self.blocks.params();
        out.extend(self.real_head.iter().flat_map(|h| h.params()));
        out.extend(self.complex_head.iter().flat_map(|h| h.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.blocks.params_mut();
        out.extend(self.real_head.iter_mut().flat_map(|h| h.params_mut()));
        out.extend(self.complex_head.iter_mut().flat_map(|h| h.params_mut()));
        out
    }
}
