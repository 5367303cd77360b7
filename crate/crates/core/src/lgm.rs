//! Latent Gaussian model: effect blocks, prior precisions and hyperpriors.
//!
//! The latent vector is laid out as
//! `[intercept | factor blocks in term order | omega (nodes) | phi (nodes)]`.
//! The regional effect of node j is
//! `delta_j = tau_reg^{-1/2} (sqrt(1 - rho) omega_j + sqrt(rho) phi_j)`, so the
//! design coefficients on omega and phi depend on the hyperparameters while
//! omega has a fixed standard normal prior and phi a scaled ICAR prior.
//!
//! The ICAR prior on phi is stored as the proper matrix `s (D - A) + 1 1^T`
//! together with the linear constraint `sum(phi) = 0`. Conditioning the proper
//! Gaussian on the constraint gives exactly the constrained intrinsic model,
//! because the added rank-one term vanishes on the constraint subspace.

use std::f64::consts::{LN_2, PI};
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use nalgebra_sparse::{CooMatrix, CscMatrix};

use crate::error::{Error, Result};
use crate::schema::{CategoricalSchema, CellIndex, SpatialGraph};

/// Penalized-complexity prior on a standard deviation: `Pr(sigma > u) = alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcPrior {
    pub u: f64,
    pub alpha: f64,
}

impl Default for PcPrior {
    fn default() -> Self {
        PcPrior { u: 1.0, alpha: 0.1 }
    }
}

impl PcPrior {
    pub fn new(u: f64, alpha: f64) -> Result<Self> {
        if !(u > 0.0 && u.is_finite()) || !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!("PC prior needs u > 0 and 0 < alpha < 1, got ({u}, {alpha})")));
        }
        Ok(PcPrior { u, alpha })
    }

    /// Exponential rate on sigma.
    pub fn rate(&self) -> f64 {
        -self.alpha.ln() / self.u
    }

    /// Log density of sigma.
    pub fn logdensity(&self, sigma: f64) -> Result<f64> {
        if !(sigma > 0.0) {
            return Err(Error::invalid(format!("standard deviation must be positive, got {sigma}")));
        }
        let r = self.rate();
        Ok(r.ln() - r * sigma)
    }

    /// Log density of theta = log(precision), with sigma = exp(-theta / 2).
    pub fn log_precision_density(&self, theta: f64) -> f64 {
        let r = self.rate();
        r.ln() - r * (-0.5 * theta).exp() - 0.5 * theta - LN_2
    }

    fn log_precision_grad(&self, theta: f64) -> f64 {
        0.5 * self.rate() * (-0.5 * theta).exp() - 0.5
    }
}

/// Prior on a precision parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrecisionPrior {
    Pc(PcPrior),
    Fixed(f64),
}

impl Default for PrecisionPrior {
    fn default() -> Self {
        PrecisionPrior::Pc(PcPrior::default())
    }
}

/// Prior on the BYM2 mixing proportion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixingPrior {
    /// PC prior with `Pr(rho < u) = alpha`.
    Pc { u: f64, alpha: f64 },
    Uniform,
    Fixed(f64),
}

impl Default for MixingPrior {
    fn default() -> Self {
        MixingPrior::Pc { u: 0.5, alpha: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    /// Independent effects sharing the common precision tau_pr.
    Iid,
    /// Independent effects with their own precision.
    IidOwn,
    /// Stationary AR(1) over the ordered levels.
    Ar1,
}

impl Structure {
    pub fn tag(self) -> &'static str {
        match self {
            Structure::Iid => "iid",
            Structure::IidOwn => "iid_own",
            Structure::Ar1 => "ar1",
        }
    }
}

impl std::str::FromStr for Structure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(Structure::Iid),
            "iid_own" => Ok(Structure::IidOwn),
            "ar1" => Ok(Structure::Ar1),
            other => Err(Error::Unknown {
                kind: "structure",
                name: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub factor: String,
    pub structure: Structure,
}

/// The three model variants compared in the model-selection study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    /// AR(1) age and education, BYM2 region field.
    I,
    /// Independent age and education effects, BYM2 region field.
    II,
    /// Independent age and education effects, no spatial field.
    III,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::I, Variant::II, Variant::III];

    pub fn label(self) -> &'static str {
        match self {
            Variant::I => "I",
            Variant::II => "II",
            Variant::III => "III",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "I" | "1" => Ok(Variant::I),
            "II" | "2" => Ok(Variant::II),
            "III" | "3" => Ok(Variant::III),
            other => Err(Error::Unknown {
                kind: "model variant",
                name: other.to_string(),
            }),
        }
    }
}

/// Which effect blocks enter the linear predictor and their priors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub event: String,
    pub label: String,
    pub intercept: bool,
    pub terms: Vec<Term>,
    pub bym2: bool,
    /// tau_pr, shared by the intercept and every `iid` block.
    pub shared_precision: PrecisionPrior,
    /// Marginal precision of `iid_own` and `ar1` blocks.
    pub own_precision: PrecisionPrior,
    /// Precision of the normal prior on log((1 + rho) / (1 - rho)).
    pub rho_precision: f64,
    pub region_precision: PrecisionPrior,
    pub mixing: MixingPrior,
}

impl ModelSpec {
    /// Preset for one of the three variants on a schema with ordinal factors.
    /// Ordinal factors get AR(1) effects in variant I and `iid_own` otherwise.
    pub fn variant(schema: &CategoricalSchema, variant: Variant, event: &str) -> Self {
        let terms = schema
            .factors
            .iter()
            .map(|f| Term {
                factor: f.name.clone(),
                structure: match (f.ordinal, variant) {
                    (true, Variant::I) => Structure::Ar1,
                    (true, _) => Structure::IidOwn,
                    (false, _) => Structure::Iid,
                },
            })
            .collect();
        ModelSpec {
            event: event.to_string(),
            label: variant.label().to_string(),
            intercept: true,
            terms,
            bym2: schema.spatial.is_some() && variant != Variant::III,
            shared_precision: PrecisionPrior::default(),
            own_precision: PrecisionPrior::default(),
            rho_precision: 0.15,
            region_precision: PrecisionPrior::default(),
            mixing: MixingPrior::default(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text, &path.display().to_string())
    }

    /// Parses the model text format (see `docs/formats.md`).
    pub fn parse_str(text: &str, origin: &str) -> Result<Self> {
        let mut spec = ModelSpec {
            event: String::new(),
            label: String::new(),
            intercept: true,
            terms: Vec::new(),
            bym2: false,
            shared_precision: PrecisionPrior::default(),
            own_precision: PrecisionPrior::default(),
            rho_precision: 0.15,
            region_precision: PrecisionPrior::default(),
            mixing: MixingPrior::default(),
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| Error::parse(origin, i + 1, m);
            let tok: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number `{s}`")));
            match tok.as_slice() {
                ["event", name] => spec.event = name.to_string(),
                ["label", name] => spec.label = name.to_string(),
                ["intercept", "on"] => spec.intercept = true,
                ["intercept", "off"] => spec.intercept = false,
                ["term", factor, structure] => spec.terms.push(Term {
                    factor: factor.to_string(),
                    structure: structure.parse()?,
                }),
                ["spatial", "bym2"] => spec.bym2 = true,
                ["spatial", "none"] => spec.bym2 = false,
                ["precision", which, rest @ ..] => {
                    let prior = match rest {
                        ["pc", u, a] => PrecisionPrior::Pc(PcPrior::new(num(u)?, num(a)?)?),
                        ["fixed", t] => {
                            let t = num(t)?;
                            if !(t > 0.0) {
                                return Err(err(format!("fixed precision must be positive, got {t}")));
                            }
                            PrecisionPrior::Fixed(t)
                        }
                        _ => return Err(err("expected `pc <u> <alpha>` or `fixed <tau>`".into())),
                    };
                    match *which {
                        "shared" => spec.shared_precision = prior,
                        "own" => spec.own_precision = prior,
                        "region" => spec.region_precision = prior,
                        other => return Err(err(format!("unknown precision group `{other}`"))),
                    }
                }
                ["rho_precision", p] => spec.rho_precision = num(p)?,
                ["mixing", "pc", u, a] => {
                    let (u, a) = (num(u)?, num(a)?);
                    if !(u > 0.0 && u < 1.0 && a > 0.0 && a < 1.0) {
                        return Err(err("mixing PC prior needs 0 < u, alpha < 1".into()));
                    }
                    spec.mixing = MixingPrior::Pc { u, alpha: a };
                }
                ["mixing", "uniform"] => spec.mixing = MixingPrior::Uniform,
                ["mixing", "fixed", r] => {
                    let r = num(r)?;
                    if !(r >= 0.0 && r <= 1.0) {
                        return Err(err(format!("mixing proportion must be in [0, 1], got {r}")));
                    }
                    spec.mixing = MixingPrior::Fixed(r);
                }
                _ => return Err(err(format!("unrecognized line `{line}`"))),
            }
        }
        if spec.event.is_empty() {
            return Err(Error::parse(origin, 1, "missing `event` line"));
        }
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let prec = |p: &PrecisionPrior| match p {
            PrecisionPrior::Pc(pc) => format!("pc {} {}", pc.u, pc.alpha),
            PrecisionPrior::Fixed(t) => format!("fixed {t}"),
        };
        let mut out = format!("event {}\n", self.event);
        if !self.label.is_empty() {
            out += &format!("label {}\n", self.label);
        }
        out += &format!("intercept {}\n", if self.intercept { "on" } else { "off" });
        for t in &self.terms {
            out += &format!("term {} {}\n", t.factor, t.structure.tag());
        }
        out += &format!("spatial {}\n", if self.bym2 { "bym2" } else { "none" });
        out += &format!("precision shared {}\n", prec(&self.shared_precision));
        out += &format!("precision own {}\n", prec(&self.own_precision));
        out += &format!("precision region {}\n", prec(&self.region_precision));
        out += &format!("rho_precision {}\n", self.rho_precision);
        out += &match self.mixing {
            MixingPrior::Pc { u, alpha } => format!("mixing pc {u} {alpha}\n"),
            MixingPrior::Uniform => "mixing uniform\n".to_string(),
            MixingPrior::Fixed(r) => format!("mixing fixed {r}\n"),
        };
        out
    }
}

/// Tridiagonal precision of a stationary AR(1) with marginal precision `tau_m`,
/// so that the covariance is `rho^{|k-l|} / tau_m`.
pub fn ar1_precision(n: usize, rho: f64, tau_m: f64) -> Result<CscMatrix<f64>> {
    if n == 0 {
        return Err(Error::invalid("AR(1) block needs at least one level"));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::invalid(format!("AR(1) correlation must satisfy |rho| < 1, got {rho}")));
    }
    if !(tau_m > 0.0) {
        return Err(Error::invalid(format!("AR(1) precision must be positive, got {tau_m}")));
    }
    let mut coo = CooMatrix::new(n, n);
    for (r, c, v) in ar1_entries(n, rho, tau_m) {
        coo.push(r, c, v);
    }
    Ok(CscMatrix::from(&coo))
}

fn ar1_entries(n: usize, rho: f64, tau_m: f64) -> Vec<(usize, usize, f64)> {
    let k = tau_m / (1.0 - rho * rho);
    let mut out = Vec::with_capacity(3 * n);
    for i in 0..n {
        let interior = i > 0 && i + 1 < n;
        let d = if n == 1 {
            tau_m
        } else if interior {
            k * (1.0 + rho * rho)
        } else {
            k
        };
        out.push((i, i, d));
        if i + 1 < n {
            out.push((i, i + 1, -k * rho));
            out.push((i + 1, i, -k * rho));
        }
    }
    out
}

/// Unscaled ICAR structure matrix D - A.
pub fn icar_structure(graph: &SpatialGraph) -> CscMatrix<f64> {
    let n = graph.len();
    let mut coo = CooMatrix::new(n, n);
    for i in 0..n {
        coo.push(i, i, graph.degree(i) as f64);
    }
    for &(a, b) in &graph.edges {
        coo.push(a, b, -1.0);
        coo.push(b, a, -1.0);
    }
    CscMatrix::from(&coo)
}

/// Scaled ICAR structure and the spectrum of its generalized inverse.
#[derive(Debug, Clone)]
pub struct Bym2Structure {
    /// `s (D - A)`, scaled so the geometric mean of the constrained marginal
    /// variances is one.
    pub scaled: DMatrix<f64>,
    pub scale: f64,
    /// Eigenvalues of the generalized inverse of `scaled`, zero on the null space.
    pub inverse_spectrum: Vec<f64>,
}

impl Bym2Structure {
    pub fn new(graph: &SpatialGraph) -> Result<Self> {
        if !graph.is_connected() {
            return Err(Error::Disconnected("BYM2 needs a connected graph".into()));
        }
        let r = DMatrix::from(&icar_structure(graph));
        let n = r.nrows();
        let eig = SymmetricEigen::new(r.clone());
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let tol = 1e-10 * max.max(1.0);
        let mut pinv = DMatrix::zeros(n, n);
        for (i, &ev) in eig.eigenvalues.iter().enumerate() {
            if ev > tol {
                let v = eig.eigenvectors.column(i);
                pinv += (v * v.transpose()) / ev;
            }
        }
        let scale = if n == 1 {
            1.0
        } else {
            ((0..n).map(|i| pinv[(i, i)].ln()).sum::<f64>() / n as f64).exp()
        };
        let inverse_spectrum = eig
            .eigenvalues
            .iter()
            .map(|&ev| if ev > tol { 1.0 / (scale * ev) } else { 0.0 })
            .collect();
        Ok(Bym2Structure {
            scaled: r * scale,
            scale,
            inverse_spectrum,
        })
    }
}

/// PC prior on the BYM2 mixing proportion, built on the distance
/// `d(rho) = sqrt(2 KLD(rho))` from the pure iid base model.
#[derive(Debug, Clone)]
pub struct MixingPc {
    c: Vec<f64>,
    rate: f64,
}

impl MixingPc {
    pub fn new(bym2: &Bym2Structure, u: f64, alpha: f64) -> Self {
        let c: Vec<f64> = bym2.inverse_spectrum.iter().map(|g| g - 1.0).collect();
        let mut pc = MixingPc { c, rate: 1.0 };
        pc.rate = -(1.0 - alpha).ln() / pc.distance(u);
        pc
    }

    fn kld(&self, rho: f64) -> f64 {
        0.5 * self
            .c
            .iter()
            .map(|&c| {
                let x = rho * c;
                if x.abs() < 1e-4 {
                    x * x / 2.0 - x * x * x / 3.0 + x * x * x * x / 4.0
                } else {
                    x - x.ln_1p()
                }
            })
            .sum::<f64>()
    }

    fn kld_d1(&self, rho: f64) -> f64 {
        0.5 * self.c.iter().map(|&c| c * c * rho / (1.0 + rho * c)).sum::<f64>()
    }

    fn kld_d2(&self, rho: f64) -> f64 {
        0.5 * self.c.iter().map(|&c| c * c / (1.0 + rho * c).powi(2)).sum::<f64>()
    }

    pub fn distance(&self, rho: f64) -> f64 {
        (2.0 * self.kld(rho)).max(0.0).sqrt()
    }

    /// Returns (d, d', d'').
    fn derivs(&self, rho: f64) -> (f64, f64, f64) {
        let a = 0.5 * self.c.iter().map(|c| c * c).sum::<f64>();
        let b = self.c.iter().map(|c| c * c * c).sum::<f64>() / 3.0;
        if rho < 1e-4 {
            // Series around rho = 0: d = rho sqrt(a - b rho) + O(rho^3).
            let s = (a - b * rho).sqrt();
            let d = rho * s;
            let d1 = s - b * rho / (2.0 * s);
            let d2 = -3.0 * b / (2.0 * a.sqrt());
            return (d, d1, d2);
        }
        let d = self.distance(rho);
        let k1 = self.kld_d1(rho);
        let k2 = self.kld_d2(rho);
        (d, k1 / d, k2 / d - k1 * k1 / (d * d * d))
    }

    /// Log density of rho on (0, 1).
    pub fn log_density(&self, rho: f64) -> f64 {
        if !(rho > 0.0 && rho < 1.0) {
            return f64::NEG_INFINITY;
        }
        let (d, d1, _) = self.derivs(rho);
        self.rate.ln() - self.rate * d + d1.ln()
    }

    /// `Pr(rho < u)` implied by the prior.
    pub fn cdf(&self, rho: f64) -> f64 {
        1.0 - (-self.rate * self.distance(rho)).exp()
    }

    fn log_density_grad(&self, rho: f64) -> f64 {
        let (_, d1, d2) = self.derivs(rho);
        -self.rate * d1 + d2 / d1
    }
}

/// One hyperparameter on its internal (unconstrained) scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HyperKind {
    /// log tau_pr.
    SharedLogPrecision,
    /// log marginal precision of a term block.
    BlockLogPrecision(usize),
    /// log((1 + rho) / (1 - rho)) of an AR(1) term block.
    Ar1Rho(usize),
    /// log tau_reg.
    RegionLogPrecision,
    /// logit rho_reg.
    MixingLogit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Intercept,
    Term(usize),
    Omega,
    Phi,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentBlock {
    pub name: String,
    pub kind: BlockKind,
    pub offset: usize,
    pub len: usize,
}

/// Hyperparameter vector on internal scales, ordered as [`LatentModel::hyper_kinds`].
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams(pub Vec<f64>);

/// Natural-scale hyperparameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperValues {
    pub shared_precision: f64,
    pub block_precision: Vec<f64>,
    pub block_rho: Vec<f64>,
    pub region_precision: f64,
    pub mixing: f64,
}

/// Sparse incidence of one cell: indicator positions plus the spatial node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DesignRow {
    pub indicators: Vec<usize>,
    /// Node index into the spatial graph when the model has a BYM2 field.
    pub node: Option<usize>,
}

/// A [`ModelSpec`] resolved against a schema.
#[derive(Debug, Clone)]
pub struct LatentModel {
    pub spec: ModelSpec,
    blocks: Vec<LatentBlock>,
    term_factor: Vec<usize>,
    term_structure: Vec<Structure>,
    hyper: Vec<HyperKind>,
    rows: Vec<DesignRow>,
    bym2: Option<Bym2Structure>,
    mixing_pc: Option<MixingPc>,
    n_latent: usize,
    omega: Option<usize>,
    phi: Option<usize>,
}

impl LatentModel {
    pub fn new(schema: &CategoricalSchema, spec: ModelSpec) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut term_factor = Vec::new();
        let mut term_structure = Vec::new();
        if spec.intercept {
            blocks.push(LatentBlock {
                name: "intercept".into(),
                kind: BlockKind::Intercept,
                offset,
                len: 1,
            });
            offset += 1;
        }
        for (t, term) in spec.terms.iter().enumerate() {
            let fidx = schema.factor_index(&term.factor).ok_or_else(|| Error::Unknown {
                kind: "factor",
                name: term.factor.clone(),
            })?;
            if term_factor.contains(&fidx) {
                return Err(Error::Duplicate {
                    kind: "term",
                    name: term.factor.clone(),
                });
            }
            let len = schema.factors[fidx].len();
            blocks.push(LatentBlock {
                name: term.factor.clone(),
                kind: BlockKind::Term(t),
                offset,
                len,
            });
            offset += len;
            term_factor.push(fidx);
            term_structure.push(term.structure);
        }
        let (mut omega, mut phi, mut bym2, mut mixing_pc) = (None, None, None, None);
        if spec.bym2 {
            let graph = schema
                .spatial
                .as_ref()
                .ok_or_else(|| Error::Schema("BYM2 term needs a spatial factor".into()))?;
            let structure = Bym2Structure::new(graph)?;
            let n = graph.len();
            blocks.push(LatentBlock {
                name: "omega".into(),
                kind: BlockKind::Omega,
                offset,
                len: n,
            });
            omega = Some(offset);
            offset += n;
            blocks.push(LatentBlock {
                name: "phi".into(),
                kind: BlockKind::Phi,
                offset,
                len: n,
            });
            phi = Some(offset);
            offset += n;
            if let MixingPrior::Pc { u, alpha } = spec.mixing {
                mixing_pc = Some(MixingPc::new(&structure, u, alpha));
            }
            bym2 = Some(structure);
        }
        if offset == 0 {
            return Err(Error::invalid("model has no latent effects"));
        }

        let mut hyper = Vec::new();
        let uses_shared = spec.intercept || term_structure.contains(&Structure::Iid);
        if uses_shared && matches!(spec.shared_precision, PrecisionPrior::Pc(_)) {
            hyper.push(HyperKind::SharedLogPrecision);
        }
        for (t, s) in term_structure.iter().enumerate() {
            if *s != Structure::Iid && matches!(spec.own_precision, PrecisionPrior::Pc(_)) {
                hyper.push(HyperKind::BlockLogPrecision(t));
            }
            if *s == Structure::Ar1 {
                hyper.push(HyperKind::Ar1Rho(t));
            }
        }
        if spec.bym2 {
            if matches!(spec.region_precision, PrecisionPrior::Pc(_)) {
                hyper.push(HyperKind::RegionLogPrecision);
            }
            if !matches!(spec.mixing, MixingPrior::Fixed(_)) {
                hyper.push(HyperKind::MixingLogit);
            }
        }

        let rows = schema
            .cells()
            .map(|cell| {
                let mut indicators = Vec::with_capacity(blocks.len());
                if spec.intercept {
                    indicators.push(0);
                }
                for (b, &f) in blocks.iter().filter(|b| matches!(b.kind, BlockKind::Term(_))).zip(&term_factor) {
                    indicators.push(b.offset + schema.cell_level(cell, f));
                }
                let node = if spec.bym2 { schema.spatial_node(cell) } else { None };
                DesignRow { indicators, node }
            })
            .collect();

        Ok(LatentModel {
            spec,
            blocks,
            term_factor,
            term_structure,
            hyper,
            rows,
            bym2,
            mixing_pc,
            n_latent: offset,
            omega,
            phi,
        })
    }

    pub fn n_latent(&self) -> usize {
        self.n_latent
    }

    pub fn n_hyper(&self) -> usize {
        self.hyper.len()
    }

    pub fn n_cells(&self) -> usize {
        self.rows.len()
    }

    pub fn blocks(&self) -> &[LatentBlock] {
        &self.blocks
    }

    pub fn hyper_kinds(&self) -> &[HyperKind] {
        &self.hyper
    }

    pub fn bym2(&self) -> Option<&Bym2Structure> {
        self.bym2.as_ref()
    }

    pub fn hyper_names(&self) -> Vec<String> {
        self.hyper
            .iter()
            .map(|h| match *h {
                HyperKind::SharedLogPrecision => "log_tau_pr".to_string(),
                HyperKind::BlockLogPrecision(t) => format!("log_tau_{}", self.spec.terms[t].factor),
                HyperKind::Ar1Rho(t) => format!("fisher_rho_{}", self.spec.terms[t].factor),
                HyperKind::RegionLogPrecision => "log_tau_reg".to_string(),
                HyperKind::MixingLogit => "logit_rho_reg".to_string(),
            })
            .collect()
    }

    /// Label of every latent coordinate, e.g. `age[31-40]` or `phi[Brest]`.
    pub fn latent_names(&self, schema: &CategoricalSchema) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_latent);
        for b in &self.blocks {
            match b.kind {
                BlockKind::Intercept => names.push("intercept".to_string()),
                BlockKind::Term(t) => {
                    let f = &schema.factors[self.term_factor[t]];
                    names.extend(f.levels.iter().map(|l| format!("{}[{}]", f.name, l)));
                }
                BlockKind::Omega | BlockKind::Phi => {
                    let g = schema.spatial.as_ref().expect("bym2 implies spatial");
                    names.extend(g.nodes.iter().map(|n| format!("{}[{}]", b.name, n)));
                }
            }
        }
        names
    }

    /// Starting point for the hyperparameter search.
    pub fn initial_hyper(&self) -> HyperParams {
        HyperParams(vec![0.0; self.hyper.len()])
    }

    pub fn design_row(&self, cell: CellIndex) -> &DesignRow {
        &self.rows[cell.0]
    }

    pub fn values(&self, lambda: &HyperParams) -> Result<HyperValues> {
        if lambda.0.len() != self.hyper.len() {
            return Err(Error::invalid(format!(
                "expected {} hyperparameters, got {}",
                self.hyper.len(),
                lambda.0.len()
            )));
        }
        let fixed = |p: &PrecisionPrior| match p {
            PrecisionPrior::Fixed(t) => *t,
            PrecisionPrior::Pc(_) => f64::NAN,
        };
        let nt = self.term_structure.len();
        let mut v = HyperValues {
            shared_precision: fixed(&self.spec.shared_precision),
            block_precision: vec![fixed(&self.spec.own_precision); nt],
            block_rho: vec![0.0; nt],
            region_precision: fixed(&self.spec.region_precision),
            mixing: match self.spec.mixing {
                MixingPrior::Fixed(r) => r,
                _ => f64::NAN,
            },
        };
        for (k, &x) in self.hyper.iter().zip(&lambda.0) {
            match *k {
                HyperKind::SharedLogPrecision => v.shared_precision = x.exp(),
                HyperKind::BlockLogPrecision(t) => v.block_precision[t] = x.exp(),
                HyperKind::Ar1Rho(t) => v.block_rho[t] = (0.5 * x).tanh(),
                HyperKind::RegionLogPrecision => v.region_precision = x.exp(),
                HyperKind::MixingLogit => v.mixing = sigmoid(x),
            }
        }
        Ok(v)
    }

    /// Design coefficients (on omega, on phi) for the BYM2 field.
    pub fn bym2_coefficients(&self, v: &HyperValues) -> (f64, f64) {
        let tau = v.region_precision;
        let rho = v.mixing;
        (((1.0 - rho) / tau).sqrt(), (rho / tau).sqrt())
    }

    /// Sparse design rows evaluated at `lambda`: one `(index, coefficient)` list per cell.
    pub fn design(&self, lambda: &HyperParams) -> Result<Design> {
        let v = self.values(lambda)?;
        let (a, b) = if self.bym2.is_some() {
            self.bym2_coefficients(&v)
        } else {
            (0.0, 0.0)
        };
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut e: Vec<(usize, f64)> = r.indicators.iter().map(|&i| (i, 1.0)).collect();
                if let (Some(node), Some(o), Some(p)) = (r.node, self.omega, self.phi) {
                    e.push((o + node, a));
                    e.push((p + node, b));
                }
                e
            })
            .collect();
        Ok(Design { rows })
    }

    /// Prior precision of the latent vector, with the proper ICAR completion
    /// on phi (see module docs).
    pub fn prior_precision(&self, lambda: &HyperParams) -> Result<CscMatrix<f64>> {
        let v = self.values(lambda)?;
        let mut coo = CooMatrix::new(self.n_latent, self.n_latent);
        for b in &self.blocks {
            match b.kind {
                BlockKind::Intercept => coo.push(b.offset, b.offset, v.shared_precision),
                BlockKind::Term(t) => match self.term_structure[t] {
                    Structure::Iid => {
                        for i in 0..b.len {
                            coo.push(b.offset + i, b.offset + i, v.shared_precision);
                        }
                    }
                    Structure::IidOwn => {
                        for i in 0..b.len {
                            coo.push(b.offset + i, b.offset + i, v.block_precision[t]);
                        }
                    }
                    Structure::Ar1 => {
                        if !(v.block_rho[t].abs() < 1.0) {
                            return Err(Error::invalid("AR(1) correlation on the boundary"));
                        }
                        for (r, c, x) in ar1_entries(b.len, v.block_rho[t], v.block_precision[t]) {
                            coo.push(b.offset + r, b.offset + c, x);
                        }
                    }
                },
                BlockKind::Omega => {
                    for i in 0..b.len {
                        coo.push(b.offset + i, b.offset + i, 1.0);
                    }
                }
                BlockKind::Phi => {
                    let s = &self.bym2.as_ref().expect("phi block implies bym2").scaled;
                    for r in 0..b.len {
                        for c in 0..b.len {
                            coo.push(b.offset + r, b.offset + c, s[(r, c)] + 1.0);
                        }
                    }
                }
            }
        }
        Ok(CscMatrix::from(&coo))
    }

    /// Linear constraints `C gamma = 0` (sum-to-zero on phi), one row each.
    pub fn constraints(&self) -> DMatrix<f64> {
        match (self.phi, &self.bym2) {
            (Some(p), Some(b)) => {
                let mut c = DMatrix::zeros(1, self.n_latent);
                for i in 0..b.scaled.nrows() {
                    c[(0, p + i)] = 1.0;
                }
                c
            }
            _ => DMatrix::zeros(0, self.n_latent),
        }
    }

    /// Log prior density of the internal hyperparameters, Jacobians included.
    pub fn hyper_logprior(&self, lambda: &HyperParams) -> f64 {
        if lambda.0.len() != self.hyper.len() || lambda.0.iter().any(|x| !x.is_finite()) {
            return f64::NEG_INFINITY;
        }
        self.hyper
            .iter()
            .zip(&lambda.0)
            .map(|(k, &x)| match *k {
                HyperKind::SharedLogPrecision => pc_of(&self.spec.shared_precision).log_precision_density(x),
                HyperKind::BlockLogPrecision(_) => pc_of(&self.spec.own_precision).log_precision_density(x),
                HyperKind::RegionLogPrecision => pc_of(&self.spec.region_precision).log_precision_density(x),
                HyperKind::Ar1Rho(_) => {
                    let p = self.spec.rho_precision;
                    0.5 * (p / (2.0 * PI)).ln() - 0.5 * p * x * x
                }
                HyperKind::MixingLogit => {
                    let rho = sigmoid(x);
                    let jac = log_sigmoid(x) + log_sigmoid(-x);
                    match &self.mixing_pc {
                        Some(pc) => pc.log_density(rho) + jac,
                        None => jac,
                    }
                }
            })
            .sum()
    }

    /// Analytic gradient of [`Self::hyper_logprior`].
    pub fn hyper_logprior_grad(&self, lambda: &HyperParams) -> Vec<f64> {
        self.hyper
            .iter()
            .zip(&lambda.0)
            .map(|(k, &x)| match *k {
                HyperKind::SharedLogPrecision => pc_of(&self.spec.shared_precision).log_precision_grad(x),
                HyperKind::BlockLogPrecision(_) => pc_of(&self.spec.own_precision).log_precision_grad(x),
                HyperKind::RegionLogPrecision => pc_of(&self.spec.region_precision).log_precision_grad(x),
                HyperKind::Ar1Rho(_) => -self.spec.rho_precision * x,
                HyperKind::MixingLogit => {
                    let rho = sigmoid(x);
                    let jac = 1.0 - 2.0 * rho;
                    match &self.mixing_pc {
                        Some(pc) => pc.log_density_grad(rho) * rho * (1.0 - rho) + jac,
                        None => jac,
                    }
                }
            })
            .collect()
    }
}

fn pc_of(p: &PrecisionPrior) -> PcPrior {
    match p {
        PrecisionPrior::Pc(pc) => *pc,
        PrecisionPrior::Fixed(_) => unreachable!("fixed precisions carry no hyperparameter"),
    }
}

/// Design evaluated at one hyperparameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl Design {
    pub fn eta(&self, cell: usize, gamma: &DVector<f64>) -> f64 {
        self.rows[cell].iter().map(|&(i, a)| a * gamma[i]).sum()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(sigmoid(x)) without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}
