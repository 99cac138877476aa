//! Residual specifications, collocation sets and losses.
//!
//! A residual is `R(Phi(x)) - f(x)` where `Phi` collects the jet components
//! named by the spec's mask, in canonical component order. Coordinates are
//! `(x)` in one dimension and `(x, t)` in two.

mod burgers_exact;
mod problem;

pub use burgers_exact::ColeHopf;
pub use problem::{LossParts, PinnProblem, ResidualSelector};

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jets::{jet_add, jet_affine, jet_cos, jet_mul, jet_scale, jet_sin, seed_input, Component, DerivMask, Scalar, SpatialJet};
use crate::net::{Architecture, Points};

/// The shipped equations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeKind {
    /// `u_xx = (16/pi^2) sin(4x/pi)` on `[0, 1]`.
    PoissonToyLinear,
    /// `u u_x = (16/pi^2) sin(4x/pi)` on `[0, 1]`.
    BurgersToyNonlinear,
    /// `u_xx = f` with `u = sin(2 pi x) + 0.1 sin(50 pi x)` on `[0, 1]`.
    PoissonHighfreq,
    /// `u_t + beta u_x = 0` on `[0, 2 pi] x [0, 1]`, periodic in `x`.
    Convection,
    /// `u_tt + c^2 u_xx = 0` on `[0, 1]^2`.
    Wave,
    /// `u_t + u u_x - nu u_xx = 0` on `[-1, 1] x [0, 1]`.
    Burgers,
}

impl PdeKind {
    pub const ALL: [PdeKind; 6] = [
        PdeKind::PoissonToyLinear,
        PdeKind::BurgersToyNonlinear,
        PdeKind::PoissonHighfreq,
        PdeKind::Convection,
        PdeKind::Wave,
        PdeKind::Burgers,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PdeKind::PoissonToyLinear => "poisson_toy_linear",
            PdeKind::BurgersToyNonlinear => "burgers_toy_nonlinear",
            PdeKind::PoissonHighfreq => "poisson_highfreq",
            PdeKind::Convection => "convection",
            PdeKind::Wave => "wave",
            PdeKind::Burgers => "burgers",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name).ok_or_else(|| Error::UnknownPde(name.into()))
    }

    fn defaults(self) -> Vec<(&'static str, f64)> {
        match self {
            PdeKind::Convection => vec![("beta", 30.0)],
            PdeKind::Wave => vec![("c", 2.0)],
            PdeKind::Burgers => vec![("nu", 0.01 / PI)],
            _ => vec![],
        }
    }

    /// Default collocation sizes `(n_r, n_b)`. The 2D benchmarks keep more
    /// rows than the 1761 parameters of the default network; with fewer, LM
    /// interpolates the points without solving the PDE.
    pub fn default_sizes(self) -> (usize, usize) {
        match self {
            PdeKind::PoissonToyLinear | PdeKind::BurgersToyNonlinear => (32, 2),
            PdeKind::PoissonHighfreq => (1000, 2),
            PdeKind::Convection => (2000, 400),
            PdeKind::Wave => (2000, 600),
            PdeKind::Burgers => (10_000, 3000),
        }
    }
}

impl fmt::Display for PdeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Residual operator, forcing, domain and boundary data of one equation.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualSpec {
    pub kind: PdeKind,
    pub dim: usize,
    /// Per-axis `(lo, hi)`.
    pub domain: Vec<(f64, f64)>,
    /// Components entering `R`.
    pub mask: DerivMask,
    pub params: BTreeMap<String, f64>,
    burgers: Option<ColeHopf>,
}

/// Builds a spec, overriding the default parameters with `overrides`.
pub fn make_spec(name: &str, overrides: &[(&str, f64)]) -> Result<ResidualSpec> {
    let kind = PdeKind::from_name(name)?;
    let mut params: BTreeMap<String, f64> = kind.defaults().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    for &(k, v) in overrides {
        if !params.contains_key(k) {
            return Err(Error::UnknownParameter { pde: name.into(), name: k.into() });
        }
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidParameter { name: k.into(), value: v, reason: "must be positive and finite".into() });
        }
        params.insert(k.to_string(), v);
    }
    use Component::*;
    let (dim, domain, comps): (usize, Vec<(f64, f64)>, Vec<Component>) = match kind {
        PdeKind::PoissonToyLinear | PdeKind::PoissonHighfreq => (1, vec![(0.0, 1.0)], vec![Hess(0, 0)]),
        PdeKind::BurgersToyNonlinear => (1, vec![(0.0, 1.0)], vec![Value, Grad(0)]),
        PdeKind::Convection => (2, vec![(0.0, 2.0 * PI), (0.0, 1.0)], vec![Grad(0), Grad(1)]),
        PdeKind::Wave => (2, vec![(0.0, 1.0), (0.0, 1.0)], vec![Hess(0, 0), Hess(1, 1)]),
        PdeKind::Burgers => (2, vec![(-1.0, 1.0), (0.0, 1.0)], vec![Value, Grad(0), Grad(1), Hess(0, 0)]),
    };
    let burgers = (kind == PdeKind::Burgers).then(|| ColeHopf::new(params["nu"]));
    Ok(ResidualSpec { kind, dim, domain, mask: DerivMask::new(&comps), params, burgers })
}

impl ResidualSpec {
    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn param(&self, name: &str) -> f64 {
        self.params[name]
    }

    /// The `Phi` components, in the order used by `R` and its derivatives.
    pub fn phi_components(&self) -> Vec<Component> {
        self.mask.components()
    }

    pub fn phi_len(&self) -> usize {
        self.mask.len()
    }

    /// Whether `R` is linear in `Phi`.
    pub fn is_linear(&self) -> bool {
        !matches!(self.kind, PdeKind::BurgersToyNonlinear | PdeKind::Burgers)
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        const SLACK: f64 = 1e-12;
        p.len() == self.dim && p.iter().zip(&self.domain).all(|(&x, &(lo, hi))| x >= lo - SLACK && x <= hi + SLACK)
    }

    /// `Phi` extracted from a jet.
    pub fn phi<S: Scalar>(&self, jet: &SpatialJet<S>) -> Vec<S> {
        self.phi_components().into_iter().map(|c| jet.get(c)).collect()
    }

    /// `R(Phi)` without the forcing.
    pub fn operator<S: Scalar>(&self, z: &[S]) -> S {
        match self.kind {
            PdeKind::PoissonToyLinear | PdeKind::PoissonHighfreq => z[0],
            PdeKind::BurgersToyNonlinear => z[0] * z[1],
            PdeKind::Convection => z[1] + z[0] * self.param("beta"),
            PdeKind::Wave => {
                let c = self.param("c");
                z[1] + z[0] * (c * c)
            }
            PdeKind::Burgers => z[2] + z[0] * z[1] - z[3] * self.param("nu"),
        }
    }

    /// Gradient of `R` with respect to `Phi`.
    pub fn operator_gradient<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        let c = S::from_f64;
        match self.kind {
            PdeKind::PoissonToyLinear | PdeKind::PoissonHighfreq => vec![c(1.0)],
            PdeKind::BurgersToyNonlinear => vec![z[1], z[0]],
            PdeKind::Convection => vec![c(self.param("beta")), c(1.0)],
            PdeKind::Wave => {
                let w = self.param("c");
                vec![c(w * w), c(1.0)]
            }
            PdeKind::Burgers => vec![z[1], z[0], c(1.0), c(-self.param("nu"))],
        }
    }

    /// Hessian of `R` with respect to `Phi`, row-major `k x k`.
    pub fn operator_hessian(&self, _z: &[f64]) -> Vec<f64> {
        let k = self.phi_len();
        let mut h = vec![0.0; k * k];
        if matches!(self.kind, PdeKind::BurgersToyNonlinear | PdeKind::Burgers) {
            // u * u_x is the only nonlinearity; both occupy slots 0 and 1.
            h[1] = 1.0;
            h[k] = 1.0;
        }
        h
    }

    /// Forcing `f(x)`.
    pub fn forcing(&self, p: &[f64]) -> f64 {
        match self.kind {
            PdeKind::PoissonToyLinear | PdeKind::BurgersToyNonlinear => 16.0 / (PI * PI) * (4.0 * p[0] / PI).sin(),
            PdeKind::PoissonHighfreq => {
                let x = p[0];
                -4.0 * PI * PI * (2.0 * PI * x).sin() - 250.0 * PI * PI * (50.0 * PI * x).sin()
            }
            _ => 0.0,
        }
    }

    /// `R(Phi(jet)) - f(point)`.
    pub fn residual(&self, jet: &SpatialJet<f64>, point: &[f64]) -> Result<f64> {
        self.check_jet(jet, point)?;
        if !self.contains(point) {
            log::warn!("{}: residual evaluated outside the domain at {point:?}", self.name());
        }
        Ok(self.operator(&self.phi(jet)) - self.forcing(point))
    }

    /// Gradient of the residual with respect to `Phi`.
    pub fn residual_phi_gradient(&self, jet: &SpatialJet<f64>) -> Result<Vec<f64>> {
        self.check_jet(jet, &vec![0.0; jet.dim()])?;
        Ok(self.operator_gradient(&self.phi(jet)))
    }

    fn check_jet(&self, jet: &SpatialJet<f64>, point: &[f64]) -> Result<()> {
        if jet.dim() != self.dim || point.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: jet.dim().max(point.len()) });
        }
        for c in self.phi_components() {
            if !jet.mask().contains(c) {
                return Err(Error::MaskMismatch(format!("{} needs {c:?}, which the jet does not carry", self.name())));
            }
        }
        Ok(())
    }

    pub fn has_exact_solution(&self) -> bool {
        true
    }

    /// Closed-form (or quadrature) solution.
    pub fn exact(&self, p: &[f64]) -> Result<f64> {
        Ok(self.exact_jet(p)?.value)
    }

    /// Jet of the reference solution at `p`. Burgers carries value, first
    /// derivatives and `u_xx` only.
    pub fn exact_jet(&self, p: &[f64]) -> Result<SpatialJet<f64>> {
        if p.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: p.len() });
        }
        let x = seed_input(p, 0)?;
        let sin_of = |jets: &[SpatialJet<f64>], w: &[f64], amp: f64| -> Result<SpatialJet<f64>> {
            Ok(jet_scale(&jet_sin(&jet_affine(jets, w, 0.0)?), amp))
        };
        Ok(match self.kind {
            PdeKind::PoissonToyLinear => sin_of(&[x], &[4.0 / PI], -1.0)?,
            PdeKind::BurgersToyNonlinear => sin_of(&[x], &[2.0 / PI], 4.0 / PI.sqrt())?,
            PdeKind::PoissonHighfreq => jet_add(&sin_of(&[x], &[2.0 * PI], 1.0)?, &sin_of(&[x], &[50.0 * PI], 0.1)?)?,
            PdeKind::Convection => {
                let t = seed_input(p, 1)?;
                sin_of(&[x, t], &[1.0, -self.param("beta")], 1.0)?
            }
            PdeKind::Wave => {
                let t = seed_input(p, 1)?;
                let c = self.param("c");
                let a = jet_mul(&sin_of(&[x], &[PI], 1.0)?, &jet_cos(&jet_affine(&[t], &[c * PI], 0.0)?))?;
                let b = jet_mul(&sin_of(&[x], &[4.0 * PI], 0.5)?, &jet_cos(&jet_affine(&[t], &[4.0 * c * PI], 0.0)?))?;
                jet_add(&a, &b)?
            }
            PdeKind::Burgers => {
                let ch = self.burgers.as_ref().expect("burgers spec carries its solver");
                let s = ch.eval(p[0], p[1]);
                let mask = DerivMask::new(&[Component::Value, Component::Grad(0), Component::Grad(1), Component::Hess(0, 0)]);
                let mut j = SpatialJet::zero(2, mask);
                j.value = s.u;
                j.grad = [s.u_x, s.u_t];
                j.hess[0] = s.u_xx;
                j
            }
        })
    }

    /// Largest `|R(Phi(u*)) - f|` over `points`.
    pub fn solution_residual(&self, points: &Points) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for p in points.iter() {
            let j = self.exact_jet(p)?;
            worst = worst.max((self.operator(&self.phi(&j)) - self.forcing(p)).abs());
        }
        Ok(worst)
    }

    /// Boundary rows with `n` primary rows (sampled with `strategy`).
    fn boundary(&self, n: usize, strategy: Strategy, rng: &mut impl Rng) -> BoundaryData {
        let mut b = BoundaryData::new(self.dim);
        let (x0, x1) = self.domain[0];
        match self.kind {
            PdeKind::PoissonToyLinear | PdeKind::BurgersToyNonlinear | PdeKind::PoissonHighfreq => {
                for i in 0..n {
                    let x = if i % 2 == 0 { x0 } else { x1 };
                    b.push_single(&[x], Component::Value, self.exact(&[x]).unwrap_or(0.0), BoundaryKind::Dirichlet);
                }
            }
            PdeKind::Convection => {
                let n_ic = n.div_ceil(2);
                for x in sample_interval(n_ic, x0, x1, strategy, rng) {
                    b.push_single(&[x, 0.0], Component::Value, x.sin(), BoundaryKind::Initial);
                }
                for t in sample_interval(n - n_ic, 0.0, 1.0, strategy, rng) {
                    b.push_pair(&[x0, t], &[x1, t], BoundaryKind::Periodic);
                }
            }
            PdeKind::Wave | PdeKind::Burgers => {
                let n_ic = n.div_ceil(2);
                let n_left = (n - n_ic).div_ceil(2);
                let ic = sample_interval(n_ic, x0, x1, strategy, rng);
                for &x in &ic {
                    let g = if self.kind == PdeKind::Burgers {
                        -(PI * x).sin()
                    } else {
                        (PI * x).sin() + 0.5 * (4.0 * PI * x).sin()
                    };
                    b.push_single(&[x, 0.0], Component::Value, g, BoundaryKind::Initial);
                }
                for t in sample_interval(n_left, 0.0, 1.0, strategy, rng) {
                    b.push_single(&[x0, t], Component::Value, 0.0, BoundaryKind::Dirichlet);
                }
                for t in sample_interval(n - n_ic - n_left, 0.0, 1.0, strategy, rng) {
                    b.push_single(&[x1, t], Component::Value, 0.0, BoundaryKind::Dirichlet);
                }
                if self.kind == PdeKind::Wave {
                    // Zero initial velocity: extra rows sharing the primary weight.
                    for &x in &ic {
                        b.push_single(&[x, 0.0], Component::Grad(1), 0.0, BoundaryKind::Velocity);
                    }
                }
            }
        }
        b.weight_count = n;
        b
    }

    /// Recomputes boundary targets for this spec (used when a parameter such
    /// as `beta` changes but the points stay).
    pub fn retarget(&self, data: &CollocationSet) -> Result<CollocationSet> {
        let mut out = data.clone();
        for (row, kind) in data.boundary.kinds.iter().enumerate() {
            let term = data.boundary.first_term(row);
            let p = data.boundary.points.row(term);
            out.boundary.targets[row] = match kind {
                BoundaryKind::Dirichlet | BoundaryKind::Initial => match self.kind {
                    PdeKind::Burgers if *kind == BoundaryKind::Initial => -(PI * p[0]).sin(),
                    PdeKind::Burgers => 0.0,
                    _ => self.exact(p)?,
                },
                BoundaryKind::Periodic | BoundaryKind::Velocity => 0.0,
            };
        }
        Ok(out)
    }
}

/// Where collocation points come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    LatinHypercube,
    UniformGrid,
    UniformRandom,
}

impl Strategy {
    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "latin_hypercube" => Ok(Strategy::LatinHypercube),
            "uniform_grid" => Ok(Strategy::UniformGrid),
            "uniform_random" => Ok(Strategy::UniformRandom),
            _ => Err(Error::InvalidArgument(format!("unknown sampling strategy `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Dirichlet,
    Initial,
    /// Initial time derivative.
    Velocity,
    /// Difference of the two ends of a periodic axis.
    Periodic,
}

impl BoundaryKind {
    fn name(self) -> &'static str {
        match self {
            BoundaryKind::Dirichlet => "dirichlet",
            BoundaryKind::Initial => "initial",
            BoundaryKind::Velocity => "velocity",
            BoundaryKind::Periodic => "periodic",
        }
    }

    fn from_name(s: &str) -> Result<Self> {
        [BoundaryKind::Dirichlet, BoundaryKind::Initial, BoundaryKind::Velocity, BoundaryKind::Periodic]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown boundary kind `{s}`")))
    }
}

/// Boundary rows. Row `r` is `sum_terms coef * Phi_component(point) - target`;
/// each term owns one point.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryData {
    pub points: Points,
    pub term_component: Vec<Component>,
    pub term_coef: Vec<f64>,
    pub term_row: Vec<usize>,
    pub targets: Vec<f64>,
    pub kinds: Vec<BoundaryKind>,
    /// Count used for the `1/N_b` weight.
    pub weight_count: usize,
}

impl BoundaryData {
    pub fn new(dim: usize) -> Self {
        Self {
            points: Points::empty(dim),
            term_component: Vec::new(),
            term_coef: Vec::new(),
            term_row: Vec::new(),
            targets: Vec::new(),
            kinds: Vec::new(),
            weight_count: 0,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn n_terms(&self) -> usize {
        self.term_row.len()
    }

    /// Whether row `r` is exactly term `r` with coefficient one.
    pub fn is_simple(&self) -> bool {
        self.n_terms() == self.n_rows() && self.term_row.iter().enumerate().all(|(i, &r)| i == r)
    }

    fn first_term(&self, row: usize) -> usize {
        self.term_row.iter().position(|&r| r == row).expect("row has a term")
    }

    pub fn push_single(&mut self, p: &[f64], c: Component, target: f64, kind: BoundaryKind) {
        let row = self.targets.len();
        self.points.push(p);
        self.term_component.push(c);
        self.term_coef.push(1.0);
        self.term_row.push(row);
        self.targets.push(target);
        self.kinds.push(kind);
    }

    pub fn push_pair(&mut self, a: &[f64], b: &[f64], kind: BoundaryKind) {
        let row = self.targets.len();
        for (p, coef) in [(a, 1.0), (b, -1.0)] {
            self.points.push(p);
            self.term_component.push(Component::Value);
            self.term_coef.push(coef);
            self.term_row.push(row);
        }
        self.targets.push(0.0);
        self.kinds.push(kind);
    }

    /// Components any term reads.
    pub fn mask(&self) -> DerivMask {
        DerivMask::new(&self.term_component)
    }
}

/// Residual and boundary points of one training problem.
#[derive(Clone, Debug, PartialEq)]
pub struct CollocationSet {
    pub residual: Points,
    pub boundary: BoundaryData,
}

impl CollocationSet {
    pub fn n_residual(&self) -> usize {
        self.residual.len()
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary.n_rows()
    }

    pub fn n_rows(&self) -> usize {
        self.n_residual() + self.n_boundary()
    }

    /// Writes `x[,t]` rows.
    pub fn write_residual_csv(&self, w: impl Write) -> Result<()> {
        let mut w = std::io::BufWriter::new(w);
        writeln!(w, "{}", axis_names(self.residual.dim()).join(","))?;
        for p in self.residual.iter() {
            writeln!(w, "{}", p.iter().map(|v| fmt17(*v)).collect::<Vec<_>>().join(","))?;
        }
        Ok(())
    }

    /// Writes one line per boundary term: `row,x[,t],component,coef,target,kind`.
    pub fn write_boundary_csv(&self, w: impl Write) -> Result<()> {
        let b = &self.boundary;
        let mut w = std::io::BufWriter::new(w);
        writeln!(w, "row,{},component,coef,target,kind", axis_names(b.points.dim()).join(","))?;
        for t in 0..b.n_terms() {
            let r = b.term_row[t];
            let coords: Vec<String> = b.points.row(t).iter().map(|v| fmt17(*v)).collect();
            writeln!(
                w,
                "{r},{},{},{},{},{}",
                coords.join(","),
                b.term_component[t].label(),
                fmt17(b.term_coef[t]),
                fmt17(b.targets[r]),
                b.kinds[r].name()
            )?;
        }
        Ok(())
    }

    /// Reads the two CSVs written above.
    pub fn read_csv(dim: usize, residual: impl Read, boundary: impl Read, weight_count: usize) -> Result<Self> {
        let mut text = String::new();
        let mut res = Points::empty(dim);
        std::io::BufReader::new(residual).read_to_string(&mut text)?;
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let v = parse_floats(line.split(','))?;
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: v.len() });
            }
            res.push(&v);
        }
        text.clear();
        std::io::BufReader::new(boundary).read_to_string(&mut text)?;
        let mut b = BoundaryData::new(dim);
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != dim + 5 {
                return Err(Error::InvalidArgument(format!("malformed boundary line `{line}`")));
            }
            let row: usize = f[0].parse().map_err(|_| Error::InvalidArgument(format!("bad row in `{line}`")))?;
            let p = parse_floats(f[1..=dim].iter().copied())?;
            let comp = parse_component(f[dim + 1])?;
            let nums = parse_floats([f[dim + 2], f[dim + 3]].into_iter())?;
            let kind = BoundaryKind::from_name(f[dim + 4])?;
            if row == b.targets.len() {
                b.targets.push(nums[1]);
                b.kinds.push(kind);
            } else if row + 1 != b.targets.len() {
                return Err(Error::InvalidArgument(format!("boundary rows out of order at `{line}`")));
            }
            b.points.push(&p);
            b.term_component.push(comp);
            b.term_coef.push(nums[0]);
            b.term_row.push(row);
        }
        b.weight_count = weight_count;
        Ok(Self { residual: res, boundary: b })
    }
}

fn parse_floats<'a>(it: impl Iterator<Item = &'a str>) -> Result<Vec<f64>> {
    it.map(|s| s.trim().parse::<f64>().map_err(|_| Error::InvalidArgument(format!("not a number: `{s}`")))).collect()
}

fn parse_component(s: &str) -> Result<Component> {
    (0..6)
        .map(Component::from_bit)
        .find(|c| c.label() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown component `{s}`")))
}

fn axis_names(dim: usize) -> Vec<&'static str> {
    ["x", "t"][..dim].to_vec()
}

/// Scientific notation with 17 significant digits (round-trips exactly).
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// `n` values in `[lo, hi]`.
fn sample_interval(n: usize, lo: f64, hi: f64, strategy: Strategy, rng: &mut impl Rng) -> Vec<f64> {
    let w = hi - lo;
    match strategy {
        Strategy::UniformGrid => (0..n).map(|i| lo + w * (i as f64 + 0.5) / n as f64).collect(),
        Strategy::UniformRandom => (0..n).map(|_| lo + w * rng.random::<f64>()).collect(),
        Strategy::LatinHypercube => {
            let mut v: Vec<f64> = (0..n).map(|i| lo + w * (i as f64 + rng.random::<f64>()) / n as f64).collect();
            v.shuffle(rng);
            v
        }
    }
}

/// `n` points in the box `domain`.
pub fn sample_box(domain: &[(f64, f64)], n: usize, strategy: Strategy, rng: &mut impl Rng) -> Points {
    let dim = domain.len();
    let mut coords = vec![0.0; n * dim];
    match strategy {
        Strategy::UniformGrid if dim == 2 => {
            // Cell centers of an nx x nt grid, filled t-major, truncated to n.
            let nx = (n as f64).sqrt().ceil() as usize;
            let nt = n.div_ceil(nx.max(1));
            let (xs, ts) = (
                sample_interval(nx, domain[0].0, domain[0].1, strategy, rng),
                sample_interval(nt, domain[1].0, domain[1].1, strategy, rng),
            );
            for i in 0..n {
                coords[2 * i] = xs[i % nx];
                coords[2 * i + 1] = ts[i / nx];
            }
        }
        _ => {
            for (a, &(lo, hi)) in domain.iter().enumerate() {
                for (i, v) in sample_interval(n, lo, hi, strategy, rng).into_iter().enumerate() {
                    coords[i * dim + a] = v;
                }
            }
        }
    }
    Points::new(dim, coords).expect("dimension checked by the spec")
}

/// Samples `n_r` residual points and `n_b` primary boundary rows.
pub fn sample(spec: &ResidualSpec, n_r: usize, n_b: usize, strategy: Strategy, rng: &mut impl Rng) -> Result<CollocationSet> {
    if n_r == 0 && n_b == 0 {
        return Err(Error::InvalidArgument("empty collocation set".into()));
    }
    let residual = sample_box(&spec.domain, n_r, strategy, rng);
    let boundary = spec.boundary(n_b, strategy, rng);
    Ok(CollocationSet { residual, boundary })
}

/// Evaluation grid with reference values.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalGrid {
    pub points: Points,
    pub exact: Vec<f64>,
}

impl EvalGrid {
    /// `nx` (and `nt`) equispaced points including the endpoints.
    pub fn new(spec: &ResidualSpec, nx: usize, nt: usize) -> Result<Self> {
        let lin = |n: usize, (lo, hi): (f64, f64)| -> Vec<f64> {
            (0..n).map(|i| if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect()
        };
        let mut points = Points::empty(spec.dim);
        if spec.dim == 1 {
            for x in lin(nx, spec.domain[0]) {
                points.push(&[x]);
            }
        } else {
            for t in lin(nt, spec.domain[1]) {
                for &x in &lin(nx, spec.domain[0]) {
                    points.push(&[x, t]);
                }
            }
        }
        let exact = points.iter().map(|p| spec.exact(p)).collect::<Result<_>>()?;
        Ok(Self { points, exact })
    }

    /// 1001 points in one dimension, 256 x 101 in two.
    pub fn standard(spec: &ResidualSpec) -> Result<Self> {
        if spec.dim == 1 {
            Self::new(spec, 1001, 1)
        } else {
            Self::new(spec, 256, 101)
        }
    }
}

/// Relative error of network predictions against reference values.
///
/// The default is `||u - u*|| / ||u*||`. With `pointwise` the sum of pointwise
/// relative errors is returned instead, skipping points where `|u*| < 1e-8`.
pub fn relative_l2(arch: &Architecture, theta: &[f64], grid: &EvalGrid, pointwise: bool) -> Result<f64> {
    let pred = arch.values(theta, &grid.points)?;
    Ok(relative_error(&pred, &grid.exact, pointwise))
}

pub fn relative_error(pred: &[f64], exact: &[f64], pointwise: bool) -> f64 {
    if pointwise {
        pred.iter()
            .zip(exact)
            .filter(|(_, &u)| u.abs() >= 1e-8)
            .map(|(&p, &u)| (p - u).abs() / u.abs())
            .sum()
    } else {
        let num: f64 = pred.iter().zip(exact).map(|(p, u)| (p - u) * (p - u)).sum();
        let den: f64 = exact.iter().map(|u| u * u).sum();
        (num / den).sqrt()
    }
}
