//! Second-order spatial jets and the batched parameter tape.
//!
//! A [`SpatialJet`] holds the value, gradient and upper-triangular Hessian of a
//! scalar field with respect to the input coordinates (at most two). Jets are
//! generic over [`Scalar`] so the same arithmetic serves plain evaluation,
//! tangent propagation and second-order directional derivatives.

mod scalar;
pub mod tape;

pub use scalar::{Dual, Scalar, Taylor2};
pub use tape::{hessian_vector, reverse_sweep, LayerSpec, Planes, Tape};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 2;

/// One coordinate of a jet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Component {
    Value,
    Grad(usize),
    /// Mixed second derivative, stored with `i <= j`.
    Hess(usize, usize),
}

impl Component {
    pub fn hess(i: usize, j: usize) -> Self {
        if i <= j {
            Component::Hess(i, j)
        } else {
            Component::Hess(j, i)
        }
    }

    /// Bit position inside a [`DerivMask`].
    pub fn bit(self) -> usize {
        match self {
            Component::Value => 0,
            Component::Grad(i) => 1 + i,
            Component::Hess(i, j) => 3 + hess_slot(i, j),
        }
    }

    pub fn from_bit(bit: usize) -> Self {
        match bit {
            0 => Component::Value,
            1 | 2 => Component::Grad(bit - 1),
            3 => Component::Hess(0, 0),
            4 => Component::Hess(0, 1),
            5 => Component::Hess(1, 1),
            _ => panic!("component bit {bit} out of range"),
        }
    }

    pub fn order(self) -> usize {
        match self {
            Component::Value => 0,
            Component::Grad(_) => 1,
            Component::Hess(..) => 2,
        }
    }

    /// Largest coordinate index used.
    fn max_coord(self) -> Option<usize> {
        match self {
            Component::Value => None,
            Component::Grad(i) => Some(i),
            Component::Hess(i, j) => Some(i.max(j)),
        }
    }

    /// Short label such as `u`, `u_0`, `u_01`.
    pub fn label(self) -> String {
        match self {
            Component::Value => "u".into(),
            Component::Grad(i) => format!("u_{i}"),
            Component::Hess(i, j) => format!("u_{i}{j}"),
        }
    }
}

fn hess_slot(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    match (a, b) {
        (0, 0) => 0,
        (0, 1) => 1,
        (1, 1) => 2,
        _ => panic!("hessian index ({i},{j}) out of range"),
    }
}

/// Set of jet components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct DerivMask(u8);

impl DerivMask {
    pub const EMPTY: DerivMask = DerivMask(0);

    pub fn new(components: &[Component]) -> Self {
        let mut m = 0u8;
        for c in components {
            m |= 1 << c.bit();
        }
        DerivMask(m)
    }

    /// Every component up to second order in `dim` coordinates.
    pub fn full(dim: usize) -> Self {
        let mut comps = vec![Component::Value];
        for i in 0..dim {
            comps.push(Component::Grad(i));
            for j in i..dim {
                comps.push(Component::Hess(i, j));
            }
        }
        Self::new(&comps)
    }

    /// Builds a mask from derivative multi-indices (counts per coordinate).
    pub fn from_multi_indices(indices: &[Vec<usize>]) -> Result<Self> {
        let mut comps = Vec::new();
        for idx in indices {
            let order: usize = idx.iter().sum();
            if order > 2 {
                return Err(Error::OrderTooHigh(order));
            }
            if idx.len() > MAX_DIM {
                return Err(Error::CoordinateOutOfRange { index: idx.len() - 1, dim: MAX_DIM });
            }
            let mut coords = Vec::new();
            for (axis, &n) in idx.iter().enumerate() {
                coords.extend(std::iter::repeat_n(axis, n));
            }
            comps.push(match coords.as_slice() {
                [] => Component::Value,
                [i] => Component::Grad(*i),
                [i, j] => Component::hess(*i, *j),
                _ => unreachable!(),
            });
        }
        Ok(Self::new(&comps))
    }

    pub fn contains(self, c: Component) -> bool {
        self.0 & (1 << c.bit()) != 0
    }

    pub fn union(self, other: Self) -> Self {
        DerivMask(self.0 | other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Components in canonical order (value, gradient, Hessian).
    pub fn components(self) -> Vec<Component> {
        (0..6).filter(|b| self.0 & (1 << b) != 0).map(Component::from_bit).collect()
    }

    /// Smallest superset that can be propagated through compositions: every
    /// Hessian entry needs its gradient entries, and everything needs the value.
    pub fn closure(self) -> Self {
        let mut comps = vec![Component::Value];
        for c in self.components() {
            match c {
                Component::Value => {}
                Component::Grad(i) => comps.push(Component::Grad(i)),
                Component::Hess(i, j) => {
                    comps.push(Component::Grad(i));
                    comps.push(Component::Grad(j));
                    comps.push(c);
                }
            }
        }
        self.union(Self::new(&comps))
    }

    pub fn max_order(self) -> usize {
        self.components().into_iter().map(Component::order).max().unwrap_or(0)
    }

    /// Checks that every component fits in `dim` coordinates.
    pub fn check_dim(self, dim: usize) -> Result<()> {
        for c in self.components() {
            if let Some(i) = c.max_coord() {
                if i >= dim {
                    return Err(Error::CoordinateOutOfRange { index: i, dim });
                }
            }
        }
        Ok(())
    }

    pub fn bits(self) -> u8 {
        self.0
    }
}

/// Value, gradient and Hessian of a scalar field at one point.
///
/// Components outside `mask` are exactly zero and are never read.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialJet<S = f64> {
    dim: usize,
    mask: DerivMask,
    pub value: S,
    pub grad: [S; MAX_DIM],
    /// Upper triangle `(0,0), (0,1), (1,1)`.
    pub hess: [S; 3],
}

impl<S: Scalar> SpatialJet<S> {
    pub fn zero(dim: usize, mask: DerivMask) -> Self {
        debug_assert!(dim <= MAX_DIM);
        Self { dim, mask, value: S::zero(), grad: [S::zero(); MAX_DIM], hess: [S::zero(); 3] }
    }

    pub fn constant(dim: usize, mask: DerivMask, value: S) -> Self {
        let mut j = Self::zero(dim, mask);
        j.value = value;
        j
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mask(&self) -> DerivMask {
        self.mask
    }

    pub fn get(&self, c: Component) -> S {
        match c {
            Component::Value => self.value,
            Component::Grad(i) => self.grad[i],
            Component::Hess(i, j) => self.hess[hess_slot(i, j)],
        }
    }

    pub fn set(&mut self, c: Component, v: S) {
        match c {
            Component::Value => self.value = v,
            Component::Grad(i) => self.grad[i] = v,
            Component::Hess(i, j) => self.hess[hess_slot(i, j)] = v,
        }
    }

    /// Full symmetric Hessian entry.
    pub fn hess_at(&self, i: usize, j: usize) -> S {
        self.hess[hess_slot(i, j)]
    }

    /// Keeps only the components of `mask`; the result carries `mask.closure()`.
    pub fn restrict(&self, mask: DerivMask) -> Self {
        let closed = mask.closure();
        let mut out = Self::zero(self.dim, closed);
        for c in closed.components() {
            out.set(c, self.get(c));
        }
        out
    }

    fn grads(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.dim).filter(move |&i| self.mask.contains(Component::Grad(i)))
    }

    fn hess_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let dim = self.dim;
        (0..dim)
            .flat_map(move |i| (i..dim).map(move |j| (i, j)))
            .filter(move |&(i, j)| self.mask.contains(Component::Hess(i, j)))
    }
}

/// Jet of the coordinate `index` at `point`: value `point[index]`, unit gradient,
/// zero Hessian.
pub fn seed_input(point: &[f64], index: usize) -> Result<SpatialJet<f64>> {
    let dim = point.len();
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::UnsupportedDimension(dim));
    }
    if index >= dim {
        return Err(Error::CoordinateOutOfRange { index, dim });
    }
    let mut j = SpatialJet::zero(dim, DerivMask::full(dim));
    j.value = point[index];
    j.grad[index] = 1.0;
    Ok(j)
}

/// `sum_i weights[i] * jets[i] + bias`.
pub fn jet_affine<S: Scalar>(jets: &[SpatialJet<S>], weights: &[S], bias: S) -> Result<SpatialJet<S>> {
    if jets.len() != weights.len() {
        return Err(Error::LengthMismatch { expected: jets.len(), actual: weights.len() });
    }
    let Some(first) = jets.first() else {
        return Err(Error::LengthMismatch { expected: 1, actual: 0 });
    };
    let dim = first.dim;
    let mut mask = DerivMask::EMPTY;
    for j in jets {
        if j.dim != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: j.dim });
        }
        mask = mask.union(j.mask);
    }
    let mut out = SpatialJet::zero(dim, mask);
    out.value = bias;
    for (j, &w) in jets.iter().zip(weights) {
        out.value += w * j.value;
        for i in 0..MAX_DIM {
            out.grad[i] += w * j.grad[i];
        }
        for s in 0..3 {
            out.hess[s] += w * j.hess[s];
        }
    }
    Ok(out)
}

/// Applies a scalar function with derivatives `f0, f1, f2` at the value.
fn compose<S: Scalar>(x: &SpatialJet<S>, f0: S, f1: S, f2: S) -> SpatialJet<S> {
    let mut out = SpatialJet::zero(x.dim, x.mask);
    out.value = f0;
    for i in x.grads() {
        out.grad[i] = f1 * x.grad[i];
    }
    for (i, j) in x.hess_pairs() {
        let s = hess_slot(i, j);
        out.hess[s] = f2 * x.grad[i] * x.grad[j] + f1 * x.hess[s];
    }
    out
}

/// Derivatives `tanh, tanh', tanh'', tanh'''` at `z`.
fn tanh_derivs<S: Scalar>(z: S) -> [S; 4] {
    let t = z.tanh();
    let d1 = S::one() - t * t;
    let d2 = t * d1 * -2.0;
    let d3 = (d1 * d1 + t * d2) * -2.0;
    [t, d1, d2, d3]
}

pub fn jet_tanh<S: Scalar>(x: &SpatialJet<S>) -> SpatialJet<S> {
    let [t, d1, d2, _] = tanh_derivs(x.value);
    compose(x, t, d1, d2)
}

pub fn jet_sin<S: Scalar>(x: &SpatialJet<S>) -> SpatialJet<S> {
    let (s, c) = (x.value.sin(), x.value.cos());
    compose(x, s, c, -s)
}

pub fn jet_cos<S: Scalar>(x: &SpatialJet<S>) -> SpatialJet<S> {
    let (s, c) = (x.value.sin(), x.value.cos());
    compose(x, c, -s, -c)
}

/// Product rule up to second order.
pub fn jet_mul<S: Scalar>(a: &SpatialJet<S>, b: &SpatialJet<S>) -> Result<SpatialJet<S>> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch { expected: a.dim, actual: b.dim });
    }
    let mask = a.mask.union(b.mask).closure();
    let mut out = SpatialJet::zero(a.dim, mask);
    out.value = a.value * b.value;
    for i in out.grads().collect::<Vec<_>>() {
        out.grad[i] = a.grad[i] * b.value + a.value * b.grad[i];
    }
    for (i, j) in out.hess_pairs().collect::<Vec<_>>() {
        let s = hess_slot(i, j);
        out.hess[s] = a.hess[s] * b.value
            + a.grad[i] * b.grad[j]
            + a.grad[j] * b.grad[i]
            + a.value * b.hess[s];
    }
    Ok(out)
}

pub fn jet_add<S: Scalar>(a: &SpatialJet<S>, b: &SpatialJet<S>) -> Result<SpatialJet<S>> {
    jet_affine(&[*a, *b], &[S::one(), S::one()], S::zero())
}

pub fn jet_scale<S: Scalar>(a: &SpatialJet<S>, c: f64) -> SpatialJet<S> {
    let mut out = *a;
    out.value = a.value * c;
    for g in out.grad.iter_mut() {
        *g = *g * c;
    }
    for h in out.hess.iter_mut() {
        *h = *h * c;
    }
    out
}

/// Pullback of `jet_tanh`: given the input jet `z` and the adjoint of the
/// output jet, returns the adjoint of `z`.
pub fn jet_tanh_adjoint<S: Scalar>(z: &SpatialJet<S>, adj: &SpatialJet<S>) -> SpatialJet<S> {
    let [_, d1, d2, d3] = tanh_derivs(z.value);
    let mut out = SpatialJet::zero(z.dim, z.mask);
    let mut av = adj.value * d1;
    for i in z.grads() {
        av += adj.grad[i] * d2 * z.grad[i];
        out.grad[i] = adj.grad[i] * d1;
    }
    for (i, j) in z.hess_pairs() {
        let s = hess_slot(i, j);
        let a = adj.hess[s];
        av += a * (d3 * z.grad[i] * z.grad[j] + d2 * z.hess[s]);
        out.hess[s] = a * d1;
        let a2 = a * d2;
        out.grad[i] += a2 * z.grad[j];
        out.grad[j] += a2 * z.grad[i];
    }
    out.value = av;
    out
}
