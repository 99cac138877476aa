//! Batched recording of a feed-forward tanh network on spatial jets.
//!
//! Each tape node stores, for every jet component and every scalar plane, a
//! column-major `batch x width` matrix. Affine nodes are evaluated with GEMM,
//! tanh nodes elementwise. A batch of one point is the per-point tape; rows of
//! a larger batch never interact, so a batch is equivalent to one tape per
//! point.
//!
//! Parameters live in one flat vector. Layer `l` owns a row-major
//! `fan_out x fan_in` weight block and a bias block, and its pre-activation is
//! `scale * W a + b`.

use std::marker::PhantomData;

use faer::linalg::matmul::matmul;
use faer::{Accum, MatMut, MatRef, Par};

use super::{jet_tanh, jet_tanh_adjoint, Component, DerivMask, Scalar, SpatialJet};
use crate::error::{Error, Result};

/// Placement and scaling of one affine layer inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
    /// Multiplies the weight contribution (`1/sqrt(fan_in)` under NTK scaling).
    pub scale: f64,
    /// Whether tanh follows the affine map.
    pub activation: bool,
}

impl LayerSpec {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight_offset..self.weight_offset + self.fan_in * self.fan_out
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.bias_offset..self.bias_offset + self.fan_out
    }
}

/// Jet components of a batch, one column-major `batch x width` matrix per
/// (component, plane).
#[derive(Clone, Debug)]
pub struct Planes {
    comps: Vec<Component>,
    n_planes: usize,
    batch: usize,
    width: usize,
    data: Vec<Vec<f64>>,
}

impl Planes {
    pub fn zeros(mask: DerivMask, n_planes: usize, batch: usize, width: usize) -> Self {
        let comps = mask.components();
        let data = vec![vec![0.0; batch * width]; comps.len() * n_planes];
        Self { comps, n_planes, batch, width, data }
    }

    /// Packs plain jets, one row per point and one column per input channel.
    /// `jets[r][c]` is channel `c` of point `r`.
    pub fn from_jets(jets: &[Vec<SpatialJet<f64>>], mask: DerivMask, n_planes: usize) -> Self {
        let batch = jets.len();
        let width = jets.first().map_or(0, Vec::len);
        let mut p = Self::zeros(mask, n_planes, batch, width);
        for (r, row) in jets.iter().enumerate() {
            for (c, jet) in row.iter().enumerate() {
                for ci in 0..p.comps.len() {
                    let comp = p.comps[ci];
                    p.data[ci * n_planes][c * batch + r] = jet.get(comp);
                }
            }
        }
        p
    }

    pub fn components(&self) -> &[Component] {
        &self.comps
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_planes(&self) -> usize {
        self.n_planes
    }

    pub fn comp_index(&self, c: Component) -> Option<usize> {
        self.comps.iter().position(|&x| x == c)
    }

    pub fn plane(&self, ci: usize, k: usize) -> &[f64] {
        &self.data[ci * self.n_planes + k]
    }

    pub fn plane_mut(&mut self, ci: usize, k: usize) -> &mut [f64] {
        &mut self.data[ci * self.n_planes + k]
    }

    fn mat(&self, ci: usize, k: usize) -> MatRef<'_, f64> {
        MatRef::from_column_major_slice(self.plane(ci, k), self.batch, self.width)
    }

    fn mat_mut(&mut self, ci: usize, k: usize) -> MatMut<'_, f64> {
        let (b, w) = (self.batch, self.width);
        MatMut::from_column_major_slice_mut(self.plane_mut(ci, k), b, w)
    }

    /// Jet at (`row`, `col`).
    pub fn jet<S: Scalar>(&self, dim: usize, row: usize, col: usize) -> SpatialJet<S> {
        let mask = DerivMask::new(&self.comps);
        let mut j = SpatialJet::zero(dim, mask);
        let idx = col * self.batch + row;
        for (ci, &c) in self.comps.iter().enumerate() {
            let base = ci * self.n_planes;
            j.set(c, S::from_planes(|k| self.data[base + k][idx]));
        }
        j
    }

    pub fn set_jet<S: Scalar>(&mut self, row: usize, col: usize, jet: &SpatialJet<S>) {
        let idx = col * self.batch + row;
        for ci in 0..self.comps.len() {
            let v = jet.get(self.comps[ci]);
            let base = ci * self.n_planes;
            for k in 0..self.n_planes {
                self.data[base + k][idx] = v.plane(k);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    Input,
    Affine(usize),
    Tanh,
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    /// Index of the operand node (always the previous node for this network).
    operand: Option<usize>,
    out: Planes,
}

/// Recorded forward pass of a batch of points.
///
/// For `S = Dual` or `Taylor2` the parameters are `theta + h * direction`; the
/// second-order plane of the parameters is zero.
pub struct Tape<'a, S: Scalar = f64> {
    layers: &'a [LayerSpec],
    theta: &'a [f64],
    direction: Option<&'a [f64]>,
    dim: usize,
    nodes: Vec<Node>,
    _scalar: PhantomData<S>,
}

impl<'a, S: Scalar> Tape<'a, S> {
    /// Runs the network on `input` (already embedded). `input.n_planes()` must
    /// equal `S::PLANES`, and `direction` must be given whenever `S` carries a
    /// tangent plane.
    pub fn record(
        layers: &'a [LayerSpec],
        theta: &'a [f64],
        direction: Option<&'a [f64]>,
        dim: usize,
        input: Planes,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArchitecture("network has no layers".into()));
        }
        if input.n_planes != S::PLANES {
            return Err(Error::LengthMismatch { expected: S::PLANES, actual: input.n_planes });
        }
        if S::PLANES > 1 && direction.is_none() {
            return Err(Error::InvalidArchitecture("tangent planes need a direction".into()));
        }
        let p = layers.iter().map(|l| l.bias_range().end).max().unwrap_or(0);
        if theta.len() < p {
            return Err(Error::LengthMismatch { expected: p, actual: theta.len() });
        }
        if let Some(d) = direction {
            if d.len() != theta.len() {
                return Err(Error::LengthMismatch { expected: theta.len(), actual: d.len() });
            }
        }
        if input.width != layers[0].fan_in {
            return Err(Error::LengthMismatch { expected: layers[0].fan_in, actual: input.width });
        }
        let mut tape = Tape { layers, theta, direction, dim, nodes: Vec::new(), _scalar: PhantomData };
        tape.nodes.push(Node { op: Op::Input, operand: None, out: input });
        for (l, spec) in layers.iter().enumerate() {
            if spec.fan_out == 0 {
                return Err(Error::ZeroWidth(l));
            }
            let prev = tape.nodes.len() - 1;
            let z = tape.affine_forward(spec, &tape.nodes[prev].out);
            tape.nodes.push(Node { op: Op::Affine(l), operand: Some(prev), out: z });
            if spec.activation {
                let prev = tape.nodes.len() - 1;
                let a = tanh_forward::<S>(dim, &tape.nodes[prev].out);
                tape.nodes.push(Node { op: Op::Tanh, operand: Some(prev), out: a });
            }
        }
        Ok(tape)
    }

    pub fn batch(&self) -> usize {
        self.nodes[0].out.batch
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &'a [LayerSpec] {
        self.layers
    }

    pub fn theta(&self) -> &'a [f64] {
        self.theta
    }

    pub fn input(&self) -> &Planes {
        &self.nodes[0].out
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Network outputs, `batch x 1`.
    pub fn output(&self) -> &Planes {
        &self.nodes.last().expect("tape has nodes").out
    }

    pub fn output_jet(&self, row: usize) -> SpatialJet<S> {
        self.output().jet(self.dim, row, 0)
    }

    fn weights(&self, spec: &LayerSpec, src: &'a [f64]) -> MatRef<'a, f64> {
        MatRef::from_row_major_slice(&src[spec.weight_range()], spec.fan_out, spec.fan_in)
    }

    fn affine_forward(&self, spec: &LayerSpec, a: &Planes) -> Planes {
        let np = a.n_planes;
        let mask = DerivMask::new(&a.comps);
        let mut z = Planes::zeros(mask, np, a.batch, spec.fan_out);
        let w0 = self.weights(spec, self.theta);
        let w1 = self.direction.map(|d| self.weights(spec, d));
        for ci in 0..a.comps.len() {
            for k in 0..np {
                matmul(z.mat_mut(ci, k), Accum::Replace, a.mat(ci, k), w0.transpose(), spec.scale, Par::Seq);
                if k >= 1 {
                    if let Some(w1) = w1 {
                        matmul(z.mat_mut(ci, k), Accum::Add, a.mat(ci, k - 1), w1.transpose(), spec.scale, Par::Seq);
                    }
                }
            }
        }
        if let Some(vi) = z.comp_index(Component::Value) {
            let batch = a.batch;
            let b0 = &self.theta[spec.bias_range()];
            add_bias(z.plane_mut(vi, 0), batch, b0);
            if np >= 2 {
                if let Some(d) = self.direction {
                    add_bias(z.plane_mut(vi, 1), batch, &d[spec.bias_range()]);
                }
            }
        }
        z
    }

    /// Pulls `seed` (adjoint of the output jets, `batch x 1`) back through the
    /// tape. `sink` receives each affine layer's pre-activation adjoint and
    /// input activations.
    fn pull_back(&self, seed: Planes, mut sink: impl FnMut(&LayerSpec, &Planes, &Planes)) -> Result<()> {
        let out = self.output();
        if seed.batch != out.batch || seed.width != 1 || seed.n_planes != S::PLANES || seed.comps != out.comps {
            return Err(Error::ShapeMismatch(format!(
                "seed is {}x{} with {} planes, output is {}x1 with {} planes",
                seed.batch, seed.width, seed.n_planes, out.batch, S::PLANES
            )));
        }
        let mut adj = seed;
        for idx in (1..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            let operand = &self.nodes[node.operand.expect("non-input node has an operand")].out;
            match node.op {
                Op::Input => unreachable!("input is node 0"),
                Op::Tanh => adj = tanh_backward::<S>(self.dim, operand, &adj),
                Op::Affine(l) => {
                    let spec = &self.layers[l];
                    sink(spec, &adj, operand);
                    if idx > 1 {
                        adj = self.affine_backward(spec, &adj);
                    }
                }
            }
        }
        Ok(())
    }

    fn affine_backward(&self, spec: &LayerSpec, adj_z: &Planes) -> Planes {
        let np = adj_z.n_planes;
        let mut adj_a = Planes::zeros(DerivMask::new(&adj_z.comps), np, adj_z.batch, spec.fan_in);
        let w0 = self.weights(spec, self.theta);
        let w1 = self.direction.map(|d| self.weights(spec, d));
        for ci in 0..adj_z.comps.len() {
            for k in 0..np {
                matmul(adj_a.mat_mut(ci, k), Accum::Replace, adj_z.mat(ci, k), w0, spec.scale, Par::Seq);
                if k >= 1 {
                    if let Some(w1) = w1 {
                        matmul(adj_a.mat_mut(ci, k), Accum::Add, adj_z.mat(ci, k - 1), w1, spec.scale, Par::Seq);
                    }
                }
            }
        }
        adj_a
    }

    /// Gradient of `sum_rows <seed_row, output_jet_row>` with respect to the
    /// parameters, one entry per parameter (with all scalar planes).
    pub fn gradient(&self, seed: Planes) -> Result<Vec<S>> {
        let p = self.theta.len();
        let np = S::PLANES;
        let mut g = vec![vec![0.0; p]; np];
        self.pull_back(seed, |spec, adj_z, a| {
            let (fi, fo) = (spec.fan_in, spec.fan_out);
            for k in 0..np {
                let gk = &mut g[k];
                {
                    // Row-major W gradient is the column-major (fan_in x fan_out) transpose.
                    let mut gw = MatMut::from_column_major_slice_mut(&mut gk[spec.weight_range()], fi, fo);
                    for ci in 0..adj_z.comps.len() {
                        for i in 0..=k {
                            let j = k - i;
                            matmul(gw.as_mut(), Accum::Add, a.mat(ci, j).transpose(), adj_z.mat(ci, i), spec.scale, Par::Seq);
                        }
                    }
                }
                if let Some(vi) = adj_z.comp_index(Component::Value) {
                    let col = adj_z.plane(vi, k);
                    for (r, gb) in gk[spec.bias_range()].iter_mut().enumerate() {
                        *gb += col[r * adj_z.batch..(r + 1) * adj_z.batch].iter().sum::<f64>();
                    }
                }
            }
        })?;
        Ok((0..p).map(|i| S::from_planes(|k| g[k][i])).collect())
    }
}

impl Tape<'_, f64> {
    /// Writes one Jacobian row per batch point into `jac[row_offset..]`. Row `r`
    /// is the gradient of `<seed_r, output_jet_r>`.
    pub fn jacobian_rows(&self, seed: Planes, mut jac: MatMut<'_, f64>, row_offset: usize) -> Result<()> {
        let batch = self.batch();
        if jac.ncols() != self.theta.len() || row_offset + batch > jac.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "jacobian {}x{} cannot hold rows {}..{} of {} parameters",
                jac.nrows(),
                jac.ncols(),
                row_offset,
                row_offset + batch,
                self.theta.len()
            )));
        }
        self.pull_back(seed, |spec, adj_z, a| {
            let (fi, fo) = (spec.fan_in, spec.fan_out);
            let nc = adj_z.comps.len();
            let rows = row_offset..row_offset + batch;
            let vi = adj_z.comp_index(Component::Value);
            for r in 0..fo {
                let adj: Vec<&[f64]> = (0..nc).map(|ci| &adj_z.plane(ci, 0)[r * batch..(r + 1) * batch]).collect();
                for c in 0..fi {
                    let col = jac.as_mut().col_mut(spec.weight_offset + r * fi + c);
                    let out = &mut col.try_as_col_major_mut().expect("contiguous column").as_slice_mut()[rows.clone()];
                    out.fill(0.0);
                    for ci in 0..nc {
                        let act = &a.plane(ci, 0)[c * batch..(c + 1) * batch];
                        for ((o, x), y) in out.iter_mut().zip(adj[ci]).zip(act) {
                            *o += x * y;
                        }
                    }
                    if spec.scale != 1.0 {
                        out.iter_mut().for_each(|o| *o *= spec.scale);
                    }
                }
                if let Some(vi) = vi {
                    let col = jac.as_mut().col_mut(spec.bias_offset + r);
                    col.try_as_col_major_mut().expect("contiguous column").as_slice_mut()[rows.clone()]
                        .copy_from_slice(&adj_z.plane(vi, 0)[r * batch..(r + 1) * batch]);
                }
            }
        })
    }
}

fn add_bias(plane: &mut [f64], batch: usize, bias: &[f64]) {
    for (j, &b) in bias.iter().enumerate() {
        for v in &mut plane[j * batch..(j + 1) * batch] {
            *v += b;
        }
    }
}

fn tanh_forward<S: Scalar>(dim: usize, z: &Planes) -> Planes {
    let mut a = Planes::zeros(DerivMask::new(&z.comps), z.n_planes, z.batch, z.width);
    for col in 0..z.width {
        for row in 0..z.batch {
            let jz: SpatialJet<S> = z.jet(dim, row, col);
            a.set_jet(row, col, &jet_tanh(&jz));
        }
    }
    a
}

fn tanh_backward<S: Scalar>(dim: usize, z: &Planes, adj_a: &Planes) -> Planes {
    let mut adj_z = Planes::zeros(DerivMask::new(&z.comps), z.n_planes, z.batch, z.width);
    for col in 0..z.width {
        for row in 0..z.batch {
            let jz: SpatialJet<S> = z.jet(dim, row, col);
            let ja: SpatialJet<S> = adj_a.jet(dim, row, col);
            adj_z.set_jet(row, col, &jet_tanh_adjoint(&jz, &ja));
        }
    }
    adj_z
}

/// Weighting of output jet components that defines the scalar being
/// differentiated at each batch row. Weights may depend on the output jet
/// itself, which is how nonlinear residuals enter second-order sweeps.
pub trait Selector {
    fn weights<S: Scalar>(&self, row: usize, jet: &SpatialJet<S>) -> SpatialJet<S>;
}

/// Fixed linear combination of components, the same at every row.
#[derive(Clone, Debug, PartialEq)]
pub struct Combination(pub Vec<(Component, f64)>);

impl Combination {
    pub fn single(c: Component) -> Self {
        Combination(vec![(c, 1.0)])
    }
}

impl Selector for Combination {
    fn weights<S: Scalar>(&self, _row: usize, jet: &SpatialJet<S>) -> SpatialJet<S> {
        let mut w = SpatialJet::zero(jet.dim(), jet.mask());
        for &(c, x) in &self.0 {
            w.set(c, w.get(c) + S::from_f64(x));
        }
        w
    }
}

/// Builds the output seed for `selector` on a recorded tape.
pub fn selector_seed<S: Scalar>(tape: &Tape<'_, S>, selector: &impl Selector) -> Result<Planes> {
    let out = tape.output();
    let mut seed = Planes::zeros(DerivMask::new(&out.comps), S::PLANES, out.batch, 1);
    for row in 0..out.batch {
        let jet = tape.output_jet(row);
        let w = selector.weights(row, &jet);
        for c in w.mask().components() {
            if !jet.mask().contains(c) && w.get(c) != S::zero() {
                return Err(Error::MaskMismatch(format!("selector weights {c:?}, which the tape did not record")));
            }
        }
        seed.set_jet(row, 0, &w.restrict(jet.mask()));
    }
    Ok(seed)
}

/// Parameter gradient of `sum_rows selector(row) . output_jet(row)`.
pub fn reverse_sweep(tape: &Tape<'_, f64>, selector: &impl Selector) -> Result<Vec<f64>> {
    let seed = selector_seed(tape, selector)?;
    tape.gradient(seed)
}

/// Hessian-vector product of the selected scalar with respect to the
/// parameters, by a tangent forward pass followed by a tangent reverse sweep.
/// For a selector that depends on the jet the result is the Hessian of the
/// composite scalar, including the curvature of the selector itself.
pub fn hessian_vector(tape: &Tape<'_, f64>, selector: &impl Selector, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != tape.theta.len() {
        return Err(Error::LengthMismatch { expected: tape.theta.len(), actual: v.len() });
    }
    let mut input = tape.input().clone();
    widen_planes(&mut input, 2);
    let dual: Tape<'_, super::Dual> = Tape::record(tape.layers, tape.theta, Some(v), tape.dim, input)?;
    // The weights are evaluated on tangent-carrying jets, so the sweep picks up
    // the selector's own curvature.
    let seed = selector_seed(&dual, selector)?;
    Ok(dual.gradient(seed)?.into_iter().map(|d| d.eps).collect())
}

/// Adds zero planes so `p` can seed a tape with `n_planes` planes.
pub fn widen_planes(p: &mut Planes, n_planes: usize) {
    if p.n_planes >= n_planes {
        return;
    }
    let size = p.batch * p.width;
    let mut data = Vec::with_capacity(p.comps.len() * n_planes);
    for ci in 0..p.comps.len() {
        for k in 0..n_planes {
            if k < p.n_planes {
                data.push(std::mem::take(&mut p.data[ci * p.n_planes + k]));
            } else {
                data.push(vec![0.0; size]);
            }
        }
    }
    p.data = data;
    p.n_planes = n_planes;
}
