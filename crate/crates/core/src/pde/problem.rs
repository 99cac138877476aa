//! Evaluation of a network on a collocation set: residual vector, loss,
//! Jacobian, loss gradient and second directional derivatives.
//!
//! Rows are ordered boundary first, then residual. The scaled residual vector
//! is `rho = [b / sqrt(N_b); r / sqrt(N_r)]`, so `0.5 * ||rho||^2` is the loss.

use faer::Mat;

use super::{CollocationSet, ResidualSpec};
use crate::error::{Error, Result};
use crate::jets::{tape::Selector, Planes, Scalar, SpatialJet, Tape, Taylor2};
use crate::net::Architecture;

/// Loss split into its two blocks.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub boundary: f64,
    pub residual: f64,
}

/// Selects `scale * R(Phi)` at every row, linearized through `gradR`.
pub struct ResidualSelector<'a> {
    pub spec: &'a ResidualSpec,
    pub scale: f64,
}

impl Selector for ResidualSelector<'_> {
    fn weights<S: Scalar>(&self, _row: usize, jet: &SpatialJet<S>) -> SpatialJet<S> {
        let g = self.spec.operator_gradient(&self.spec.phi(jet));
        let mut w = SpatialJet::zero(jet.dim(), jet.mask());
        for (c, gc) in self.spec.phi_components().into_iter().zip(g) {
            w.set(c, gc * self.scale);
        }
        w
    }
}

/// A network architecture bound to a spec and collocation set.
pub struct PinnProblem<'a> {
    pub arch: &'a Architecture,
    pub spec: &'a ResidualSpec,
    pub data: &'a CollocationSet,
    forcing: Vec<f64>,
}

impl<'a> PinnProblem<'a> {
    pub fn new(arch: &'a Architecture, spec: &'a ResidualSpec, data: &'a CollocationSet) -> Result<Self> {
        if arch.d_in() != spec.dim {
            return Err(Error::DimensionMismatch { expected: spec.dim, actual: arch.d_in() });
        }
        if data.residual.dim() != spec.dim || data.boundary.points.dim() != spec.dim {
            return Err(Error::DimensionMismatch { expected: spec.dim, actual: data.residual.dim() });
        }
        if data.n_rows() == 0 {
            return Err(Error::InvalidArgument("empty collocation set".into()));
        }
        let outside = data.residual.iter().chain(data.boundary.points.iter()).filter(|p| !spec.contains(p)).count();
        if outside > 0 {
            log::warn!("{}: {outside} collocation points lie outside the domain", spec.name());
        }
        let forcing = data.residual.iter().map(|p| spec.forcing(p)).collect();
        Ok(Self { arch, spec, data, forcing })
    }

    pub fn n_params(&self) -> usize {
        self.arch.n_params()
    }

    pub fn n_rows(&self) -> usize {
        self.data.n_rows()
    }

    pub fn n_boundary(&self) -> usize {
        self.data.n_boundary()
    }

    /// `(1/sqrt(N_b), 1/sqrt(N_r))`.
    pub fn scales(&self) -> (f64, f64) {
        let nb = self.data.boundary.weight_count.max(1) as f64;
        let nr = self.data.n_residual().max(1) as f64;
        (1.0 / nb.sqrt(), 1.0 / nr.sqrt())
    }

    fn boundary_tape<'t, S: Scalar>(&self, theta: &'t [f64], dir: Option<&'t [f64]>) -> Result<Option<Tape<'t, S>>>
    where
        'a: 't,
    {
        let b = &self.data.boundary;
        if b.n_terms() == 0 {
            return Ok(None);
        }
        let arch: &'a Architecture = self.arch;
        arch.record(theta, dir, &b.points, b.mask()).map(Some)
    }

    fn residual_tape<'t, S: Scalar>(&self, theta: &'t [f64], dir: Option<&'t [f64]>) -> Result<Option<Tape<'t, S>>>
    where
        'a: 't,
    {
        if self.data.n_residual() == 0 {
            return Ok(None);
        }
        let arch: &'a Architecture = self.arch;
        arch.record(theta, dir, &self.data.residual, self.spec.mask).map(Some)
    }

    /// Boundary row values `sum coef * Phi - target` from a boundary tape.
    fn boundary_values<S: Scalar>(&self, tape: &Tape<'_, S>) -> Vec<S> {
        let b = &self.data.boundary;
        let mut rows: Vec<S> = b.targets.iter().map(|&g| S::from_f64(-g)).collect();
        for t in 0..b.n_terms() {
            let jet = tape.output_jet(t);
            rows[b.term_row[t]] += jet.get(b.term_component[t]) * b.term_coef[t];
        }
        rows
    }

    fn residual_values<S: Scalar>(&self, tape: &Tape<'_, S>) -> Vec<S> {
        (0..tape.batch())
            .map(|i| self.spec.operator(&self.spec.phi(&tape.output_jet(i))) - self.forcing[i])
            .collect()
    }

    /// Unscaled boundary values and residuals.
    pub fn raw(&self, theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let b = match self.boundary_tape::<f64>(theta, None)? {
            Some(t) => self.boundary_values(&t),
            None => Vec::new(),
        };
        let r = match self.residual_tape::<f64>(theta, None)? {
            Some(t) => self.residual_values(&t),
            None => Vec::new(),
        };
        Ok((b, r))
    }

    /// Scaled residual vector `rho`.
    pub fn residual_vector(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let (b, r) = self.raw(theta)?;
        let (sb, sr) = self.scales();
        Ok(b.iter().map(|v| v * sb).chain(r.iter().map(|v| v * sr)).collect())
    }

    pub fn loss(&self, theta: &[f64]) -> Result<LossParts> {
        let (b, r) = self.raw(theta)?;
        Ok(self.loss_from_raw(&b, &r))
    }

    fn loss_from_raw(&self, b: &[f64], r: &[f64]) -> LossParts {
        let (sb, sr) = self.scales();
        let boundary = 0.5 * sb * sb * b.iter().map(|v| v * v).sum::<f64>();
        let residual = 0.5 * sr * sr * r.iter().map(|v| v * v).sum::<f64>();
        LossParts { total: boundary + residual, boundary, residual }
    }

    /// Seed putting `weights[t]` on each boundary term's component.
    fn boundary_seed(&self, tape: &Tape<'_, f64>, weights: &[f64]) -> Planes {
        let b = &self.data.boundary;
        let mask = b.mask().closure();
        let mut seed = Planes::zeros(mask, 1, b.n_terms(), 1);
        for t in 0..b.n_terms() {
            let mut w = SpatialJet::zero(tape.dim(), mask);
            w.set(b.term_component[t], weights[t]);
            seed.set_jet(t, 0, &w);
        }
        seed
    }

    /// Seed `weights[i] * gradR(Phi_i)` at every residual row.
    fn residual_seed(&self, tape: &Tape<'_, f64>, weights: &[f64]) -> Planes {
        let mask = self.spec.mask.closure();
        let mut seed = Planes::zeros(mask, 1, tape.batch(), 1);
        let comps = self.spec.phi_components();
        for i in 0..tape.batch() {
            let jet = tape.output_jet(i);
            let g = self.spec.operator_gradient(&self.spec.phi(&jet));
            let mut w = SpatialJet::zero(tape.dim(), mask);
            for (c, gc) in comps.iter().zip(&g) {
                w.set(*c, gc * weights[i]);
            }
            seed.set_jet(i, 0, &w);
        }
        seed
    }

    /// Residual vector (scaled when `scaled`) and its Jacobian, `n x p`.
    pub fn jacobian(&self, theta: &[f64], scaled: bool) -> Result<(Vec<f64>, Mat<f64>)> {
        let (sb, sr) = if scaled { self.scales() } else { (1.0, 1.0) };
        let p = self.n_params();
        let nb = self.n_boundary();
        let mut jac = Mat::<f64>::zeros(self.n_rows(), p);
        let mut rho = Vec::with_capacity(self.n_rows());
        if let Some(tape) = self.boundary_tape::<f64>(theta, None)? {
            let b = &self.data.boundary;
            rho.extend(self.boundary_values(&tape).into_iter().map(|v| v * sb));
            let w: Vec<f64> = b.term_coef.iter().map(|c| c * sb).collect();
            let seed = self.boundary_seed(&tape, &w);
            if b.is_simple() {
                tape.jacobian_rows(seed, jac.as_mut(), 0)?;
            } else {
                let mut terms = Mat::<f64>::zeros(b.n_terms(), p);
                tape.jacobian_rows(seed, terms.as_mut(), 0)?;
                for k in 0..p {
                    for t in 0..b.n_terms() {
                        jac[(b.term_row[t], k)] += terms[(t, k)];
                    }
                }
            }
        }
        if let Some(tape) = self.residual_tape::<f64>(theta, None)? {
            rho.extend(self.residual_values(&tape).into_iter().map(|v| v * sr));
            let seed = self.residual_seed(&tape, &vec![sr; tape.batch()]);
            tape.jacobian_rows(seed, jac.as_mut(), nb)?;
        }
        Ok((rho, jac))
    }

    /// Loss and its gradient.
    pub fn gradient(&self, theta: &[f64]) -> Result<(LossParts, Vec<f64>)> {
        let (sb, sr) = self.scales();
        let mut grad = vec![0.0; self.n_params()];
        let (mut bvals, mut rvals) = (Vec::new(), Vec::new());
        if let Some(tape) = self.boundary_tape::<f64>(theta, None)? {
            let b = &self.data.boundary;
            bvals = self.boundary_values(&tape);
            let w: Vec<f64> = (0..b.n_terms()).map(|t| b.term_coef[t] * bvals[b.term_row[t]] * sb * sb).collect();
            let g = tape.gradient(self.boundary_seed(&tape, &w))?;
            add(&mut grad, &g);
        }
        if let Some(tape) = self.residual_tape::<f64>(theta, None)? {
            rvals = self.residual_values(&tape);
            let w: Vec<f64> = rvals.iter().map(|r| r * sr * sr).collect();
            let g = tape.gradient(self.residual_seed(&tape, &w))?;
            add(&mut grad, &g);
        }
        Ok((self.loss_from_raw(&bvals, &rvals), grad))
    }

    /// `d^2/dh^2 rho(theta + h v)` at `h = 0`, i.e. `v^T H_i v` per row.
    pub fn second_directional(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != theta.len() {
            return Err(Error::LengthMismatch { expected: theta.len(), actual: v.len() });
        }
        let (sb, sr) = self.scales();
        let mut out = Vec::with_capacity(self.n_rows());
        if let Some(tape) = self.boundary_tape::<Taylor2>(theta, Some(v))? {
            out.extend(self.boundary_values(&tape).into_iter().map(|t| 2.0 * t.c[2] * sb));
        }
        if let Some(tape) = self.residual_tape::<Taylor2>(theta, Some(v))? {
            out.extend(self.residual_values(&tape).into_iter().map(|t| 2.0 * t.c[2] * sr));
        }
        Ok(out)
    }

    /// Jacobian of the jet components `Phi` and the block-diagonal
    /// linearization `Lambda` with `J = Lambda J_Phi`.
    ///
    /// `J_Phi` has the boundary rows first, then `k` rows per residual point in
    /// `phi_components` order. `Lambda` is `n x (N_b + k N_r)`.
    pub fn phi_jacobian(&self, theta: &[f64], scaled: bool) -> Result<(Mat<f64>, Mat<f64>)> {
        let sr = if scaled { self.scales().1 } else { 1.0 };
        let p = self.n_params();
        let nb = self.n_boundary();
        let nr = self.data.n_residual();
        let comps = self.spec.phi_components();
        let k = comps.len();
        let mut jphi = Mat::<f64>::zeros(nb + k * nr, p);
        let mut lambda = Mat::<f64>::zeros(nb + nr, nb + k * nr);
        // Boundary rows are already functionals of the network output.
        let (_, jb) = self.jacobian(theta, scaled)?;
        for i in 0..nb {
            for c in 0..p {
                jphi[(i, c)] = jb[(i, c)];
            }
            lambda[(i, i)] = 1.0;
        }
        if let Some(tape) = self.residual_tape::<f64>(theta, None)? {
            let mask = self.spec.mask.closure();
            let mut block = Mat::<f64>::zeros(nr, p);
            for (ci, &comp) in comps.iter().enumerate() {
                let mut seed = Planes::zeros(mask, 1, nr, 1);
                let pos = seed.comp_index(comp).expect("phi component is recorded");
                seed.plane_mut(pos, 0).fill(1.0);
                tape.jacobian_rows(seed, block.as_mut(), 0)?;
                for i in 0..nr {
                    for c in 0..p {
                        jphi[(nb + i * k + ci, c)] = block[(i, c)];
                    }
                }
            }
            for i in 0..nr {
                let g = self.spec.operator_gradient(&self.spec.phi(&tape.output_jet(i)));
                for (ci, gc) in g.into_iter().enumerate() {
                    lambda[(nb + i, nb + i * k + ci)] = gc * sr;
                }
            }
        }
        Ok((jphi, lambda))
    }
}

fn add(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}
