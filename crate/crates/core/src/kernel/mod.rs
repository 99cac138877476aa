//! Neural tangent kernel diagnostics.
//!
//! The kernel of a residual vector is `K = J J^T` with `J` its parameter
//! Jacobian. It factors as `K = Lambda K_Phi Lambda^T` where `K_Phi` is the
//! kernel of the jet components entering the residual and `Lambda` holds the
//! residual's gradient with respect to those components.

mod quadrature;

pub use quadrature::{gauss_hermite, gauss_hermite_normal};

use faer::Mat;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::jets::tape::{Combination, Selector};
use crate::jets::{hessian_vector, jet_affine, jet_tanh, seed_input, Component, DerivMask, Planes};
use crate::linalg::{self, PowerResult};
use crate::net::{MlpParams, Points};
use crate::pde::{CollocationSet, PinnProblem, ResidualSelector, ResidualSpec};

/// Residual Jacobian with its row layout.
#[derive(Clone, Debug)]
pub struct JacobianMatrix {
    /// `n x p`, boundary rows first.
    pub mat: Mat<f64>,
    /// Residual vector matching the rows.
    pub rho: Vec<f64>,
    pub n_boundary: usize,
    pub scaled: bool,
}

impl JacobianMatrix {
    pub fn nrows(&self) -> usize {
        self.mat.nrows()
    }
}

pub fn assemble_jacobian(
    params: &MlpParams,
    spec: &ResidualSpec,
    data: &CollocationSet,
    scaled: bool,
) -> Result<JacobianMatrix> {
    let prob = PinnProblem::new(&params.arch, spec, data)?;
    let (rho, mat) = prob.jacobian(&params.theta, scaled)?;
    if mat.nrows() > 0 && !mat.col_iter().all(|c| c.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("jacobian".into()));
    }
    Ok(JacobianMatrix { mat, rho, n_boundary: data.n_boundary(), scaled })
}

/// A kernel matrix with its spectrum.
#[derive(Clone, Debug)]
pub struct KernelSnapshot {
    pub k: Mat<f64>,
    /// Largest first.
    pub eigenvalues: Vec<f64>,
    pub spectral_norm: f64,
}

pub fn kernel(j: &JacobianMatrix) -> Result<KernelSnapshot> {
    let k = linalg::outer_gram(j.mat.as_ref());
    let eigenvalues = linalg::sym_eigenvalues(k.as_ref())?;
    let spectral_norm = eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(KernelSnapshot { k, eigenvalues, spectral_norm })
}

/// `K = Lambda K_Phi Lambda^T` and how well it reproduces `J J^T`.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub lambda: Mat<f64>,
    pub k_phi: Mat<f64>,
    pub k: Mat<f64>,
    /// `||Lambda K_Phi Lambda^T - K||_F / ||K||_2`.
    pub reconstruction_error: f64,
}

pub fn decompose(params: &MlpParams, spec: &ResidualSpec, data: &CollocationSet, scaled: bool) -> Result<Decomposition> {
    let prob = PinnProblem::new(&params.arch, spec, data)?;
    let (jphi, lambda) = prob.phi_jacobian(&params.theta, scaled)?;
    let (_, jac) = prob.jacobian(&params.theta, scaled)?;
    let k_phi = linalg::outer_gram(jphi.as_ref());
    let k = linalg::outer_gram(jac.as_ref());
    let recon = linalg::mat_mul(linalg::mat_mul(lambda.as_ref(), k_phi.as_ref()).as_ref(), lambda.transpose());
    let norm = linalg::sym_spectral_norm(k.as_ref())?;
    let diff = linalg::frobenius((&recon - &k).as_ref());
    let reconstruction_error = if norm > 0.0 { diff / norm } else { diff };
    Ok(Decomposition { lambda, k_phi, k, reconstruction_error })
}

/// `||K_t - K_0||_2 / ||K_0||_2`.
pub fn kernel_drift(k_t: &Mat<f64>, k_0: &Mat<f64>) -> Result<f64> {
    if k_t.nrows() != k_0.nrows() || k_t.ncols() != k_0.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "kernels are {}x{} and {}x{}",
            k_t.nrows(),
            k_t.ncols(),
            k_0.nrows(),
            k_0.ncols()
        )));
    }
    let n0 = linalg::sym_spectral_norm(k_0.as_ref())?;
    if n0 == 0.0 {
        return Err(Error::InvalidArgument("initial kernel is zero".into()));
    }
    Ok(linalg::sym_spectral_norm((k_t - k_0).as_ref())? / n0)
}

/// Largest parameter count for which a dense Hessian is formed.
pub const DENSE_HESSIAN_CAP: usize = 4 * 64 * 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    Dense,
    NormOnly,
}

/// Parameter Hessian of a scalar at one point.
#[derive(Clone, Debug)]
pub struct HessianReport {
    pub dense: Option<Mat<f64>>,
    pub spectral_norm: f64,
    pub power: Option<PowerResult>,
}

impl HessianReport {
    /// Entries with `|H_ij| > threshold` as `(row, col, |H_ij|)`.
    pub fn sparsity(&self, threshold: f64) -> Vec<(usize, usize, f64)> {
        let Some(h) = &self.dense else { return Vec::new() };
        let mut out = Vec::new();
        for j in 0..h.ncols() {
            for i in 0..h.nrows() {
                if h[(i, j)].abs() > threshold {
                    out.push((i, j, h[(i, j)].abs()));
                }
            }
        }
        out
    }
}

/// Power-iteration settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for PowerSettings {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 500, seed: 0 }
    }
}

/// Hessian of `selector . jet(point)` with respect to the parameters.
pub fn functional_hessian(
    params: &MlpParams,
    selector: &impl Selector,
    mask: DerivMask,
    point: &[f64],
    mode: HessianMode,
    power: PowerSettings,
) -> Result<HessianReport> {
    let (_, tape) = crate::net::forward_jet(params, point, mask)?;
    let p = params.n_params();
    match mode {
        HessianMode::Dense => {
            if p > DENSE_HESSIAN_CAP {
                return Err(Error::SizeCap { what: "dense Hessian parameter count".into(), count: p, cap: DENSE_HESSIAN_CAP });
            }
            let mut h = Mat::<f64>::zeros(p, p);
            let mut e = vec![0.0; p];
            for k in 0..p {
                e[k] = 1.0;
                let col = hessian_vector(&tape, selector, &e)?;
                e[k] = 0.0;
                for (i, v) in col.into_iter().enumerate() {
                    h[(i, k)] = v;
                }
            }
            let sym = Mat::from_fn(p, p, |i, j| 0.5 * (h[(i, j)] + h[(j, i)]));
            let spectral_norm = linalg::sym_spectral_norm(sym.as_ref())?;
            Ok(HessianReport { dense: Some(h), spectral_norm, power: None })
        }
        HessianMode::NormOnly => {
            let r = linalg::power_iteration(|v| hessian_vector(&tape, selector, v), p, power.seed, power.tol, power.max_iter)?;
            Ok(HessianReport { dense: None, spectral_norm: r.norm, power: Some(r) })
        }
    }
}

/// Hessian of the residual `R(Phi) - f` at `point`.
pub fn residual_hessian(
    params: &MlpParams,
    spec: &ResidualSpec,
    point: &[f64],
    mode: HessianMode,
    power: PowerSettings,
) -> Result<HessianReport> {
    let sel = ResidualSelector { spec, scale: 1.0 };
    functional_hessian(params, &sel, spec.mask, point, mode, power)
}

/// Hessian of the network value at `point`.
pub fn value_hessian(params: &MlpParams, point: &[f64], mode: HessianMode, power: PowerSettings) -> Result<HessianReport> {
    let sel = Combination::single(Component::Value);
    functional_hessian(params, &sel, DerivMask::new(&[Component::Value]), point, mode, power)
}

/// Spectrum of the projector `J (J^T J)^+ J^T`.
#[derive(Clone, Debug)]
pub struct ProjectorSpectrum {
    /// Singular values of `J`, largest first.
    pub singular_values: Vec<f64>,
    /// Number of singular values above `rank_tolerance * s_max`.
    pub rank: usize,
    /// Thresholded spectrum: `rank` ones followed by zeros (length `n`).
    pub eigenvalues: Vec<f64>,
    /// Eigenvalues of the explicitly formed `J V_r S_r^-2 V_r^T J^T`, largest
    /// first (length `n`).
    pub realized: Vec<f64>,
}

pub fn projector_spectrum(j: &JacobianMatrix, rank_tolerance: f64) -> Result<ProjectorSpectrum> {
    let a = j.mat.as_ref();
    let n = a.nrows();
    let (_, s, v) = linalg::thin_svd(a)?;
    let smax = s.first().copied().unwrap_or(0.0);
    let rank = s.iter().take_while(|&&x| x > rank_tolerance * smax && x > 0.0).count();
    let eigenvalues = (0..n).map(|i| if i < rank { 1.0 } else { 0.0 }).collect();
    // B = J V_r S_r^-1, so that B B^T = J (J^T J)^+ J^T.
    let vr = Mat::from_fn(a.ncols(), rank, |i, k| v[(i, k)] / s[k]);
    let b = linalg::mat_mul(a, vr.as_ref());
    let realized = linalg::sym_eigenvalues(linalg::outer_gram(b.as_ref()).as_ref())?;
    Ok(ProjectorSpectrum { singular_values: s, rank, eigenvalues, realized })
}

/// Jacobian of jet components at `points`: `k` rows per point in `mask`
/// component order.
pub fn phi_jacobian_at(params: &MlpParams, mask: DerivMask, points: &Points) -> Result<Mat<f64>> {
    let comps = mask.components();
    let k = comps.len();
    let n = points.len();
    let p = params.n_params();
    let tape = params.arch.record::<f64>(&params.theta, None, points, mask)?;
    let closed = mask.closure();
    let mut out = Mat::<f64>::zeros(n * k, p);
    let mut block = Mat::<f64>::zeros(n, p);
    for (ci, &c) in comps.iter().enumerate() {
        let mut seed = Planes::zeros(closed, 1, n, 1);
        let pos = seed.comp_index(c).expect("component recorded");
        seed.plane_mut(pos, 0).fill(1.0);
        tape.jacobian_rows(seed, block.as_mut(), 0)?;
        for i in 0..n {
            for col in 0..p {
                out[(i * k + ci, col)] = block[(i, col)];
            }
        }
    }
    Ok(out)
}

/// Contribution of the output-layer weights to `K_Phi(x, x')`, `k x k`.
pub fn output_weight_phi_kernel(params: &MlpParams, mask: DerivMask, x: &[f64], xp: &[f64]) -> Result<Mat<f64>> {
    let pts = Points::new(x.len(), [x, xp].concat())?;
    let j = phi_jacobian_at(params, mask, &pts)?;
    let last = params.layers().last().expect("network has layers").weight_range();
    let k = mask.len();
    Ok(Mat::from_fn(k, k, |a, b| last.clone().map(|c| j[(a, c)] * j[(k + b, c)]).sum()))
}

/// Infinite-width covariance of jet components of `tanh(w . x + b)` with `w`,
/// `b` standard normal: `Sigma_ij = E[Phi_i(x) Phi_j(x')]`. Tensor
/// Gauss-Hermite of `order` points per variable.
pub fn limit_covariance(mask: DerivMask, x: &[f64], xp: &[f64], order: usize) -> Result<Mat<f64>> {
    let dim = x.len();
    if xp.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, actual: xp.len() });
    }
    if order < 8 {
        return Err(Error::InvalidArgument(format!("quadrature order {order} is below 8")));
    }
    mask.check_dim(dim)?;
    let (nodes, weights) = gauss_hermite_normal(order)?;
    let comps = mask.components();
    let k = comps.len();
    let closed = mask.closure();
    let cx: Vec<_> = (0..dim).map(|i| seed_input(x, i).map(|j| j.restrict(closed))).collect::<Result<_>>()?;
    let cxp: Vec<_> = (0..dim).map(|i| seed_input(xp, i).map(|j| j.restrict(closed))).collect::<Result<_>>()?;
    let mut sigma = Mat::<f64>::zeros(k, k);
    let vars = dim + 1;
    let total = order.pow(vars as u32);
    let mut idx = vec![0usize; vars];
    for _ in 0..total {
        let w: Vec<f64> = idx[..dim].iter().map(|&i| nodes[i]).collect();
        let b = nodes[idx[dim]];
        let wt: f64 = idx.iter().map(|&i| weights[i]).product();
        let a = jet_tanh(&jet_affine(&cx, &w, b)?);
        let ap = jet_tanh(&jet_affine(&cxp, &w, b)?);
        for (i, &ci) in comps.iter().enumerate() {
            for (j, &cj) in comps.iter().enumerate() {
                sigma[(i, j)] += wt * a.get(ci) * ap.get(cj);
            }
        }
        for d in idx.iter_mut() {
            *d += 1;
            if *d < order {
                break;
            }
            *d = 0;
        }
    }
    Ok(sigma)
}

/// One cell of a Hessian norm sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HessianNormRow {
    pub m: usize,
    pub seed: u64,
    pub h_norm: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Residual Hessian spectral norms for single-hidden-layer NTK networks.
/// `seeds[i]` initializes the network of seed index `i`.
pub fn hessian_norm_sweep(
    spec: &ResidualSpec,
    widths: &[usize],
    seeds: &[(usize, u64)],
    point: &[f64],
    power: PowerSettings,
) -> Result<Vec<HessianNormRow>> {
    let mut rows = Vec::new();
    for &m in widths {
        for &(idx, seed) in seeds {
            let params = crate::net::init_gaussian(&[spec.dim, m, 1], seed)?;
            let rep = residual_hessian(&params, spec, point, HessianMode::NormOnly, PowerSettings { seed, ..power })?;
            let pr = rep.power.expect("norm-only reports power iteration");
            rows.push(HessianNormRow { m, seed: idx as u64, h_norm: rep.spectral_norm, iterations: pr.iterations, residual: pr.residual });
        }
    }
    Ok(rows)
}
