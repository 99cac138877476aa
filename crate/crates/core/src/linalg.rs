//! Dense linear algebra helpers on top of faer.

use faer::linalg::matmul::matmul;
use faer::linalg::matmul::triangular::{self, BlockStructure};
use faer::prelude::*;
use faer::{Accum, Mat, MatRef, Par, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// `A^T A`, full symmetric.
pub fn gram(a: MatRef<'_, f64>) -> Mat<f64> {
    let p = a.ncols();
    let mut g = Mat::<f64>::zeros(p, p);
    triangular::matmul(
        g.as_mut(),
        BlockStructure::TriangularLower,
        Accum::Replace,
        a.transpose(),
        BlockStructure::Rectangular,
        a,
        BlockStructure::Rectangular,
        1.0,
        Par::Seq,
    );
    mirror_lower(&mut g);
    g
}

/// `A A^T`, full symmetric.
pub fn outer_gram(a: MatRef<'_, f64>) -> Mat<f64> {
    gram(a.transpose())
}

fn mirror_lower(g: &mut Mat<f64>) {
    let n = g.nrows();
    for j in 0..n {
        for i in j + 1..n {
            g[(j, i)] = g[(i, j)];
        }
    }
}

pub fn mat_vec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    let mut y = Mat::<f64>::zeros(a.nrows(), 1);
    matmul(y.as_mut(), Accum::Replace, a, col(x), 1.0, Par::Seq);
    (0..a.nrows()).map(|i| y[(i, 0)]).collect()
}

pub fn mat_t_vec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    mat_vec(a.transpose(), x)
}

pub fn mat_mul(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let mut c = Mat::<f64>::zeros(a.nrows(), b.ncols());
    matmul(c.as_mut(), Accum::Replace, a, b, 1.0, Par::Seq);
    c
}

/// Column view of a slice.
pub fn col(x: &[f64]) -> MatRef<'_, f64> {
    MatRef::from_column_major_slice(x, x.len(), 1)
}

/// Eigenvalues of a symmetric matrix, largest first.
pub fn sym_eigenvalues(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let mut ev = a.self_adjoint_eigenvalues(Side::Lower).map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    ev.reverse();
    Ok(ev)
}

/// Eigenpairs of a symmetric matrix, largest first (vectors as columns).
pub fn sym_eigen(a: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = a.self_adjoint_eigen(Side::Lower).map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    let n = a.nrows();
    let s = evd.S().column_vector();
    let u = evd.U();
    let vals = (0..n).rev().map(|i| s[i]).collect();
    let vecs = Mat::from_fn(n, n, |i, j| u[(i, n - 1 - j)]);
    Ok((vals, vecs))
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn sym_spectral_norm(a: MatRef<'_, f64>) -> Result<f64> {
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    let ev = sym_eigenvalues(a)?;
    Ok(ev.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// Singular values, largest first.
pub fn singular_values(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    a.singular_values().map_err(|e| Error::LinearAlgebra(format!("{e:?}")))
}

/// Thin SVD `(U, s, V)` with singular values largest first.
pub fn thin_svd(a: MatRef<'_, f64>) -> Result<(Mat<f64>, Vec<f64>, Mat<f64>)> {
    let svd = a.thin_svd().map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    let k = a.nrows().min(a.ncols());
    let s = svd.S().column_vector();
    Ok((svd.U().to_owned(), (0..k).map(|i| s[i]).collect(), svd.V().to_owned()))
}

pub fn frobenius(a: MatRef<'_, f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)] * a[(i, j)];
        }
    }
    s.sqrt()
}

/// Cholesky factor of `A + shift I`.
pub struct ShiftedCholesky {
    llt: faer::linalg::solvers::Llt<f64>,
}

impl ShiftedCholesky {
    pub fn new(a: MatRef<'_, f64>, shift: f64) -> Result<Self> {
        let n = a.nrows();
        let mut m = a.to_owned();
        for i in 0..n {
            m[(i, i)] += shift;
        }
        let llt = m.llt(Side::Lower).map_err(|e| Error::LinearAlgebra(format!("cholesky: {e:?}")))?;
        Ok(Self { llt })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let x = self.llt.solve(col(b));
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Result of [`power_iteration`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerResult {
    /// Estimated spectral norm.
    pub norm: f64,
    pub iterations: usize,
    /// `||A^2 v - n^2 v|| / n^2` at the returned vector.
    pub residual: f64,
    pub converged: bool,
}

/// Spectral norm of a symmetric operator by power iteration on its square,
/// which is insensitive to eigenvalue pairs of equal magnitude and opposite
/// sign. The start vector is Gaussian from `seed`.
pub fn power_iteration(
    mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    dim: usize,
    seed: u64,
    tol: f64,
    max_iter: usize,
) -> Result<PowerResult> {
    if dim == 0 {
        return Ok(PowerResult { norm: 0.0, iterations: 0, residual: 0.0, converged: true });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut prev = 0.0;
    let mut out = PowerResult { norm: 0.0, iterations: 0, residual: f64::INFINITY, converged: false };
    for it in 1..=max_iter {
        let av = apply(&v)?;
        let aav = apply(&av)?;
        let sq = dot(&v, &aav);
        let n2 = norm(&aav);
        if n2 == 0.0 || sq <= 0.0 {
            return Ok(PowerResult { norm: 0.0, iterations: it, residual: 0.0, converged: true });
        }
        let est = sq.sqrt();
        let res: f64 = aav.iter().zip(&v).map(|(a, b)| (a - sq * b).powi(2)).sum::<f64>().sqrt() / sq;
        out = PowerResult { norm: est, iterations: it, residual: res, converged: false };
        if res <= tol || (it > 1 && (est - prev).abs() <= tol * est) {
            out.converged = true;
            return Ok(out);
        }
        prev = est;
        v = aav.iter().map(|x| x / n2).collect();
    }
    Ok(out)
}
