use faer::Mat;
use serde::Serialize;

use super::{LeastSquares, Metric, Recorder, Termination, TrainLog, TrainOptions};
use crate::error::{Error, Result};
use crate::linalg::{self, mat_t_vec, mat_vec, norm, ShiftedCholesky};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LmConfig {
    pub lambda0: f64,
    pub lambda_max: f64,
    pub tol: f64,
    pub alpha: f64,
    /// Cap on consecutive damping doublings within one iteration.
    pub max_doublings: usize,
    pub geodesic: bool,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { lambda0: 1e-2, lambda_max: 1e10, tol: 1e-3, alpha: 0.75, max_doublings: 60, geodesic: true }
    }
}

/// Damping state of the trust-region loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LmState {
    pub lambda: f64,
    pub lambda_max: f64,
    pub tol: f64,
    pub alpha: f64,
    pub iteration: usize,
    pub last_criterion: f64,
}

impl LmState {
    pub fn new(cfg: &LmConfig) -> Result<Self> {
        let bad = |name: &str, value: f64, reason: &str| {
            Err(Error::InvalidParameter { name: name.into(), value, reason: reason.into() })
        };
        // damping lives in [1/lambda_max, lambda_max]
        if !(cfg.lambda_max > 1.0 && cfg.lambda_max.is_finite()) {
            return bad("lambda_max", cfg.lambda_max, "must be finite and greater than 1");
        }
        if !(cfg.lambda0 >= 1.0 / cfg.lambda_max && cfg.lambda0 <= cfg.lambda_max) {
            return bad("lambda0", cfg.lambda0, "must lie in [1/lambda_max, lambda_max]");
        }
        if !(0.0..0.25).contains(&cfg.tol) {
            return bad("tol", cfg.tol, "must lie in [0, 1/4)");
        }
        if !(0.0..1.0).contains(&cfg.alpha) {
            return bad("alpha", cfg.alpha, "must lie in [0, 1)");
        }
        Ok(Self { lambda: cfg.lambda0, lambda_max: cfg.lambda_max, tol: cfg.tol, alpha: cfg.alpha, iteration: 0, last_criterion: f64::NAN })
    }

    pub fn lambda_min(&self) -> f64 {
        1.0 / self.lambda_max
    }
}

enum Form {
    /// `J^T J`, used when there are at least as many rows as parameters.
    Primal(Mat<f64>),
    /// `J J^T`.
    Dual(Mat<f64>),
}

/// Linearization at one iterate: `J`, `rho`, `grad = J^T rho` and the Gram
/// matrix used by the damped solves.
pub struct LmSystem {
    pub jac: Mat<f64>,
    pub rho: Vec<f64>,
    pub grad: Vec<f64>,
    form: Form,
}

/// A solved damped system and the factorization that produced it.
pub struct Solved {
    pub v: Vec<f64>,
    pub report: SolveReport,
    chol: ShiftedCholesky,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SolveReport {
    /// Damping actually used after factorization retries.
    pub lambda: f64,
    pub retries: usize,
    /// `||(J^T J + lambda I) v + grad|| / ||grad||`.
    pub residual: f64,
}

const REFINE_STEPS: usize = 4;
const FACTOR_RETRIES: usize = 5;

impl LmSystem {
    pub fn new(jac: Mat<f64>, rho: Vec<f64>) -> Result<Self> {
        if jac.nrows() != rho.len() {
            return Err(Error::LengthMismatch { expected: jac.nrows(), actual: rho.len() });
        }
        let grad = mat_t_vec(jac.as_ref(), &rho);
        let form = if jac.nrows() >= jac.ncols() {
            Form::Primal(linalg::gram(jac.as_ref()))
        } else {
            Form::Dual(linalg::outer_gram(jac.as_ref()))
        };
        Ok(Self { jac, rho, grad, form })
    }

    pub fn n_params(&self) -> usize {
        self.jac.ncols()
    }

    /// `(J^T J + lambda I) x` without forming `J^T J` when it is not stored.
    pub fn apply(&self, x: &[f64], lambda: f64) -> Vec<f64> {
        let mut y = match &self.form {
            Form::Primal(g) => mat_vec(g.as_ref(), x),
            Form::Dual(_) => mat_t_vec(self.jac.as_ref(), &mat_vec(self.jac.as_ref(), x)),
        };
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += lambda * xi;
        }
        y
    }

    fn factor(&self, lambda: f64) -> Result<ShiftedCholesky> {
        match &self.form {
            Form::Primal(g) => ShiftedCholesky::new(g.as_ref(), lambda),
            Form::Dual(k) => ShiftedCholesky::new(k.as_ref(), lambda),
        }
    }

    /// `-(J^T J + lambda I)^{-1} J^T r` with a given factorization.
    fn solve_with(&self, chol: &ShiftedCholesky, r: &[f64], lambda: f64) -> Vec<f64> {
        let rhs_grad = mat_t_vec(self.jac.as_ref(), r);
        let mut x: Vec<f64> = match &self.form {
            Form::Primal(_) => chol.solve(&rhs_grad).into_iter().map(|v| -v).collect(),
            // J^T (J J^T + lambda)^{-1} r = (J^T J + lambda)^{-1} J^T r
            Form::Dual(_) => mat_t_vec(self.jac.as_ref(), &chol.solve(r)).into_iter().map(|v| -v).collect(),
        };
        // Iterative refinement while the residual keeps shrinking.
        let mut res = self.defect(&x, &rhs_grad, lambda);
        let mut res_norm = norm(&res);
        for _ in 0..REFINE_STEPS {
            if res_norm == 0.0 {
                break;
            }
            let corr = self.correction(chol, &res, lambda);
            let cand: Vec<f64> = x.iter().zip(&corr).map(|(a, b)| a + b).collect();
            let cand_res = self.defect(&cand, &rhs_grad, lambda);
            let cand_norm = norm(&cand_res);
            if !(cand_norm < res_norm) {
                break;
            }
            x = cand;
            res = cand_res;
            res_norm = cand_norm;
        }
        x
    }

    /// `-(g + (J^T J + lambda I) x)` for right-hand side `-g`.
    fn defect(&self, x: &[f64], g: &[f64], lambda: f64) -> Vec<f64> {
        self.apply(x, lambda).iter().zip(g).map(|(a, b)| -(a + b)).collect()
    }

    /// `(J^T J + lambda I)^{-1} res` through the stored factorization.
    fn correction(&self, chol: &ShiftedCholesky, res: &[f64], lambda: f64) -> Vec<f64> {
        match &self.form {
            Form::Primal(_) => chol.solve(res),
            Form::Dual(_) => {
                // push-through: c = (res - J^T (J J^T + lambda)^{-1} J res) / lambda
                let jr = mat_vec(self.jac.as_ref(), res);
                let t = mat_t_vec(self.jac.as_ref(), &chol.solve(&jr));
                res.iter().zip(&t).map(|(a, b)| (a - b) / lambda).collect()
            }
        }
    }

    fn residual_of(&self, v: &[f64], lambda: f64) -> f64 {
        let gn = norm(&self.grad);
        let r: Vec<f64> = self.apply(v, lambda).iter().zip(&self.grad).map(|(a, b)| a + b).collect();
        if gn > 0.0 {
            norm(&r) / gn
        } else {
            norm(&r)
        }
    }

    /// Damped step, raising `lambda` tenfold (up to five times) when the
    /// factorization fails.
    pub fn solve(&self, lambda: f64, lambda_max: f64) -> Result<Solved> {
        let mut lam = lambda;
        let mut retries = 0;
        loop {
            match self.factor(lam) {
                Ok(chol) => {
                    let v = self.solve_with(&chol, &self.rho, lam);
                    if v.iter().all(|x| x.is_finite()) {
                        let residual = self.residual_of(&v, lam);
                        return Ok(Solved { v, report: SolveReport { lambda: lam, retries, residual }, chol });
                    }
                }
                Err(e) if retries >= FACTOR_RETRIES => return Err(e),
                Err(_) => {}
            }
            if retries >= FACTOR_RETRIES {
                return Err(Error::LinearAlgebra(format!("damped system not solvable at lambda {lam:e}")));
            }
            retries += 1;
            lam = (lam * 10.0).min(lambda_max);
        }
    }
}

/// Damped Gauss-Newton step `v = -(J^T J + lambda I)^{-1} J^T rho`.
pub fn lm_step(system: &LmSystem, state: &LmState) -> Result<(Vec<f64>, SolveReport)> {
    let s = system.solve(state.lambda, state.lambda_max)?;
    Ok((s.v, s.report))
}

/// Gain ratio of a candidate step:
/// `(||rho||^2 - ||rho_new||^2) / <v, lambda v - grad>`.
///
/// The denominator is the reduction of `||rho||^2` predicted by the damped
/// linear model and is positive for any nonzero step solved from the damped
/// normal equations. A zero or non-finite denominator, or a non-finite new
/// residual, yields `-inf` (reject).
pub fn lm_criterion(rho: &[f64], rho_new: &[f64], v: &[f64], grad: &[f64], lambda: f64) -> f64 {
    let sq = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();
    let num = sq(rho) - sq(rho_new);
    let den: f64 = v.iter().zip(grad).map(|(vi, gi)| vi * (lambda * vi - gi)).sum();
    if !num.is_finite() || !den.is_finite() || den == 0.0 {
        return f64::NEG_INFINITY;
    }
    num / den
}

/// `a = -(J^T J + lambda I)^{-1} J^T w` with `w_i = v^T H_i v`, reusing the
/// factorization of the accepted step.
pub fn geodesic_acceleration(problem: &impl LeastSquares, theta: &[f64], v: &[f64], system: &LmSystem, lambda: f64) -> Result<Vec<f64>> {
    let chol = system.factor(lambda)?;
    let w = problem.second_directional(theta, v)?;
    Ok(system.solve_with(&chol, &w, lambda))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GeodesicOutcome {
    Disabled,
    Applied,
    /// `2 ||a|| > alpha ||v||`.
    Rejected,
    /// Applied, then undone because the loss went up.
    Reverted,
}

/// Damping details of one outer iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LmIteration {
    pub iter: usize,
    /// Damping at the start of the iteration.
    pub lambda_start: f64,
    pub doublings: usize,
    /// Damping of the accepted step.
    pub lambda_accepted: f64,
    /// Damping carried to the next iteration.
    pub lambda_next: f64,
    pub criterion: f64,
    pub solve: SolveReport,
    pub geodesic: GeodesicOutcome,
    pub step_norm: f64,
    pub accel_norm: f64,
}

/// The trust-region loop: solve, double the damping until the gain ratio
/// reaches `tol`, accept, shrink the damping by three, then try a half
/// geodesic-acceleration step.
pub fn lm_train(
    problem: &impl LeastSquares,
    theta: &mut [f64],
    cfg: &LmConfig,
    opts: TrainOptions,
    metric: Option<Metric<'_>>,
) -> Result<(LmState, TrainLog)> {
    let mut state = LmState::new(cfg)?;
    let mut rec = Recorder::new(opts, metric);
    for it in 1..=opts.max_iter {
        state.iteration = it;
        let (rho, jac) = problem.jacobian(theta)?;
        let system = LmSystem::new(jac, rho)?;
        if norm(&system.grad) <= opts.grad_tol {
            return Ok((state, rec.finish(Termination::Converged)));
        }
        let lambda_start = state.lambda;
        let mut doublings = 0;
        let (solved, rho_new, criterion) = loop {
            let solved = match system.solve(state.lambda, state.lambda_max) {
                Ok(s) => s,
                Err(_) => return Ok((state, rec.finish(Termination::FactorizationFailed))),
            };
            state.lambda = solved.report.lambda;
            let cand: Vec<f64> = theta.iter().zip(&solved.v).map(|(a, b)| a + b).collect();
            let rho_new = problem.residuals(&cand).unwrap_or_else(|_| vec![f64::NAN; system.rho.len()]);
            let c = lm_criterion(&system.rho, &rho_new, &solved.v, &system.grad, state.lambda);
            state.last_criterion = c;
            if c >= state.tol {
                break (solved, rho_new, c);
            }
            if doublings == cfg.max_doublings {
                log::warn!("damping loop stalled after {doublings} doublings at iteration {it}");
                return Ok((state, rec.finish(Termination::Stalled { doublings })));
            }
            state.lambda = (2.0 * state.lambda).min(state.lambda_max);
            doublings += 1;
        };
        let lambda_accepted = state.lambda;
        let v = solved.v;
        for (t, vi) in theta.iter_mut().zip(&v) {
            *t += vi;
        }
        state.lambda = (state.lambda / 3.0).max(state.lambda_min());
        let mut loss = problem.split_loss(&rho_new);
        let (mut geodesic, mut accel_norm) = (GeodesicOutcome::Disabled, 0.0);
        if cfg.geodesic {
            let base: Vec<f64> = theta.iter().zip(&v).map(|(t, vi)| t - vi).collect();
            let w = problem.second_directional(&base, &v)?;
            let a = system.solve_with(&solved.chol, &w, lambda_accepted);
            accel_norm = norm(&a);
            if accel_norm.is_finite() && 2.0 * accel_norm <= state.alpha * norm(&v) {
                let trial: Vec<f64> = theta.iter().zip(&a).map(|(t, ai)| t + 0.5 * ai).collect();
                let trial_loss = problem.residuals(&trial).map(|r| problem.split_loss(&r));
                match trial_loss {
                    Ok(l) if l.total <= loss.total => {
                        theta.copy_from_slice(&trial);
                        loss = l;
                        geodesic = GeodesicOutcome::Applied;
                    }
                    _ => geodesic = GeodesicOutcome::Reverted,
                }
            } else {
                geodesic = GeodesicOutcome::Rejected;
            }
        }
        rec.log.lm.push(LmIteration {
            iter: it,
            lambda_start,
            doublings,
            lambda_accepted,
            lambda_next: state.lambda,
            criterion,
            solve: solved.report,
            geodesic,
            step_norm: norm(&v),
            accel_norm,
        });
        if let Some(why) = rec.record(it, theta, loss, Some(state.lambda))? {
            return Ok((state, rec.finish(why)));
        }
    }
    Ok((state, rec.finish(Termination::MaxIterations)))
}
