use std::collections::VecDeque;

use super::{Metric, Objective, Recorder, Termination, TrainLog, TrainOptions};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// `theta <- theta - eta * grad`.
pub fn gd_step(theta: &mut [f64], grad: &[f64], eta: f64) -> Result<()> {
    if !(eta > 0.0) {
        return Err(Error::InvalidParameter { name: "eta".into(), value: eta, reason: "must be positive".into() });
    }
    if grad.len() != theta.len() {
        return Err(Error::LengthMismatch { expected: theta.len(), actual: grad.len() });
    }
    check_finite("gradient", grad)?;
    for (t, g) in theta.iter_mut().zip(grad) {
        *t -= eta * g;
    }
    Ok(())
}

pub fn gd_train(obj: &impl Objective, theta: &mut [f64], eta: f64, opts: TrainOptions, metric: Option<Metric<'_>>) -> Result<TrainLog> {
    let mut rec = Recorder::new(opts, metric);
    for it in 1..=opts.max_iter {
        let (_, g) = obj.loss_grad(theta)?;
        if norm(&g) <= opts.grad_tol {
            return Ok(rec.finish(Termination::Converged));
        }
        gd_step(theta, &g, eta)?;
        let loss = obj.loss(theta)?;
        if let Some(why) = rec.record(it, theta, loss, None)? {
            return Ok(rec.finish(why));
        }
    }
    Ok(rec.finish(Termination::MaxIterations))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

pub fn adam_step(state: &mut AdamState, theta: &mut [f64], grad: &[f64], cfg: &AdamConfig) -> Result<()> {
    if grad.len() != theta.len() || state.m.len() != theta.len() {
        return Err(Error::LengthMismatch { expected: theta.len(), actual: grad.len() });
    }
    check_finite("gradient", grad)?;
    state.t += 1;
    let b1t = 1.0 - cfg.beta1.powi(state.t as i32);
    let b2t = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..theta.len() {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let mh = state.m[i] / b1t;
        let vh = state.v[i] / b2t;
        theta[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam; the logged loss is the one at the start of each step, so each
/// iteration costs one gradient evaluation.
pub fn adam_train(
    obj: &impl Objective,
    theta: &mut [f64],
    cfg: &AdamConfig,
    opts: TrainOptions,
    metric: Option<Metric<'_>>,
) -> Result<TrainLog> {
    let mut rec = Recorder::new(opts, metric);
    let mut state = AdamState::new(theta.len());
    for it in 1..=opts.max_iter {
        let (loss, g) = obj.loss_grad(theta)?;
        if norm(&g) <= opts.grad_tol {
            return Ok(rec.finish(Termination::Converged));
        }
        adam_step(&mut state, theta, &g, cfg)?;
        if let Some(why) = rec.record(it, theta, loss, None)? {
            return Ok(rec.finish(why));
        }
    }
    Ok(rec.finish(Termination::MaxIterations))
}

/// Curvature pairs `(s, y)`, oldest first.
#[derive(Clone, Debug, Default)]
pub struct LbfgsHistory {
    pub memory: usize,
    pub pairs: VecDeque<(Vec<f64>, Vec<f64>)>,
}

impl LbfgsHistory {
    pub fn new(memory: usize) -> Self {
        Self { memory, pairs: VecDeque::new() }
    }

    /// Stores a pair when `s^T y` is safely positive.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if !(sy > 1e-12 * norm(&s) * norm(&y)) || self.memory == 0 {
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y));
        true
    }
}

/// Inverse-Hessian approximation applied to `g`, with initial scaling
/// `s^T y / y^T y` from the newest pair.
pub fn two_loop(history: &LbfgsHistory, g: &[f64]) -> Vec<f64> {
    let mut q = g.to_vec();
    let k = history.pairs.len();
    let mut alpha = vec![0.0; k];
    for (i, (s, y)) in history.pairs.iter().enumerate().rev() {
        let rho = 1.0 / dot(y, s);
        alpha[i] = rho * dot(s, &q);
        for (qj, yj) in q.iter_mut().zip(y) {
            *qj -= alpha[i] * yj;
        }
    }
    if let Some((s, y)) = history.pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (i, (s, y)) in history.pairs.iter().enumerate() {
        let rho = 1.0 / dot(y, s);
        let beta = rho * dot(y, &q);
        for (qj, sj) in q.iter_mut().zip(s) {
            *qj += (alpha[i] - beta) * sj;
        }
    }
    q
}

/// Outcome of one L-BFGS iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsStep {
    pub step: f64,
    /// The quasi-Newton direction was not a descent direction and `-grad`
    /// was used instead.
    pub used_gradient: bool,
    /// No step length satisfied the sufficient-decrease condition.
    pub line_search_failed: bool,
    pub evaluations: usize,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;

/// One L-BFGS iteration from `theta` with loss `f0` and gradient `g0`.
///
/// The line search tries the unit step, then the minimizer of the quadratic
/// through `f0`, `f0'` and the trial value, then halves. On failure along the
/// quasi-Newton direction it restarts along `-grad` with an empty history.
pub fn lbfgs_step(
    obj: &impl Objective,
    history: &mut LbfgsHistory,
    theta: &mut Vec<f64>,
    f0: f64,
    g0: &[f64],
) -> Result<(LbfgsStep, f64, Vec<f64>)> {
    check_finite("gradient", g0)?;
    let mut d: Vec<f64> = two_loop(history, g0).into_iter().map(|v| -v).collect();
    let mut slope = dot(&d, g0);
    let mut used_gradient = false;
    if !(slope < 0.0) || history.pairs.is_empty() {
        used_gradient = !history.pairs.is_empty();
        let gn = norm(g0);
        d = g0.iter().map(|v| -v / gn.max(1.0)).collect();
        slope = dot(&d, g0);
    }
    let mut evaluations = 0;
    let (t, f) = match line_search(obj, theta, &d, f0, slope, &mut evaluations)? {
        Some(ok) => ok,
        None if !used_gradient && !history.pairs.is_empty() => {
            history.pairs.clear();
            used_gradient = true;
            d = g0.iter().map(|v| -v / norm(g0).max(1.0)).collect();
            slope = dot(&d, g0);
            match line_search(obj, theta, &d, f0, slope, &mut evaluations)? {
                Some(ok) => ok,
                None => return Ok((LbfgsStep { step: 0.0, used_gradient, line_search_failed: true, evaluations }, f0, g0.to_vec())),
            }
        }
        None => return Ok((LbfgsStep { step: 0.0, used_gradient, line_search_failed: true, evaluations }, f0, g0.to_vec())),
    };
    let s: Vec<f64> = d.iter().map(|v| t * v).collect();
    for (th, si) in theta.iter_mut().zip(&s) {
        *th += si;
    }
    let (_, g1) = obj.loss_grad(theta)?;
    let y: Vec<f64> = g1.iter().zip(g0).map(|(a, b)| a - b).collect();
    history.push(s, y);
    Ok((LbfgsStep { step: t, used_gradient, line_search_failed: false, evaluations }, f, g1))
}

fn line_search(
    obj: &impl Objective,
    theta: &[f64],
    d: &[f64],
    f0: f64,
    slope: f64,
    evals: &mut usize,
) -> Result<Option<(f64, f64)>> {
    let at = |t: f64, evals: &mut usize| -> Result<f64> {
        *evals += 1;
        let x: Vec<f64> = theta.iter().zip(d).map(|(a, b)| a + t * b).collect();
        let f = obj.loss(&x)?.total;
        Ok(if f.is_finite() { f } else { f64::INFINITY })
    };
    let armijo = |t: f64, f: f64| f <= f0 + ARMIJO * t * slope;
    let f1 = at(1.0, evals)?;
    // Exact minimizer along the line for a quadratic model.
    let curv = f1 - f0 - slope;
    if f1.is_finite() && curv > 0.0 {
        let tq = -slope / (2.0 * curv);
        if (tq - 1.0).abs() > 1e-12 {
            let fq = at(tq, evals)?;
            if armijo(tq, fq) && (fq <= f1 || !armijo(1.0, f1)) {
                return Ok(Some((tq, fq)));
            }
        }
    }
    if armijo(1.0, f1) {
        return Ok(Some((1.0, f1)));
    }
    let mut t = 1.0;
    for _ in 0..MAX_HALVINGS {
        t *= 0.5;
        let f = at(t, evals)?;
        if armijo(t, f) {
            return Ok(Some((t, f)));
        }
    }
    Ok(None)
}

pub fn lbfgs_train(
    obj: &impl Objective,
    theta: &mut Vec<f64>,
    memory: usize,
    opts: TrainOptions,
    metric: Option<Metric<'_>>,
) -> Result<TrainLog> {
    let mut rec = Recorder::new(opts, metric);
    let mut history = LbfgsHistory::new(memory);
    let (mut loss, mut g) = obj.loss_grad(theta)?;
    for it in 1..=opts.max_iter {
        if norm(&g) <= opts.grad_tol {
            return Ok(rec.finish(Termination::Converged));
        }
        let (step, _, g1) = lbfgs_step(obj, &mut history, theta, loss.total, &g)?;
        if step.line_search_failed {
            log::warn!("line search failed at iteration {it}");
            return Ok(rec.finish(Termination::Stalled { doublings: 0 }));
        }
        g = g1;
        loss = obj.loss(theta)?;
        if let Some(why) = rec.record(it, theta, loss, None)? {
            return Ok(rec.finish(why));
        }
    }
    Ok(rec.finish(Termination::MaxIterations))
}
