//! Optimizers: gradient descent, Adam, L-BFGS, damped Gauss-Newton
//! (Levenberg-Marquardt with geodesic acceleration), a Gauss-Newton flow
//! integrator and curriculum scheduling.

mod first_order;
mod flow;
mod lm;

pub use first_order::{adam_step, adam_train, gd_step, gd_train, lbfgs_step, lbfgs_train, two_loop, AdamConfig, AdamState, LbfgsHistory, LbfgsStep};
pub use flow::{gauss_newton_flow, FlowStep, FlowTrajectory, FLOW_MAX_PARAMS, FLOW_MAX_ROWS};
pub use lm::{geodesic_acceleration, lm_criterion, lm_step, lm_train, GeodesicOutcome, LmConfig, LmIteration, LmState, LmSystem, SolveReport, Solved};

use std::io::Write;
use std::time::{Duration, Instant};

use faer::Mat;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pde::{fmt17, LossParts, PinnProblem};

/// A scalar loss with its gradient.
pub trait Objective {
    fn n_params(&self) -> usize;
    fn loss(&self, theta: &[f64]) -> Result<LossParts>;
    fn loss_grad(&self, theta: &[f64]) -> Result<(LossParts, Vec<f64>)>;
}

/// A loss `0.5 * ||rho||^2` with access to `rho`, its Jacobian and second
/// directional derivatives.
pub trait LeastSquares {
    fn n_params(&self) -> usize;
    /// Leading rows counted as the boundary block in loss splits.
    fn n_boundary(&self) -> usize {
        0
    }
    fn residuals(&self, theta: &[f64]) -> Result<Vec<f64>>;
    fn jacobian(&self, theta: &[f64]) -> Result<(Vec<f64>, Mat<f64>)>;
    /// `v^T H_i v` for every row `i`.
    fn second_directional(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>>;

    fn split_loss(&self, rho: &[f64]) -> LossParts {
        let nb = self.n_boundary().min(rho.len());
        let boundary = 0.5 * rho[..nb].iter().map(|r| r * r).sum::<f64>();
        let residual = 0.5 * rho[nb..].iter().map(|r| r * r).sum::<f64>();
        LossParts { total: boundary + residual, boundary, residual }
    }
}

impl Objective for PinnProblem<'_> {
    fn n_params(&self) -> usize {
        PinnProblem::n_params(self)
    }

    fn loss(&self, theta: &[f64]) -> Result<LossParts> {
        PinnProblem::loss(self, theta)
    }

    fn loss_grad(&self, theta: &[f64]) -> Result<(LossParts, Vec<f64>)> {
        self.gradient(theta)
    }
}

impl LeastSquares for PinnProblem<'_> {
    fn n_params(&self) -> usize {
        PinnProblem::n_params(self)
    }

    fn n_boundary(&self) -> usize {
        PinnProblem::n_boundary(self)
    }

    fn residuals(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.residual_vector(theta)
    }

    fn jacobian(&self, theta: &[f64]) -> Result<(Vec<f64>, Mat<f64>)> {
        PinnProblem::jacobian(self, theta, true)
    }

    fn second_directional(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        PinnProblem::second_directional(self, theta, v)
    }
}

/// One logged iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRecord {
    pub iter: usize,
    pub loss: f64,
    pub loss_b: f64,
    pub loss_r: f64,
    pub rel_l2: Option<f64>,
    pub lambda: Option<f64>,
    /// Milliseconds since the start of the run.
    pub wall_ms: f64,
}

/// Start of a curriculum stage inside a concatenated log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageMarker {
    pub stage: usize,
    pub value: f64,
    /// Index into `records` of the first row of the stage.
    pub first_record: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIterations,
    TargetReached,
    TimeLimit,
    /// Gradient norm fell below the configured tolerance.
    Converged,
    /// The damping loop hit its doubling cap without an acceptable step.
    Stalled { doublings: usize },
    /// Damped normal equations could not be factored.
    FactorizationFailed,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    pub stages: Vec<StageMarker>,
    pub termination: Option<Termination>,
    /// Per-iteration damping details for damped Gauss-Newton runs.
    #[serde(skip)]
    pub lm: Vec<LmIteration>,
}

pub const LOG_HEADER: &str = "iter,loss,loss_b,loss_r,rel_l2,lambda,wall_ms";

impl TrainLog {
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{LOG_HEADER}")?;
        for r in &self.records {
            let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.iter,
                fmt17(r.loss),
                fmt17(r.loss_b),
                fmt17(r.loss_r),
                opt(r.rel_l2),
                opt(r.lambda),
                fmt17(r.wall_ms)
            )?;
        }
        Ok(())
    }

    pub fn write_stages_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "stage,value,first_iter")?;
        for s in &self.stages {
            let it = self.records.get(s.first_record).map(|r| r.iter.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{}", s.stage, fmt17(s.value), it)?;
        }
        Ok(())
    }

    pub fn last(&self) -> Option<&LogRecord> {
        self.records.last()
    }

    /// Last logged relative error.
    pub fn final_rel_l2(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.rel_l2)
    }

    pub fn best_rel_l2(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.rel_l2).reduce(f64::min)
    }
}

/// Stopping rules and evaluation cadence shared by the training loops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub max_iter: usize,
    /// Evaluate the error metric every this many iterations (0 = never).
    pub eval_every: usize,
    /// Stop once the error metric is at or below this value.
    pub target: Option<f64>,
    pub time_limit: Option<Duration>,
    /// Stop when `||grad L||` falls to this value.
    pub grad_tol: f64,
}

impl TrainOptions {
    pub fn iterations(max_iter: usize) -> Self {
        Self { max_iter, eval_every: 0, target: None, time_limit: None, grad_tol: 0.0 }
    }
}

/// Error metric evaluated on parameters, e.g. relative L2 on a grid.
pub type Metric<'m> = &'m dyn Fn(&[f64]) -> Result<f64>;

/// Shared bookkeeping for the training loops.
pub(crate) struct Recorder<'m> {
    start: Instant,
    opts: TrainOptions,
    metric: Option<Metric<'m>>,
    pub log: TrainLog,
}

impl<'m> Recorder<'m> {
    pub fn new(opts: TrainOptions, metric: Option<Metric<'m>>) -> Self {
        Self { start: Instant::now(), opts, metric, log: TrainLog::default() }
    }

    /// Logs iteration `iter` and returns a termination reason if a stopping
    /// rule fires.
    pub fn record(&mut self, iter: usize, theta: &[f64], loss: LossParts, lambda: Option<f64>) -> Result<Option<Termination>> {
        if !loss.total.is_finite() {
            return Err(Error::NonFinite(format!("loss at iteration {iter}")));
        }
        let evaluate = self.opts.eval_every > 0 && (iter % self.opts.eval_every == 0 || iter == self.opts.max_iter);
        let rel_l2 = match (self.metric, evaluate) {
            (Some(m), true) => Some(m(theta)?),
            _ => None,
        };
        let wall_ms = self.start.elapsed().as_secs_f64() * 1e3;
        self.log.records.push(LogRecord {
            iter,
            loss: loss.total,
            loss_b: loss.boundary,
            loss_r: loss.residual,
            rel_l2,
            lambda,
            wall_ms,
        });
        if let (Some(t), Some(e)) = (self.opts.target, rel_l2) {
            if e <= t {
                return Ok(Some(Termination::TargetReached));
            }
        }
        if let Some(limit) = self.opts.time_limit {
            if self.start.elapsed() >= limit {
                return Ok(Some(Termination::TimeLimit));
            }
        }
        if iter >= self.opts.max_iter {
            return Ok(Some(Termination::MaxIterations));
        }
        Ok(None)
    }

    pub fn finish(mut self, why: Termination) -> TrainLog {
        self.log.termination = Some(why);
        self.log
    }
}

/// Runs `stage` once per schedule value, warm-starting each stage from the
/// previous parameters, and concatenates the logs with stage markers.
pub fn curriculum(
    schedule: &[f64],
    theta: Vec<f64>,
    mut stage: impl FnMut(usize, f64, Vec<f64>) -> Result<(Vec<f64>, TrainLog)>,
) -> Result<(Vec<f64>, TrainLog)> {
    if schedule.is_empty() {
        return Err(Error::InvalidArgument("empty curriculum schedule".into()));
    }
    if schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("curriculum schedule must be strictly ascending".into()));
    }
    let mut theta = theta;
    let mut out = TrainLog::default();
    let mut iter_offset = 0;
    let mut ms_offset = 0.0;
    for (i, &value) in schedule.iter().enumerate() {
        let (next, log) = stage(i, value, theta)?;
        theta = next;
        out.stages.push(StageMarker { stage: i, value, first_record: out.records.len() });
        let (last_iter, last_ms) = log.last().map(|r| (r.iter, r.wall_ms)).unwrap_or((0, 0.0));
        out.records.extend(log.records.into_iter().map(|mut r| {
            r.iter += iter_offset;
            r.wall_ms += ms_offset;
            r
        }));
        out.lm.extend(log.lm);
        out.termination = log.termination;
        iter_offset += last_iter;
        ms_offset += last_ms;
    }
    Ok((theta, out))
}
