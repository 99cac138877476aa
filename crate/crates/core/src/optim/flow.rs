use super::LeastSquares;
use crate::error::{Error, Result};
use crate::kernel::{projector_spectrum, JacobianMatrix, ProjectorSpectrum};
use crate::linalg::{self, norm};

pub const FLOW_MAX_PARAMS: usize = 2000;
pub const FLOW_MAX_ROWS: usize = 200;

/// One explicit Euler step of the Gauss-Newton flow.
#[derive(Clone, Debug)]
pub struct FlowStep {
    pub loss: f64,
    /// Projector spectrum of the Jacobian at the start of the step.
    pub spectrum: ProjectorSpectrum,
    /// `rho_{k+1} - rho_k`.
    pub output_increment: Vec<f64>,
    /// `-step * U_r U_r^T rho_k`.
    pub predicted_increment: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct FlowTrajectory {
    pub theta: Vec<f64>,
    pub steps: Vec<FlowStep>,
    pub final_loss: f64,
}

/// Integrates `d theta/dt = -(J^T J)^+ grad L` by explicit Euler with an
/// SVD-thresholded pseudoinverse.
pub fn gauss_newton_flow(
    problem: &impl LeastSquares,
    theta: &[f64],
    step: f64,
    n_steps: usize,
    rank_tolerance: f64,
) -> Result<FlowTrajectory> {
    let p = problem.n_params();
    if p > FLOW_MAX_PARAMS {
        return Err(Error::SizeCap { what: "Gauss-Newton flow parameter count".into(), count: p, cap: FLOW_MAX_PARAMS });
    }
    if !(step > 0.0) {
        return Err(Error::InvalidParameter { name: "step".into(), value: step, reason: "must be positive".into() });
    }
    let mut theta = theta.to_vec();
    let mut steps = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let (rho, jac) = problem.jacobian(&theta)?;
        if rho.len() > FLOW_MAX_ROWS {
            return Err(Error::SizeCap { what: "Gauss-Newton flow rows".into(), count: rho.len(), cap: FLOW_MAX_ROWS });
        }
        let (u, s, v) = linalg::thin_svd(jac.as_ref())?;
        let smax = s.first().copied().unwrap_or(0.0);
        let r = s.iter().take_while(|&&x| x > rank_tolerance * smax && x > 0.0).count();
        // (J^T J)^+ J^T rho = V_r S_r^-1 U_r^T rho
        let ur = u.get(.., ..r);
        let coef: Vec<f64> = linalg::mat_t_vec(ur, &rho).iter().zip(&s).map(|(c, sv)| c / sv).collect();
        let vr = v.get(.., ..r);
        let dtheta = linalg::mat_vec(vr, &coef);
        let proj = linalg::mat_vec(ur, &linalg::mat_t_vec(ur, &rho));
        let predicted_increment: Vec<f64> = proj.iter().map(|x| -step * x).collect();
        for (t, d) in theta.iter_mut().zip(&dtheta) {
            *t -= step * d;
        }
        let rho_next = problem.residuals(&theta)?;
        let output_increment = rho_next.iter().zip(&rho).map(|(a, b)| a - b).collect();
        let jm = JacobianMatrix { mat: jac, rho: rho.clone(), n_boundary: problem.n_boundary(), scaled: true };
        let spectrum = projector_spectrum(&jm, rank_tolerance)?;
        steps.push(FlowStep { loss: 0.5 * norm(&rho).powi(2), spectrum, output_increment, predicted_increment });
    }
    let final_loss = 0.5 * norm(&problem.residuals(&theta)?).powi(2);
    Ok(FlowTrajectory { theta, steps, final_loss })
}
