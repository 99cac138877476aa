//! Independent oracles for the optimizers.

use faer::Mat;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tangent_core::optim::*;
use tangent_core::pde::LossParts;
use tangent_core::Result;

/// `rho = A theta - b`.
struct Linear {
    a: Mat<f64>,
    b: Vec<f64>,
}

impl Linear {
    fn random(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Self {
        let a = Mat::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        let b = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self { a, b }
    }

    fn rho(&self, t: &[f64]) -> Vec<f64> {
        (0..self.a.nrows()).map(|i| (0..self.a.ncols()).map(|j| self.a[(i, j)] * t[j]).sum::<f64>() - self.b[i]).collect()
    }

    fn grad(&self, t: &[f64]) -> Vec<f64> {
        let r = self.rho(t);
        (0..self.a.ncols()).map(|j| (0..self.a.nrows()).map(|i| self.a[(i, j)] * r[i]).sum()).collect()
    }
}

fn parts(total: f64) -> LossParts {
    LossParts { total, boundary: 0.0, residual: total }
}

impl LeastSquares for Linear {
    fn n_params(&self) -> usize {
        self.a.ncols()
    }
    fn residuals(&self, t: &[f64]) -> Result<Vec<f64>> {
        Ok(self.rho(t))
    }
    fn jacobian(&self, t: &[f64]) -> Result<(Vec<f64>, Mat<f64>)> {
        Ok((self.rho(t), self.a.clone()))
    }
    fn second_directional(&self, _: &[f64], _: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.a.nrows()])
    }
}

impl Objective for Linear {
    fn n_params(&self) -> usize {
        self.a.ncols()
    }
    fn loss(&self, t: &[f64]) -> Result<LossParts> {
        Ok(parts(0.5 * self.rho(t).iter().map(|r| r * r).sum::<f64>()))
    }
    fn loss_grad(&self, t: &[f64]) -> Result<(LossParts, Vec<f64>)> {
        Ok((self.loss(t)?, self.grad(t)))
    }
}

/// One row `rho(theta) = theta^2 - c`.
struct Square(f64);

impl LeastSquares for Square {
    fn n_params(&self) -> usize {
        1
    }
    fn residuals(&self, t: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![t[0] * t[0] - self.0])
    }
    fn jacobian(&self, t: &[f64]) -> Result<(Vec<f64>, Mat<f64>)> {
        Ok((self.residuals(t)?, Mat::from_fn(1, 1, |_, _| 2.0 * t[0])))
    }
    fn second_directional(&self, _: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![2.0 * v[0] * v[0]])
    }
}

/// Rosenbrock as least squares: `rho = (10 (y - x^2), 1 - x)`.
struct Rosenbrock;

impl LeastSquares for Rosenbrock {
    fn n_params(&self) -> usize {
        2
    }
    fn residuals(&self, t: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![10.0 * (t[1] - t[0] * t[0]), 1.0 - t[0]])
    }
    fn jacobian(&self, t: &[f64]) -> Result<(Vec<f64>, Mat<f64>)> {
        let j = Mat::from_fn(2, 2, |i, k| match (i, k) {
            (0, 0) => -20.0 * t[0],
            (0, 1) => 10.0,
            (1, 0) => -1.0,
            _ => 0.0,
        });
        Ok((self.residuals(t)?, j))
    }
    fn second_directional(&self, _: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![-20.0 * v[0] * v[0], 0.0])
    }
}

fn dense_solve(a: &Mat<f64>, b: &[f64]) -> Vec<f64> {
    // Gaussian elimination with partial pivoting.
    let n = a.nrows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a[(i, j)]).chain([b[i]]).collect()).collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        m.swap(c, piv);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..=n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r][k] * x[k]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    x
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn gradient_descent_closed_forms() {
    let mut t = vec![1.0, -2.0];
    gd_step(&mut t, &[0.0, 0.0], 0.1).unwrap();
    assert_eq!(t, vec![1.0, -2.0]);
    // L = 0.5 ||theta||^2
    let g = t.clone();
    gd_step(&mut t, &g, 0.25).unwrap();
    assert_eq!(t, vec![0.75, -1.5]);
    assert!(gd_step(&mut t, &[f64::NAN, 0.0], 0.1).is_err());
    assert!(gd_step(&mut t, &[0.0, 0.0], 0.0).is_err());
}

#[test]
fn adam_matches_scalar_reimplementation() {
    let cfg = AdamConfig::default();
    let mut st = AdamState::new(3);
    let mut t = vec![0.5, -0.2, 1.0];
    adam_step(&mut st, &mut t, &[0.0; 3], &cfg).unwrap();
    assert_eq!(t, vec![0.5, -0.2, 1.0]);

    let mut st = AdamState::new(2);
    let mut t = vec![0.0, 0.0];
    adam_step(&mut st, &mut t, &[3.0, -1e-3], &cfg).unwrap();
    assert!((t[0] + 1e-3).abs() < 1e-10 && (t[1] - 1e-3 * 1e-3 / (1e-3 + 1e-8)).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 4;
    let mut st = AdamState::new(n);
    let mut t: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut oracle = t.clone();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    for step in 1..=100 {
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        adam_step(&mut st, &mut t, &g, &cfg).unwrap();
        for i in 0..n {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(step));
            let vh = v[i] / (1.0 - 0.999f64.powi(step));
            oracle[i] -= 1e-3 * mh / (vh.sqrt() + 1e-8);
        }
    }
    for i in 0..n {
        assert!((t[i] - oracle[i]).abs() <= 1e-12, "{} vs {}", t[i], oracle[i]);
    }
}

#[test]
fn two_loop_equals_dense_bfgs() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 5;
    // SPD Hessian for curvature pairs y = H s.
    let b = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = Mat::from_fn(n, n, |i, j| (0..n).map(|k| b[(k, i)] * b[(k, j)]).sum::<f64>() + if i == j { 0.5 } else { 0.0 });
    let mut hist = LbfgsHistory::new(10);
    for _ in 0..4 {
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[(i, j)] * s[j]).sum()).collect();
        assert!(hist.push(s, y));
    }
    let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ours = two_loop(&hist, &g);
    // Dense inverse BFGS updates from gamma I.
    let (sl, yl) = hist.pairs.back().unwrap();
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let gamma = d(sl, yl) / d(yl, yl);
    let mut hm = vec![vec![0.0; n]; n];
    for (i, row) in hm.iter_mut().enumerate() {
        row[i] = gamma;
    }
    for (s, y) in &hist.pairs {
        let rho = 1.0 / d(y, s);
        // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
        let v = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 } - rho * s[i] * y[j];
        let mut left = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                left[i][j] = (0..n).map(|k| v(i, k) * hm[k][j]).sum();
            }
        }
        for i in 0..n {
            for j in 0..n {
                hm[i][j] = (0..n).map(|k| left[i][k] * v(j, k)).sum::<f64>() + rho * s[i] * s[j];
            }
        }
    }
    let dense: Vec<f64> = (0..n).map(|i| d(&hm[i], &g)).collect();
    for i in 0..n {
        assert!((ours[i] - dense[i]).abs() <= 1e-10 * (1.0 + dense[i].abs()));
    }
}

#[test]
fn lbfgs_terminates_on_a_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dim = 6;
    let prob = Linear::random(&mut rng, 10, dim);
    // Empty history steps along -grad.
    let mut hist = LbfgsHistory::new(10);
    let mut t = vec![0.0; dim];
    let (l0, g0) = prob.loss_grad(&t).unwrap();
    let (step, _, _) = lbfgs_step(&prob, &mut hist, &mut t, l0.total, &g0).unwrap();
    let cos = -t.iter().zip(&g0).map(|(a, b)| a * b).sum::<f64>() / (norm(&t) * norm(&g0));
    assert!((cos - 1.0).abs() < 1e-12 && step.step > 0.0);

    let mut t = vec![0.0; dim];
    let log = lbfgs_train(&prob, &mut t, 10, TrainOptions { grad_tol: 1e-10, ..TrainOptions::iterations(dim + 1) }, None).unwrap();
    let (_, g) = prob.loss_grad(&t).unwrap();
    assert!(norm(&g) <= 1e-10, "grad {:e} after {} iterations", norm(&g), log.records.len());
}

#[test]
fn damped_solves_match_dense_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // J = I, lambda ~ 0: v = -rho.
    let rho: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sys = LmSystem::new(Mat::identity(4, 4), rho.clone()).unwrap();
    let s = sys.solve(1e-300, 1e10).unwrap();
    assert!(s.v.iter().zip(&rho).all(|(v, r)| (v + r).abs() < 1e-14));
    // J^T J = I, lambda = 1: v = -grad / 2.
    let s = sys.solve(1.0, 1e10).unwrap();
    assert!(s.v.iter().zip(&sys.grad).all(|(v, g)| (v + 0.5 * g).abs() < 1e-14));

    for (n, p) in [(30, 12), (8, 20)] {
        let prob = Linear::random(&mut rng, n, p);
        let t: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (rho, jac) = prob.jacobian(&t).unwrap();
        let sys = LmSystem::new(jac.clone(), rho).unwrap();
        let lambda = 0.37;
        let state = LmState { lambda, ..LmState::new(&LmConfig::default()).unwrap() };
        let (v, rep) = lm_step(&sys, &state).unwrap();
        let a = Mat::from_fn(p, p, |i, j| (0..n).map(|k| jac[(k, i)] * jac[(k, j)]).sum::<f64>() + if i == j { lambda } else { 0.0 });
        let oracle: Vec<f64> = dense_solve(&a, &sys.grad).into_iter().map(|x| -x).collect();
        let diff: Vec<f64> = v.iter().zip(&oracle).map(|(a, b)| a - b).collect();
        assert!(norm(&diff) <= 1e-9 * norm(&oracle));
        assert!(rep.residual <= 1e-10, "{n}x{p}: {:e}", rep.residual);
    }
}

#[test]
fn gain_ratio_cases() {
    let rho = [1.0, 2.0];
    let v = [0.1, -0.3];
    let g = [0.5, 0.25];
    assert_eq!(lm_criterion(&rho, &rho, &v, &g, 0.2), 0.0);
    assert_eq!(lm_criterion(&rho, &[f64::NAN, 0.0], &v, &g, 0.2), f64::NEG_INFINITY);
    assert_eq!(lm_criterion(&rho, &[0.0, 0.0], &[0.0, 0.0], &g, 0.2), f64::NEG_INFINITY);

    // One parameter, rho(theta) = 3 theta - 1 at theta = 1, lambda = 0.5.
    let (theta, lambda) = (1.0f64, 0.5f64);
    let r0 = 3.0 * theta - 1.0;
    let grad = 3.0 * r0;
    let v = -grad / (9.0 + lambda);
    let r1 = 3.0 * (theta + v) - 1.0;
    let expect = (r0 * r0 - r1 * r1) / (v * (lambda * v - grad));
    let got = lm_criterion(&[r0], &[r1], &[v], &[grad], lambda);
    assert!((got - expect).abs() <= 1e-12 * expect.abs());
    // Undamped step on a linear model is the exact minimizer: ratio one.
    let v = -grad / 9.0;
    let r1 = 3.0 * (theta + v) - 1.0;
    let c = lm_criterion(&[r0], &[r1], &[v], &[grad], 0.0);
    assert!(c > 0.0 && (c - 1.0).abs() < 1e-12);
}

#[test]
fn geodesic_acceleration_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let prob = Linear::random(&mut rng, 7, 4);
    let t = vec![0.3; 4];
    let (rho, jac) = prob.jacobian(&t).unwrap();
    let sys = LmSystem::new(jac, rho).unwrap();
    let a = geodesic_acceleration(&prob, &t, &[0.1, 0.2, -0.3, 0.4], &sys, 0.1).unwrap();
    assert!(a.iter().all(|x| *x == 0.0));

    let sq = Square(2.0);
    for (theta, v, lambda) in [(0.7, 0.3, 0.2), (-1.3, -0.05, 1e-3), (0.4, 0.0, 0.5)] {
        let (rho, jac) = sq.jacobian(&[theta]).unwrap();
        let sys = LmSystem::new(jac, rho).unwrap();
        let a = geodesic_acceleration(&sq, &[theta], &[v], &sys, lambda).unwrap();
        let expect = -(2.0 * theta) * (2.0 * v * v) / (4.0 * theta * theta + lambda);
        assert!((a[0] - expect).abs() <= 1e-12 * (1.0 + expect.abs()), "{} vs {expect}", a[0]);
    }
}

/// Checks the damping schedule of a run against its log.
fn assert_schedule(log: &TrainLog, cfg: &LmConfig) {
    let lmin = 1.0 / cfg.lambda_max;
    let mut prev = cfg.lambda0;
    for (it, rec) in log.lm.iter().zip(&log.records) {
        assert_eq!(it.lambda_start, prev);
        let mut lam = prev;
        for _ in 0..it.doublings {
            lam = (2.0 * lam).min(cfg.lambda_max);
        }
        if it.solve.retries == 0 {
            assert_eq!(it.lambda_accepted, lam);
        }
        assert_eq!(it.lambda_next, (it.lambda_accepted / 3.0).max(lmin));
        assert_eq!(rec.lambda, Some(it.lambda_next));
        assert!(it.lambda_next >= lmin && it.lambda_next <= cfg.lambda_max);
        assert!(it.criterion >= cfg.tol);
        prev = it.lambda_next;
    }
}

#[test]
fn damped_gauss_newton_on_linear_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cfg = LmConfig::default();
    for trial in 0..5 {
        let prob = Linear::random(&mut rng, 20, 8);
        let mut t: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (_, log) = lm_train(&prob, &mut t, &cfg, TrainOptions { grad_tol: 1e-10, ..TrainOptions::iterations(20) }, None).unwrap();
        let g = prob.grad(&t);
        assert!(norm(&g) <= 1e-10, "trial {trial}: {:e}", norm(&g));
        assert_eq!(log.termination, Some(Termination::Converged));
        assert_schedule(&log, &cfg);
        for it in &log.lm {
            assert!(it.solve.residual <= 1e-10);
            assert_ne!(it.geodesic, GeodesicOutcome::Reverted);
        }
        // Same fixed point as the normal equations.
        let a = Mat::from_fn(8, 8, |i, j| (0..20).map(|k| prob.a[(k, i)] * prob.a[(k, j)]).sum::<f64>());
        let atb: Vec<f64> = (0..8).map(|j| (0..20).map(|k| prob.a[(k, j)] * prob.b[k]).sum()).collect();
        let gn = dense_solve(&a, &atb);
        let diff: Vec<f64> = t.iter().zip(&gn).map(|(a, b)| a - b).collect();
        assert!(norm(&diff) <= 1e-6);
    }
}

#[test]
fn damped_gauss_newton_on_rosenbrock() {
    let cfg = LmConfig::default();
    let mut t = vec![-1.2, 1.0];
    let (_, log) = lm_train(&Rosenbrock, &mut t, &cfg, TrainOptions { grad_tol: 1e-12, ..TrainOptions::iterations(200) }, None).unwrap();
    assert!((t[0] - 1.0).abs() < 1e-8 && (t[1] - 1.0).abs() < 1e-8, "{t:?}");
    assert_schedule(&log, &cfg);
    let losses: Vec<f64> = log.records.iter().map(|r| r.loss).collect();
    assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
    assert!(log.lm.iter().any(|i| i.geodesic == GeodesicOutcome::Applied));

    // tol = 0 accepts any step that does not raise the squared loss.
    let cfg0 = LmConfig { tol: 0.0, ..cfg };
    let mut t = vec![-1.2, 1.0];
    let (_, log) = lm_train(&Rosenbrock, &mut t, &cfg0, TrainOptions::iterations(30), None).unwrap();
    assert_schedule(&log, &cfg0);
}

#[test]
fn invalid_damping_settings_rejected() {
    let ok = LmConfig::default();
    assert!(LmState::new(&LmConfig { tol: 0.25, ..ok }).is_err());
    assert!(LmState::new(&LmConfig { alpha: 1.0, ..ok }).is_err());
    assert!(LmState::new(&LmConfig { lambda0: 2e10, ..ok }).is_err());
    assert!(LmState::new(&LmConfig { lambda0: 0.0, ..ok }).is_err());
    assert!(LmState::new(&LmConfig { lambda0: 1e-11, ..ok }).is_err());
    assert!(LmState::new(&LmConfig { lambda_max: 0.5, lambda0: 0.1, ..ok }).is_err());
    assert!(LmState::new(&LmConfig { lambda_max: 1e3, lambda0: 1e-3, ..ok }).is_ok());
}

#[test]
fn gauss_newton_flow_on_linear_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // Overdetermined: one unit step is the least-squares projection.
    let prob = Linear::random(&mut rng, 12, 5);
    let t0 = vec![0.0; 5];
    let traj = gauss_newton_flow(&prob, &t0, 1.0, 1, 1e-10).unwrap();
    assert!(norm(&prob.grad(&traj.theta)) <= 1e-10);
    for s in &traj.steps {
        assert!(s.spectrum.eigenvalues.iter().all(|&e| e == 0.0 || e == 1.0));
        assert_eq!(s.spectrum.rank, 5);
    }
    // Full row rank: outputs decay like (1 - step)^t.
    let prob = Linear::random(&mut rng, 4, 9);
    let step = 0.2;
    let traj = gauss_newton_flow(&prob, &[0.0; 9], step, 5, 1e-10).unwrap();
    let r0 = norm(&prob.rho(&[0.0; 9]));
    let rt = norm(&prob.rho(&traj.theta));
    assert!((rt - r0 * (1.0f64 - step).powi(5)).abs() <= 1e-10 * r0);
    for s in &traj.steps {
        let d: Vec<f64> = s.output_increment.iter().zip(&s.predicted_increment).map(|(a, b)| a - b).collect();
        assert!(norm(&d) <= 1e-10 * (1.0 + norm(&s.predicted_increment)));
        assert!(s.spectrum.realized.iter().all(|e| (e - 1.0).abs() < 1e-3));
    }
}

#[test]
fn curriculum_warm_starts() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let prob = Linear::random(&mut rng, 10, 3);
    let opts = TrainOptions::iterations(5);
    let plain = {
        let mut t = vec![0.0; 3];
        gd_train(&prob, &mut t, 0.05, opts, None).unwrap();
        t
    };
    let (single, log) = curriculum(&[1.0], vec![0.0; 3], |_, _, mut t| {
        let l = gd_train(&prob, &mut t, 0.05, opts, None)?;
        Ok((t, l))
    })
    .unwrap();
    assert_eq!(single, plain);
    assert_eq!(log.stages.len(), 1);

    let mut seen: Vec<Vec<f64>> = Vec::new();
    let mut ends: Vec<Vec<f64>> = Vec::new();
    let (_, log) = curriculum(&[1.0, 2.0, 3.0], vec![0.0; 3], |_, _, mut t| {
        seen.push(t.clone());
        let l = gd_train(&prob, &mut t, 0.05, opts, None)?;
        ends.push(t.clone());
        Ok((t, l))
    })
    .unwrap();
    assert_eq!(seen[1], ends[0]);
    assert_eq!(seen[2], ends[1]);
    let iters: Vec<usize> = log.records.iter().map(|r| r.iter).collect();
    assert_eq!(iters, (1..=15).collect::<Vec<_>>());
    assert_eq!(log.stages.iter().map(|s| s.first_record).collect::<Vec<_>>(), vec![0, 5, 10]);
    assert!(curriculum(&[2.0, 1.0], vec![0.0], |_, _, t| Ok((t, TrainLog::default()))).is_err());
}

#[test]
fn log_csv_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let prob = Linear::random(&mut rng, 6, 2);
    let mut t = vec![0.0; 2];
    let metric = |t: &[f64]| Ok(norm(t));
    let log = gd_train(&prob, &mut t, 0.1, TrainOptions { eval_every: 2, ..TrainOptions::iterations(4) }, Some(&metric)).unwrap();
    let mut buf = Vec::new();
    log.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "iter,loss,loss_b,loss_r,rel_l2,lambda,wall_ms");
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[1].split(',').nth(4), Some(""));
    assert!(!lines[2].split(',').nth(4).unwrap().is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn damped_step_solves_normal_equations(seed in 0u64..10_000, log_lambda in -8.0f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..25);
        let p = rng.random_range(1..25);
        let prob = Linear::random(&mut rng, n, p);
        let t: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (rho, jac) = prob.jacobian(&t).unwrap();
        let sys = LmSystem::new(jac, rho).unwrap();
        let s = sys.solve(10f64.powf(log_lambda), 1e10).unwrap();
        prop_assert!(s.report.residual <= 1e-10, "residual {:e}", s.report.residual);
        // Damped steps never point uphill.
        let slope: f64 = s.v.iter().zip(&sys.grad).map(|(a, b)| a * b).sum();
        prop_assert!(slope <= 0.0);
    }

    #[test]
    fn accepted_steps_never_increase_the_loss(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let l0 = 0.5 * norm(&Rosenbrock.residuals(&t).unwrap()).powi(2);
        let (_, log) = lm_train(&Rosenbrock, &mut t, &LmConfig::default(), TrainOptions::iterations(25), None).unwrap();
        let losses: Vec<f64> = std::iter::once(l0).chain(log.records.iter().map(|r| r.loss)).collect();
        prop_assert!(losses.windows(2).all(|w| w[1] <= w[0]));
    }
}
