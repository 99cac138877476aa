//! Jacobians, kernels, residual Hessians and spectral diagnostics.

use faer::Mat;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tangent_core::jets::{hessian_vector, reverse_sweep, Component, DerivMask};
use tangent_core::kernel::*;
use tangent_core::net::{forward_jet, init_gaussian, MlpParams, Points};
use tangent_core::pde::{make_spec, sample, CollocationSet, PinnProblem, ResidualSelector, Strategy};

/// One-sided Jacobi SVD; returns singular values in descending order.
fn jacobi_singular_values(a: &Mat<f64>) -> Vec<f64> {
    // Work on the wide side's transpose so columns are the short dimension.
    let (n, p) = (a.nrows(), a.ncols());
    let mut cols: Vec<Vec<f64>> = if n <= p {
        (0..n).map(|i| (0..p).map(|j| a[(i, j)]).collect()).collect()
    } else {
        (0..p).map(|j| (0..n).map(|i| a[(i, j)]).collect()).collect()
    };
    let k = cols.len();
    for _sweep in 0..60 {
        let mut off: f64 = 0.0;
        for i in 0..k {
            for j in i + 1..k {
                let alpha: f64 = cols[i].iter().map(|x| x * x).sum();
                let beta: f64 = cols[j].iter().map(|x| x * x).sum();
                let gamma: f64 = cols[i].iter().zip(&cols[j]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..cols[i].len() {
                    let (x, y) = (cols[i][r], cols[j][r]);
                    cols[i][r] = c * x - s * y;
                    cols[j][r] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut s: Vec<f64> = cols.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

fn jacobian_of(mat: Mat<f64>) -> JacobianMatrix {
    let n = mat.nrows();
    JacobianMatrix { mat, rho: vec![0.0; n], n_boundary: 0, scaled: false }
}

fn random_mat(n: usize, p: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
    Mat::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0))
}

fn data_for(spec_name: &str, n_r: usize, n_b: usize, seed: u64) -> CollocationSet {
    let spec = make_spec(spec_name, &[]).unwrap();
    sample(&spec, n_r, n_b, Strategy::UniformRandom, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn zero_parameter_network_rows() {
    let spec = make_spec("poisson_toy_linear", &[]).unwrap();
    let data = data_for("poisson_toy_linear", 3, 2, 1);
    let m = 6;
    let p = init_gaussian(&[1, m, 1], 0).unwrap();
    let zero = p.with_theta(vec![0.0; p.n_params()]).unwrap();
    let j = assemble_jacobian(&zero, &spec, &data, false).unwrap();
    assert_eq!(j.nrows(), 5);
    let layers = zero.layers();
    for row in 0..2 {
        assert_eq!(j.mat[(row, layers[1].bias_range().start)], 1.0);
        for c in layers[1].weight_range() {
            assert_eq!(j.mat[(row, c)], 0.0);
        }
    }
}

#[test]
fn jacobian_matches_finite_differences() {
    let spec = make_spec("poisson_toy_linear", &[]).unwrap();
    let data = data_for("poisson_toy_linear", 5, 2, 2);
    let p = init_gaussian(&[1, 8, 1], 3).unwrap();
    let j = assemble_jacobian(&p, &spec, &data, false).unwrap();
    let prob = PinnProblem::new(&p.arch, &spec, &data).unwrap();
    let raw = |th: &[f64]| {
        let (b, r) = prob.raw(th).unwrap();
        [b, r].concat()
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for c in 0..p.n_params() {
        let mut tp = p.theta.clone();
        tp[c] += h;
        let mut tm = p.theta.clone();
        tm[c] -= h;
        let (fp, fm) = (raw(&tp), raw(&tm));
        for row in 0..j.nrows() {
            let fd = (fp[row] - fm[row]) / (2.0 * h);
            worst = worst.max((fd - j.mat[(row, c)]).abs() / (1.0 + j.mat[(row, c)].abs()));
        }
    }
    assert!(worst <= 1e-6, "{worst:e}");

    // Residual rows of a linear operator are a fixed combination of jet rows.
    let comps = spec.phi_components();
    let grad_r = spec.operator_gradient(&vec![0.0; comps.len()]);
    let phi = phi_jacobian_at(&p, spec.mask, &data.residual).unwrap();
    for i in 0..5 {
        for c in 0..p.n_params() {
            let combo: f64 = (0..comps.len()).map(|a| grad_r[a] * phi[(i * comps.len() + a, c)]).sum();
            assert!((combo - j.mat[(2 + i, c)]).abs() <= 1e-12 * (1.0 + combo.abs()));
        }
    }
}

#[test]
fn kernel_examples() {
    let id = kernel(&jacobian_of(Mat::identity(2, 2))).unwrap();
    assert_eq!(id.eigenvalues, vec![1.0, 1.0]);
    assert_eq!(id.k, Mat::<f64>::identity(2, 2));
    let row = kernel(&jacobian_of(Mat::from_fn(1, 2, |_, j| (j + 1) as f64))).unwrap();
    assert_eq!(row.k[(0, 0)], 5.0);
    assert_eq!(row.spectral_norm, 5.0);

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let a = random_mat(10, 40, &mut rng);
    let snap = kernel(&jacobian_of(a.clone())).unwrap();
    let s = jacobi_singular_values(&a);
    for (ev, sv) in snap.eigenvalues.iter().zip(&s) {
        assert!((ev - sv * sv).abs() <= 1e-10 * sv * sv, "{ev} vs {}", sv * sv);
    }
}

#[test]
fn kernel_factorization_reconstructs() {
    for (name, widths) in [
        ("poisson_toy_linear", vec![1, 16, 1]),
        ("burgers_toy_nonlinear", vec![1, 16, 1]),
        ("poisson_highfreq", vec![1, 12, 12, 1]),
        ("convection", vec![2, 10, 1]),
        ("wave", vec![2, 10, 1]),
        ("burgers", vec![2, 10, 10, 1]),
    ] {
        let spec = make_spec(name, &[]).unwrap();
        let data = data_for(name, 12, 4, 5);
        let p = init_gaussian(&widths, 6).unwrap();
        for scaled in [false, true] {
            let d = decompose(&p, &spec, &data, scaled).unwrap();
            assert!(d.reconstruction_error <= 1e-10, "{name}: {:e}", d.reconstruction_error);
            let k = &d.k;
            let nrm = tangent_core::linalg::sym_spectral_norm(k.as_ref()).unwrap();
            for i in 0..k.nrows() {
                for j in 0..k.ncols() {
                    assert!((k[(i, j)] - k[(j, i)]).abs() <= 1e-12 * nrm);
                }
            }
            let ev = tangent_core::linalg::sym_eigenvalues(k.as_ref()).unwrap();
            assert!(*ev.last().unwrap() >= -1e-10 * nrm);
        }
    }
    // Boundary-only data: the outer factor is the identity.
    let spec = make_spec("poisson_toy_linear", &[]).unwrap();
    let mut data = data_for("poisson_toy_linear", 1, 2, 0);
    data.residual = Points::empty(1);
    let p = init_gaussian(&[1, 5, 1], 1).unwrap();
    let d = decompose(&p, &spec, &data, false).unwrap();
    assert_eq!(d.lambda, Mat::<f64>::identity(2, 2));
    assert!((&d.k - &d.k_phi).norm_max() <= 1e-14 * d.k.norm_max());
}

#[test]
fn drift_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let a = random_mat(4, 4, &mut rng);
    let k0 = &a * a.transpose();
    assert_eq!(kernel_drift(&k0, &k0).unwrap(), 0.0);
    let id = Mat::<f64>::identity(3, 3);
    let two = Mat::from_fn(3, 3, |i, j| if i == j { 2.0 } else { 0.0 });
    assert!((kernel_drift(&two, &id).unwrap() - 1.0).abs() < 1e-14);
    assert!(kernel_drift(&id, &k0).is_err());
    assert!(kernel_drift(&id, &Mat::zeros(3, 3)).is_err());
}

fn unit_settings() -> PowerSettings {
    PowerSettings { tol: 1e-10, max_iter: 5000, seed: 4 }
}

#[test]
fn linear_residual_hessian_structure() {
    let spec = make_spec("poisson_toy_linear", &[]).unwrap();
    let m = 8;
    let p = init_gaussian(&[1, m, 1], 7).unwrap();
    let rep = residual_hessian(&p, &spec, &[0.4], HessianMode::Dense, PowerSettings::default()).unwrap();
    let h = rep.dense.as_ref().unwrap();
    let n = p.n_params();
    let l = p.layers();
    let (w0, b0, w1) = (l[0].weight_range(), l[0].bias_range(), l[1].weight_range());
    let b1 = l[1].bias_range().start;
    for k in 0..n {
        assert_eq!(h[(b1, k)], 0.0);
        assert_eq!(h[(k, b1)], 0.0);
    }
    // Output weight j couples only to hidden unit j.
    for j in 0..m {
        for q in 0..m {
            if q != j {
                for blk in [&w0, &b0] {
                    assert_eq!(h[(w1.start + j, blk.start + q)], 0.0);
                }
            }
        }
    }
    // Output weights do not couple to each other.
    for j in 0..m {
        for q in 0..m {
            assert_eq!(h[(w1.start + j, w1.start + q)], 0.0);
        }
    }
    let sparsity = rep.sparsity(1e-12);
    assert!(sparsity.iter().all(|&(r, c, _)| r != b1 && c != b1));
}

#[test]
fn value_hessian_cross_entry() {
    let m = 8;
    let p = init_gaussian(&[1, m, 1], 8).unwrap();
    let x = 0.3;
    let h = value_hessian(&p, &[x], HessianMode::Dense, PowerSettings::default()).unwrap();
    let h = h.dense.unwrap();
    let l = p.layers();
    let sm = (m as f64).sqrt();
    for j in 0..m {
        let w = p.theta[l[0].weight_range().start + j];
        let b = p.theta[l[0].bias_range().start + j];
        let z = w * x + b;
        let expect = (1.0 - z.tanh().powi(2)) * x / sm;
        let got = h[(l[1].weight_range().start + j, l[0].weight_range().start + j)];
        assert!((got - expect).abs() <= 1e-14, "{got} vs {expect}");
    }
    // The value gradient with respect to an output weight is sigma(.)/sqrt(m).
    let (_, tape) = forward_jet(&p, &[x], DerivMask::new(&[Component::Value])).unwrap();
    let g = reverse_sweep(&tape, &tangent_core::jets::tape::Combination::single(Component::Value)).unwrap();
    for j in 0..m {
        let z = p.theta[l[0].weight_range().start + j] * x + p.theta[l[0].bias_range().start + j];
        assert!((g[l[1].weight_range().start + j] - z.tanh() / sm).abs() <= 1e-15);
    }
}

fn residual_gradient(p: &MlpParams, spec: &tangent_core::pde::ResidualSpec, x: &[f64]) -> Vec<f64> {
    let (_, tape) = forward_jet(p, x, spec.mask).unwrap();
    reverse_sweep(&tape, &ResidualSelector { spec, scale: 1.0 }).unwrap()
}

#[test]
fn dense_residual_hessian_matches_finite_differences() {
    for (name, point) in [("poisson_toy_linear", vec![0.4]), ("burgers_toy_nonlinear", vec![0.6]), ("burgers", vec![0.2, 0.5])] {
        let spec = make_spec(name, &[]).unwrap();
        let mut widths = vec![spec.dim, 8, 1];
        if spec.dim == 2 {
            widths.insert(2, 4);
        }
        let p = init_gaussian(&widths, 9).unwrap();
        let rep = residual_hessian(&p, &spec, &point, HessianMode::Dense, PowerSettings::default()).unwrap();
        let h = rep.dense.as_ref().unwrap();
        let n = p.n_params();
        let e = 1e-5;
        let mut worst: f64 = 0.0;
        for c in 0..n {
            let mut tp = p.theta.clone();
            tp[c] += e;
            let mut tm = p.theta.clone();
            tm[c] -= e;
            let gp = residual_gradient(&p.with_theta(tp).unwrap(), &spec, &point);
            let gm = residual_gradient(&p.with_theta(tm).unwrap(), &spec, &point);
            for r in 0..n {
                worst = worst.max(((gp[r] - gm[r]) / (2.0 * e) - h[(r, c)]).abs());
            }
        }
        assert!(worst <= 1e-5, "{name}: {worst:e}");
        for i in 0..n {
            for j in 0..n {
                assert!((h[(i, j)] - h[(j, i)]).abs() <= 1e-10 * rep.spectral_norm, "{name}: asymmetric");
            }
        }

        // Dense vs matrix-free.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (_, tape) = forward_jet(&p, &point, spec.mask).unwrap();
        let sel = ResidualSelector { spec: &spec, scale: 1.0 };
        for _ in 0..5 {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let hv = hessian_vector(&tape, &sel, &v).unwrap();
            let dense = tangent_core::linalg::mat_vec(h.as_ref(), &v);
            let diff = tangent_core::linalg::norm(&hv.iter().zip(&dense).map(|(a, b)| a - b).collect::<Vec<_>>());
            assert!(diff <= 1e-10 * rep.spectral_norm * tangent_core::linalg::norm(&v));
        }

        let pw = residual_hessian(&p, &spec, &point, HessianMode::NormOnly, unit_settings()).unwrap();
        let rel = (pw.spectral_norm - rep.spectral_norm).abs() / rep.spectral_norm;
        assert!(rel <= 1e-6, "{name}: power {} dense {}", pw.spectral_norm, rep.spectral_norm);
        assert!(pw.power.unwrap().converged);
    }
}

#[test]
fn dense_mode_is_capped() {
    let spec = make_spec("poisson_toy_linear", &[]).unwrap();
    let p = init_gaussian(&[1, 128, 128, 1], 0).unwrap();
    assert!(p.n_params() > DENSE_HESSIAN_CAP);
    assert!(residual_hessian(&p, &spec, &[0.5], HessianMode::Dense, PowerSettings::default()).is_err());
}

#[test]
fn hessian_norm_sweep_is_deterministic() {
    let spec = make_spec("burgers_toy_nonlinear", &[]).unwrap();
    let a = hessian_norm_sweep(&spec, &[16, 32], &[(0, 5), (1, 6)], &[0.5], PowerSettings::default()).unwrap();
    let b = hessian_norm_sweep(&spec, &[16, 32], &[(0, 5), (1, 6)], &[0.5], PowerSettings::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 4);
    assert!(a.iter().all(|r| r.h_norm > 0.0));
}

#[test]
fn projector_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let full = projector_spectrum(&jacobian_of(random_mat(6, 20, &mut rng)), 1e-10).unwrap();
    assert_eq!(full.eigenvalues, vec![1.0; 6]);
    for ev in &full.realized {
        assert!((ev - 1.0).abs() < 1e-10);
    }

    let mut dup = random_mat(6, 20, &mut rng);
    for c in 0..20 {
        dup[(5, c)] = dup[(2, c)];
    }
    let d = projector_spectrum(&jacobian_of(dup), 1e-10).unwrap();
    assert_eq!(d.rank, 5);
    assert_eq!(d.eigenvalues.iter().filter(|&&e| e == 0.0).count(), 1);

    for r in [1, 3, 7] {
        let a = random_mat(12, r, &mut rng);
        let b = random_mat(r, 30, &mut rng);
        let s = projector_spectrum(&jacobian_of(&a * &b), 1e-10).unwrap();
        assert_eq!(s.eigenvalues.iter().filter(|&&e| e == 1.0).count(), r);
        assert!(s.eigenvalues.iter().all(|&e| e == 0.0 || e == 1.0));
    }
}

#[test]
fn limit_covariance_examples() {
    let mask = make_spec("burgers_toy_nonlinear", &[]).unwrap().mask;
    let comps = mask.components();
    let vi = comps.iter().position(|&c| c == Component::Value).unwrap();
    let gi = comps.iter().position(|&c| c == Component::Grad(0)).unwrap();
    let s = limit_covariance(mask, &[0.3], &[0.3], 16).unwrap();
    for i in 0..comps.len() {
        for j in 0..comps.len() {
            assert!((s[(i, j)] - s[(j, i)]).abs() <= 1e-14);
        }
    }
    assert!(s[(vi, vi)] > 0.0);
    let z = limit_covariance(mask, &[0.0], &[0.0], 16).unwrap();
    assert!(z[(vi, gi)].abs() <= 1e-15);
    assert!(limit_covariance(mask, &[0.3], &[0.3], 4).is_err());
}

#[test]
fn wide_network_matches_limit_covariance() {
    // Output-weight block of the jet kernel at width 2^13 against quadrature.
    let spec = make_spec("burgers_toy_nonlinear", &[]).unwrap();
    let p = init_gaussian(&[1, 1 << 13, 1], 11).unwrap();
    for (x, xp) in [(0.3, 0.3), (0.2, 0.7)] {
        let emp = output_weight_phi_kernel(&p, spec.mask, &[x], &[xp]).unwrap();
        let lim = limit_covariance(spec.mask, &[x], &[xp], 40).unwrap();
        let rel = (&emp - &lim).norm_l2() / lim.norm_l2();
        assert!(rel <= 0.05, "({x}, {xp}): {rel}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn projector_values_are_binary(seed in 0u64..10_000, n in 2usize..10, r in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_mat(n, r, &mut rng);
        let b = random_mat(r, 15, &mut rng);
        let s = projector_spectrum(&jacobian_of(&a * &b), 1e-10).unwrap();
        prop_assert!(s.eigenvalues.iter().all(|&e| e == 0.0 || e == 1.0));
        let rank = jacobi_singular_values(&(&a * &b)).iter().filter(|&&x| x > 1e-10 * s.singular_values[0]).count();
        prop_assert_eq!(s.rank, rank);
        prop_assert_eq!(s.rank, r.min(n));
    }

    #[test]
    fn kernels_are_symmetric_psd(seed in 0u64..10_000, k in 0usize..6) {
        let names = ["poisson_toy_linear", "burgers_toy_nonlinear", "poisson_highfreq", "convection", "wave", "burgers"];
        let spec = make_spec(names[k], &[]).unwrap();
        let data = data_for(names[k], 6, 3, seed);
        let p = init_gaussian(&[spec.dim, 6, 1], seed).unwrap();
        let j = assemble_jacobian(&p, &spec, &data, true).unwrap();
        let snap = kernel(&j).unwrap();
        let nrm = snap.spectral_norm;
        prop_assert!(snap.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(*snap.eigenvalues.last().unwrap() >= -1e-10 * nrm);
        prop_assert_eq!(nrm, snap.eigenvalues[0]);
        let d = decompose(&p, &spec, &data, true).unwrap();
        prop_assert!(d.reconstruction_error <= 1e-10);
    }
}
