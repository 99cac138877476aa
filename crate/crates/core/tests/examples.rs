//! Jet arithmetic, network evaluation and initialization.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tangent_core::jets::tape::Combination;
use tangent_core::jets::*;
use tangent_core::kernel::gauss_hermite_normal;
use tangent_core::net::*;
use tangent_core::pde::{make_spec, PdeKind};

fn jet(value: f64, grad: [f64; 2], hess: [f64; 3], dim: usize) -> SpatialJet<f64> {
    let mut j = SpatialJet::zero(dim, DerivMask::full(dim));
    j.value = value;
    j.grad = grad;
    j.hess = hess;
    j
}

fn assert_jet(got: &SpatialJet<f64>, value: f64, grad: &[f64], hess: &[f64]) {
    assert!((got.value - value).abs() < 1e-15, "value {} vs {value}", got.value);
    for (a, b) in got.grad.iter().zip(grad) {
        assert!((a - b).abs() < 1e-15, "grad {:?} vs {grad:?}", got.grad);
    }
    for (a, b) in got.hess.iter().zip(hess) {
        assert!((a - b).abs() < 1e-15, "hess {:?} vs {hess:?}", got.hess);
    }
}

#[test]
fn seed_examples() {
    assert_jet(&seed_input(&[0.3], 0).unwrap(), 0.3, &[1.0], &[0.0]);
    assert_jet(&seed_input(&[0.5, 0.2], 1).unwrap(), 0.2, &[0.0, 1.0], &[0.0, 0.0, 0.0]);
    assert_jet(&seed_input(&[-1.0], 0).unwrap(), -1.0, &[1.0], &[0.0]);
    assert!(seed_input(&[0.5], 1).is_err());
}

#[test]
fn affine_examples() {
    let one = jet(1.0, [1.0, 0.0], [0.0; 3], 1);
    assert_jet(&jet_affine(&[one], &[2.0], 3.0).unwrap(), 5.0, &[2.0], &[0.0]);
    let zero = jet(0.0, [0.0; 2], [0.0; 3], 1);
    assert_jet(&jet_affine(&[zero, zero], &[0.7, -4.0], 0.0).unwrap(), 0.0, &[0.0], &[0.0]);
    let two = jet(2.0, [0.0; 2], [0.0; 3], 1);
    assert_jet(&jet_affine(&[one, two], &[1.0, 1.0], 0.0).unwrap(), 3.0, &[1.0], &[0.0]);
    assert!(jet_affine(&[one, two], &[1.0], 0.0).is_err());
}

#[test]
fn tanh_and_mul_examples() {
    assert_jet(&jet_tanh(&jet(0.0, [1.0, 0.0], [0.0; 3], 1)), 0.0, &[1.0], &[0.0]);
    let a = 0.8;
    assert_jet(&jet_tanh(&jet(a, [0.0; 2], [0.0; 3], 1)), a.tanh(), &[0.0], &[0.0]);
    let t = jet_tanh(&jet(0.5, [2.0, 0.0], [0.0; 3], 1));
    let f = |h: f64| (0.5 + 2.0 * h).tanh();
    let h = 1e-4;
    let d1 = (f(h) - f(-h)) / (2.0 * h);
    let d2 = (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h);
    assert!((t.grad[0] - d1).abs() <= 1e-8 * d1.abs());
    assert!((t.hess[0] - d2).abs() <= 1e-6 * d2.abs());

    let c2 = jet(2.0, [0.0; 2], [0.0; 3], 1);
    let c3 = jet(3.0, [0.0; 2], [0.0; 3], 1);
    assert_jet(&jet_mul(&c2, &c3).unwrap(), 6.0, &[0.0], &[0.0]);
    let x = 0.7;
    let lin = jet(x, [1.0, 0.0], [0.0; 3], 1);
    assert_jet(&jet_mul(&lin, &lin).unwrap(), x * x, &[2.0 * x], &[2.0]);
}

/// Random quadratic `q(y) = c + g.y + y^T H y / 2` in two variables, whose jet
/// at `y = 0` is `(c, g, H)`.
#[derive(Clone, Copy)]
struct Quadratic {
    c: f64,
    g: [f64; 2],
    h: [f64; 3],
}

impl Quadratic {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut u = || rng.random_range(-2.0..2.0);
        Quadratic { c: u(), g: [u(), u()], h: [u(), u(), u()] }
    }

    fn at(&self, y: [f64; 2]) -> f64 {
        self.c + self.g[0] * y[0] + self.g[1] * y[1] + 0.5 * (self.h[0] * y[0] * y[0] + 2.0 * self.h[1] * y[0] * y[1] + self.h[2] * y[1] * y[1])
    }

    fn jet(&self) -> SpatialJet<f64> {
        jet(self.c, self.g, self.h, 2)
    }
}

/// Central differences at the origin: (gradient, Hessian in `hess` order).
fn fd_jet(f: &dyn Fn([f64; 2]) -> f64) -> ([f64; 2], [f64; 3]) {
    let (h1, h2) = (1e-5, 1e-4);
    let e = |i: usize, s: f64| if i == 0 { [s, 0.0] } else { [0.0, s] };
    let g = [0, 1].map(|i| (f(e(i, h1)) - f(e(i, -h1))) / (2.0 * h1));
    let f0 = f([0.0, 0.0]);
    let hxx = (f(e(0, h2)) - 2.0 * f0 + f(e(0, -h2))) / (h2 * h2);
    let hyy = (f(e(1, h2)) - 2.0 * f0 + f(e(1, -h2))) / (h2 * h2);
    let hxy = (f([h2, h2]) - f([h2, -h2]) - f([-h2, h2]) + f([-h2, -h2])) / (4.0 * h2 * h2);
    (g, [hxx, hxy, hyy])
}

fn check(name: &str, got: &SpatialJet<f64>, f: &dyn Fn([f64; 2]) -> f64) -> f64 {
    let (g, h) = fd_jet(f);
    assert!((got.value - f([0.0, 0.0])).abs() <= 1e-14 * (1.0 + got.value.abs()), "{name} value");
    let mut worst: f64 = 0.0;
    for (a, b) in got.grad.iter().zip(&g) {
        worst = worst.max((a - b).abs() / (1.0 + b.abs()));
    }
    for (a, b) in got.hess.iter().zip(&h) {
        // The second-order stencil carries roughly 1e-8 of round-off.
        worst = worst.max(0.1 * (a - b).abs() / (1.0 + b.abs()));
    }
    worst
}

#[test]
fn elementary_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a = Quadratic::random(&mut rng);
        let b = Quadratic::random(&mut rng);
        let (w0, w1, bias) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let (ja, jb) = (a.jet(), b.jet());
        worst = worst.max(check("tanh", &jet_tanh(&ja), &|y| a.at(y).tanh()));
        worst = worst.max(check("sin", &jet_sin(&ja), &|y| a.at(y).sin()));
        worst = worst.max(check("cos", &jet_cos(&ja), &|y| a.at(y).cos()));
        worst = worst.max(check("mul", &jet_mul(&ja, &jb).unwrap(), &|y| a.at(y) * b.at(y)));
        worst = worst.max(check("add", &jet_add(&ja, &jb).unwrap(), &|y| a.at(y) + b.at(y)));
        worst = worst.max(check("scale", &jet_scale(&ja, w0), &|y| w0 * a.at(y)));
        let aff = jet_affine(&[ja, jb], &[w0, w1], bias).unwrap();
        worst = worst.max(check("affine", &aff, &|y| w0 * a.at(y) + w1 * b.at(y) + bias));
    }
    assert!(worst <= 1e-7, "{worst:e}");
}

#[test]
fn embedding_examples() {
    let zero = FourierEmbedding { d_in: 2, n_features: 3, sigma: 1.0, frequencies: vec![0.0; 6] };
    let coords = [seed_input(&[0.4, 0.9], 0).unwrap(), seed_input(&[0.4, 0.9], 1).unwrap()];
    let feats = embed(&coords, &zero).unwrap();
    assert_eq!(feats.len(), 6);
    for (k, f) in feats.iter().enumerate() {
        assert_eq!(f.value, if k < 3 { 1.0 } else { 0.0 });
        assert!(f.grad.iter().chain(&f.hess).all(|&v| v == 0.0));
    }
    let unit = FourierEmbedding { d_in: 1, n_features: 1, sigma: 1.0, frequencies: vec![1.0] };
    let feats = embed(&[seed_input(&[0.0], 0).unwrap()], &unit).unwrap();
    assert_eq!((feats[0].value, feats[1].value), (1.0, 0.0));
    assert!(feats[0].grad[0].abs() < 1e-15);
    assert!((feats[1].grad[0] - 2.0 * PI).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let emb = FourierEmbedding::sample(2, 5, 0.7, &mut rng).unwrap();
    let x0 = [0.3, -0.4];
    let coords = [seed_input(&x0, 0).unwrap(), seed_input(&x0, 1).unwrap()];
    let feats = embed(&coords, &emb).unwrap();
    for (k, f) in feats.iter().enumerate() {
        let map = |y: [f64; 2]| {
            let b = &emb.frequencies[(k % 5) * 2..(k % 5) * 2 + 2];
            let phase = 2.0 * PI * (b[0] * (x0[0] + y[0]) + b[1] * (x0[1] + y[1]));
            if k < 5 { phase.cos() } else { phase.sin() }
        };
        assert!(check("embed", f, &map) <= 1e-7);
    }
}

#[test]
fn parameter_counts() {
    assert_eq!(param_count(&[1, 4, 1]).unwrap(), 13);
    // Counting oracle: sum over layers of fan_in * fan_out + fan_out.
    let widths = [2usize, 20, 20, 20, 20, 20, 1];
    let oracle: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    assert_eq!(oracle, 1761);
    assert_eq!(param_count(&widths).unwrap(), oracle);
    for m in [1usize, 7, 100] {
        assert_eq!(param_count(&[1, m, 1]).unwrap(), 3 * m + 1);
    }
    assert!(param_count(&[1, 0, 1]).is_err());
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[test]
fn initializer_statistics() {
    let a = init_gaussian(&[1, 4, 1], 0).unwrap();
    assert_eq!(a.n_params(), 13);
    assert_eq!(a.theta, init_gaussian(&[1, 4, 1], 0).unwrap().theta);
    let wide = init_gaussian(&[1, 1 << 13, 1], 1).unwrap();
    let (mean, std) = mean_std(&wide.theta);
    assert!(mean.abs() < 0.05, "{mean}");
    assert!((0.98..=1.02).contains(&std), "{std}");

    let x = init_xavier(&[2, 256, 256, 256, 1], 2).unwrap();
    let widths = x.arch.widths().to_vec();
    for (l, layer) in x.layers().iter().enumerate() {
        assert!(x.theta[layer.bias_range()].iter().all(|&b| b == 0.0));
        let w = &x.theta[layer.weight_range()];
        let target = 2.0 / (widths[l] + widths[l + 1]) as f64;
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        assert!((var / target - 1.0).abs() <= 0.1, "layer {l}: {var} vs {target}");
    }
}

#[test]
fn forward_examples() {
    let p = init_gaussian(&[2, 5, 3, 1], 3).unwrap();
    let zero = p.with_theta(vec![0.0; p.n_params()]).unwrap();
    let (j, _) = forward_jet(&zero, &[0.2, 0.4], DerivMask::full(2)).unwrap();
    assert_jet(&j, 0.0, &[0.0, 0.0], &[0.0; 3]);

    // One hidden unit with unit weights: u = tanh x.
    let p = init_gaussian(&[1, 1, 1], 0).unwrap();
    let unit = p.with_theta(vec![1.0, 0.0, 1.0, 0.0]).unwrap();
    for x in [-1.2, 0.0, 0.3, 2.0] {
        let (j, _) = forward_jet(&unit, &[x], DerivMask::full(1)).unwrap();
        let t: f64 = x.tanh();
        assert!((j.value - t).abs() < 1e-15);
        assert!((j.grad[0] - (1.0 - t * t)).abs() < 1e-15);
        assert!((j.hess[0] + 2.0 * t * (1.0 - t * t)).abs() < 1e-15);
    }
    assert!(forward_jet(&unit, &[0.1, 0.2], DerivMask::full(1)).is_err());
}

#[test]
fn value_only_forward_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for seed in 0..10 {
        let p = init_xavier_fourier(&[2, 9, 7, 1], 4, 1.0, seed).unwrap();
        let q = init_xavier(&[2, 9, 7, 1], seed).unwrap();
        for params in [&p, &q] {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0)];
            let (j, _) = forward_jet(params, &x, DerivMask::new(&[Component::Value])).unwrap();
            let plain = params.arch.values(&params.theta, &Points::new(2, x.to_vec()).unwrap()).unwrap()[0];
            assert_eq!(j.value.to_bits(), plain.to_bits());
        }
    }
}

#[test]
fn replay_is_bit_identical() {
    let p = init_gaussian(&[2, 11, 6, 1], 5).unwrap();
    let sel = Combination(vec![(Component::Value, 0.3), (Component::Hess(0, 0), -1.0), (Component::Grad(1), 2.0)]);
    let x = [0.25, 0.75];
    let run = || {
        let (j, tape) = forward_jet(&p, &x, DerivMask::full(2)).unwrap();
        let g = reverse_sweep(&tape, &sel).unwrap();
        let v: Vec<f64> = (0..p.n_params()).map(|i| (i as f64).sin()).collect();
        let hv = hessian_vector(&tape, &sel, &v).unwrap();
        (j, g, hv)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.2.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    // Zero selector and zero direction give zero.
    let (_, tape) = forward_jet(&p, &x, DerivMask::full(2)).unwrap();
    assert!(reverse_sweep(&tape, &Combination(vec![])).unwrap().iter().all(|&v| v == 0.0));
    assert!(hessian_vector(&tape, &sel, &vec![0.0; p.n_params()]).unwrap().iter().all(|&v| v == 0.0));
}

fn output_variance(m: usize, seeds: u64, x: f64) -> f64 {
    let pts = Points::new(1, vec![x]).unwrap();
    let outs: Vec<f64> = (0..seeds)
        .map(|s| {
            let p = init_gaussian(&[1, m, 1], s).unwrap();
            p.arch.values(&p.theta, &pts).unwrap()[0]
        })
        .collect();
    mean_std(&outs).1.powi(2)
}

#[test]
fn ntk_output_variance_stabilizes() {
    let x = 0.6;
    let v10 = output_variance(1 << 10, 200, x);
    let v11 = output_variance(1 << 11, 200, x);
    assert!((v11 / v10 - 1.0).abs() < 0.2, "{v10} vs {v11}");
    // The limit: E[tanh(w x + b)^2] from the hidden layer plus 1 from the
    // output bias.
    let (nodes, weights) = gauss_hermite_normal(40).unwrap();
    let mut second_moment = 0.0;
    for (i, wi) in nodes.iter().zip(&weights) {
        for (j, wj) in nodes.iter().zip(&weights) {
            second_moment += wi * wj * (i * x + j).tanh().powi(2);
        }
    }
    let limit = second_moment + 1.0;
    let v = output_variance(1 << 10, 4000, x);
    assert!((v / limit - 1.0).abs() < 0.1, "{v} vs {limit}");
}

#[test]
fn xavier_outputs_stay_bounded() {
    for kind in PdeKind::ALL {
        let spec = make_spec(kind.name(), &[]).unwrap();
        let mut widths = vec![spec.dim];
        widths.extend([20; 5]);
        widths.push(1);
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let pts: Vec<f64> = (0..50)
            .flat_map(|_| spec.domain.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect::<Vec<_>>())
            .collect();
        let pts = Points::new(spec.dim, pts).unwrap();
        for seed in 0..100 {
            let p = init_xavier(&widths, seed).unwrap();
            let u = p.arch.values(&p.theta, &pts).unwrap();
            assert!(u.iter().all(|v| v.abs() < 10.0), "{kind} seed {seed}");
        }
    }
}

