//! Viscous Burgers solution for `u(x, 0) = -sin(pi x)` by the Cole-Hopf
//! transform.
//!
//! `u = -2 nu phi_x / phi` where `phi` solves the heat equation with initial
//! data `exp(-cos(pi y) / (2 pi nu))`. The heat convolution is written in the
//! variable `z` with `y = x - 2 sqrt(nu t) z`, which turns the kernel into
//! `exp(-z^2)/sqrt(pi)`, and integrated with the trapezoidal rule. Exponents
//! are shifted by their maximum before exponentiating.

use std::f64::consts::PI;

/// Solution value and derivatives at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BurgersPoint {
    pub u: f64,
    pub u_x: f64,
    pub u_t: f64,
    pub u_xx: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColeHopf {
    nu: f64,
    nodes: Vec<f64>,
}

impl ColeHopf {
    /// Half-width of the `z` interval and node spacing.
    const Z_MAX: f64 = 16.0;
    const STEP: f64 = 0.01;

    pub fn new(nu: f64) -> Self {
        let n = (2.0 * Self::Z_MAX / Self::STEP).round() as usize;
        let nodes = (0..=n).map(|i| -Self::Z_MAX + i as f64 * Self::STEP).collect();
        Self { nu, nodes }
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn eval(&self, x: f64, t: f64) -> BurgersPoint {
        let nu = self.nu;
        let c = 1.0 / (2.0 * PI * nu);
        let s = 2.0 * (nu * t.max(0.0)).sqrt();
        // log-integrand g(y) - z^2 with g(y) = -c cos(pi y)
        let mut m = f64::NEG_INFINITY;
        for &z in &self.nodes {
            let y = x - s * z;
            m = m.max(-c * (PI * y).cos() - z * z);
        }
        // Ratios phi^(k) / phi with phi^(k) = int F^(k)(y) G dz, where
        // F' = g' F, F'' = (g'' + g'^2) F, F''' = (g''' + 3 g' g'' + g'^3) F.
        let (mut w0, mut w1, mut w2, mut w3) = (0.0, 0.0, 0.0, 0.0);
        for &z in &self.nodes {
            let y = x - s * z;
            let (sy, cy) = (PI * y).sin_cos();
            let w = (-c * cy - z * z - m).exp();
            if w == 0.0 {
                continue;
            }
            let g1 = c * PI * sy;
            let g2 = c * PI * PI * cy;
            let g3 = -c * PI * PI * PI * sy;
            w0 += w;
            w1 += w * g1;
            w2 += w * (g2 + g1 * g1);
            w3 += w * (g3 + 3.0 * g1 * g2 + g1 * g1 * g1);
        }
        let (p1, p2, p3) = (w1 / w0, w2 / w0, w3 / w0);
        let u = -2.0 * nu * p1;
        let u_x = -2.0 * nu * (p2 - p1 * p1);
        let u_xx = -2.0 * nu * (p3 - 3.0 * p1 * p2 + 2.0 * p1 * p1 * p1);
        // phi_t = nu phi_xx, so u_t = -2 nu^2 (phi_xxx/phi - phi_x phi_xx / phi^2).
        let u_t = -2.0 * nu * nu * (p3 - p1 * p2);
        BurgersPoint { u, u_x, u_t, u_xx }
    }
}
