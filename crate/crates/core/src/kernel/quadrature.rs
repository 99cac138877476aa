//! Gauss-Hermite quadrature.

use crate::error::{Error, Result};

/// Nodes and weights for `int exp(-x^2) f(x) dx`, by Newton iteration on the
/// normalized Hermite recurrence.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 || n > 200 {
        return Err(Error::InvalidArgument(format!("Gauss-Hermite order {n} outside 1..=200")));
    }
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (PIM4, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    Ok((x, w))
}

/// Nodes and weights for expectations under `N(0, 1)`.
pub fn gauss_hermite_normal(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let (x, w) = gauss_hermite(n)?;
    let s = std::f64::consts::PI.sqrt();
    Ok((x.iter().map(|v| v * std::f64::consts::SQRT_2).collect(), w.iter().map(|v| v / s).collect()))
}
