//! Scalar types carried through the network tape.
//!
//! A scalar is a truncated Taylor polynomial in one auxiliary variable `h`
//! stored as `PLANES` coefficients. `f64` is the plain case, [`Dual`] carries a
//! first-order tangent and [`Taylor2`] carries the coefficients of `1, h, h^2`.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + Debug
    + Default
    + PartialEq
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    /// Number of Taylor coefficients stored.
    const PLANES: usize;

    fn from_f64(c: f64) -> Self;

    /// Coefficient of `h^k`.
    fn plane(&self, k: usize) -> f64;

    fn from_planes(f: impl FnMut(usize) -> f64) -> Self;

    fn tanh(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn re(&self) -> f64 {
        self.plane(0)
    }
}

impl Scalar for f64 {
    const PLANES: usize = 1;

    fn from_f64(c: f64) -> Self {
        c
    }

    fn plane(&self, k: usize) -> f64 {
        debug_assert_eq!(k, 0);
        *self
    }

    fn from_planes(mut f: impl FnMut(usize) -> f64) -> Self {
        f(0)
    }

    fn tanh(self) -> Self {
        f64::tanh(self)
    }

    fn sin(self) -> Self {
        f64::sin(self)
    }

    fn cos(self) -> Self {
        f64::cos(self)
    }
}

/// First-order dual number `re + eps*h`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }
}

/// Second-order truncated Taylor polynomial `c0 + c1*h + c2*h^2`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Taylor2 {
    pub c: [f64; 3],
}

impl Taylor2 {
    pub fn new(c0: f64, c1: f64, c2: f64) -> Self {
        Self { c: [c0, c1, c2] }
    }
}

impl Scalar for Dual {
    const PLANES: usize = 2;

    fn from_f64(c: f64) -> Self {
        Self { re: c, eps: 0.0 }
    }

    fn plane(&self, k: usize) -> f64 {
        match k {
            0 => self.re,
            1 => self.eps,
            _ => unreachable!("dual has two planes"),
        }
    }

    fn from_planes(mut f: impl FnMut(usize) -> f64) -> Self {
        Self { re: f(0), eps: f(1) }
    }

    fn tanh(self) -> Self {
        let t = self.re.tanh();
        Self { re: t, eps: (1.0 - t * t) * self.eps }
    }

    fn sin(self) -> Self {
        Self { re: self.re.sin(), eps: self.re.cos() * self.eps }
    }

    fn cos(self) -> Self {
        Self { re: self.re.cos(), eps: -self.re.sin() * self.eps }
    }
}

impl Scalar for Taylor2 {
    const PLANES: usize = 3;

    fn from_f64(c: f64) -> Self {
        Self { c: [c, 0.0, 0.0] }
    }

    fn plane(&self, k: usize) -> f64 {
        self.c[k]
    }

    fn from_planes(mut f: impl FnMut(usize) -> f64) -> Self {
        Self { c: [f(0), f(1), f(2)] }
    }

    fn tanh(self) -> Self {
        let t = self.c[0].tanh();
        let d1 = 1.0 - t * t;
        let d2 = -2.0 * t * d1;
        compose2(self, t, d1, d2)
    }

    fn sin(self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        compose2(self, s, c, -s)
    }

    fn cos(self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        compose2(self, c, -s, -c)
    }
}

fn compose2(x: Taylor2, f0: f64, f1: f64, f2: f64) -> Taylor2 {
    let [_, c1, c2] = x.c;
    Taylor2 { c: [f0, f1 * c1, f1 * c2 + 0.5 * f2 * c1 * c1] }
}

macro_rules! impl_arith {
    ($t:ty, $mul:expr) => {
        impl Add for $t {
            type Output = Self;
            fn add(self, o: Self) -> Self {
                Self::from_planes(|k| self.plane(k) + o.plane(k))
            }
        }
        impl Sub for $t {
            type Output = Self;
            fn sub(self, o: Self) -> Self {
                Self::from_planes(|k| self.plane(k) - o.plane(k))
            }
        }
        impl Neg for $t {
            type Output = Self;
            fn neg(self) -> Self {
                Self::from_planes(|k| -self.plane(k))
            }
        }
        impl Mul for $t {
            type Output = Self;
            fn mul(self, o: Self) -> Self {
                $mul(self, o)
            }
        }
        impl AddAssign for $t {
            fn add_assign(&mut self, o: Self) {
                *self = *self + o;
            }
        }
        impl SubAssign for $t {
            fn sub_assign(&mut self, o: Self) {
                *self = *self - o;
            }
        }
        impl MulAssign for $t {
            fn mul_assign(&mut self, o: Self) {
                *self = *self * o;
            }
        }
        impl Add<f64> for $t {
            type Output = Self;
            fn add(self, o: f64) -> Self {
                Self::from_planes(|k| if k == 0 { self.plane(0) + o } else { self.plane(k) })
            }
        }
        impl Sub<f64> for $t {
            type Output = Self;
            fn sub(self, o: f64) -> Self {
                Self::from_planes(|k| if k == 0 { self.plane(0) - o } else { self.plane(k) })
            }
        }
        impl Mul<f64> for $t {
            type Output = Self;
            fn mul(self, o: f64) -> Self {
                Self::from_planes(|k| self.plane(k) * o)
            }
        }
    };
}

impl_arith!(Dual, |a: Dual, b: Dual| Dual {
    re: a.re * b.re,
    eps: a.re * b.eps + a.eps * b.re
});
impl_arith!(Taylor2, |a: Taylor2, b: Taylor2| Taylor2 {
    c: [
        a.c[0] * b.c[0],
        a.c[0] * b.c[1] + a.c[1] * b.c[0],
        a.c[0] * b.c[2] + a.c[1] * b.c[1] + a.c[2] * b.c[0],
    ]
});
