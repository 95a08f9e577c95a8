//! Hyper-dual numbers `a + b e1 + c e2 + d e1 e2` with `e1^2 = e2^2 = 0`.
//!
//! Evaluating a function at `x + e1 (dx_m) + e2 (dx_n)` yields the value,
//! both first partials and the mixed second partial exactly, with no step
//! size. Used by tests as an independent derivative route.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::expr::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperDual {
    pub re: f64,
    pub e1: f64,
    pub e2: f64,
    pub e12: f64,
}

impl HyperDual {
    pub fn constant(re: f64) -> Self {
        Self { re, e1: 0.0, e2: 0.0, e12: 0.0 }
    }

    /// Variable seeded along the requested directions.
    pub fn variable(re: f64, first: bool, second: bool) -> Self {
        Self {
            re,
            e1: if first { 1.0 } else { 0.0 },
            e2: if second { 1.0 } else { 0.0 },
            e12: 0.0,
        }
    }
}

impl Add for HyperDual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            re: self.re + o.re,
            e1: self.e1 + o.e1,
            e2: self.e2 + o.e2,
            e12: self.e12 + o.e12,
        }
    }
}

impl Sub for HyperDual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Neg for HyperDual {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            re: -self.re,
            e1: -self.e1,
            e2: -self.e2,
            e12: -self.e12,
        }
    }
}

impl Mul for HyperDual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            re: self.re * o.re,
            e1: self.re * o.e1 + self.e1 * o.re,
            e2: self.re * o.e2 + self.e2 * o.re,
            e12: self.re * o.e12 + self.e1 * o.e2 + self.e2 * o.e1 + self.e12 * o.re,
        }
    }
}

impl Div for HyperDual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        // 1/y has value 1/a, first parts -b/a^2, mixed part 2 b c / a^3 - d / a^2.
        let a = o.re;
        let inv = Self {
            re: 1.0 / a,
            e1: -o.e1 / (a * a),
            e2: -o.e2 / (a * a),
            e12: 2.0 * o.e1 * o.e2 / (a * a * a) - o.e12 / (a * a),
        };
        self * inv
    }
}

impl Scalar for HyperDual {
    fn from_f64(c: f64) -> Self {
        Self::constant(c)
    }
    fn real(&self) -> f64 {
        self.re
    }
}
