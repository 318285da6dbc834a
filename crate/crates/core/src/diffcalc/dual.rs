//! First-order forward-mode numbers carrying a full gradient.
//!
//! An empty derivative buffer stands for the zero vector, so constants cost
//! nothing and never need to know the ambient dimension.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::real::{Real, ScalarField, VectorMap};

#[derive(Debug, Clone, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: Vec<f64>,
}

impl Dual {
    pub fn constant(v: f64) -> Self {
        Dual { v, d: Vec::new() }
    }

    /// The `index`-th coordinate of an `n`-dimensional input.
    pub fn variable(v: f64, index: usize, n: usize) -> Self {
        let mut d = vec![0.0; n];
        d[index] = 1.0;
        Dual { v, d }
    }

    /// Seed every coordinate of `x` as an independent variable.
    pub fn seed(x: &[f64]) -> Vec<Dual> {
        let n = x.len();
        x.iter()
            .enumerate()
            .map(|(i, &v)| Dual::variable(v, i, n))
            .collect()
    }

    /// Derivative with respect to coordinate `i` (zero for constants).
    pub fn partial(&self, i: usize) -> f64 {
        self.d.get(i).copied().unwrap_or(0.0)
    }

    /// Apply a unary function given its value and first derivative at `self.v`.
    fn chain(self, value: f64, slope: f64) -> Self {
        let mut d = self.d;
        d.iter_mut().for_each(|x| *x *= slope);
        Dual { v: value, d }
    }
}

/// a·x + b·y elementwise, treating an empty buffer as zero.
fn combine(x: Vec<f64>, a: f64, y: &[f64], b: f64) -> Vec<f64> {
    if y.is_empty() {
        let mut x = x;
        x.iter_mut().for_each(|v| *v *= a);
        return x;
    }
    if x.is_empty() {
        return y.iter().map(|v| v * b).collect();
    }
    debug_assert_eq!(x.len(), y.len());
    let mut x = x;
    for (xi, yi) in x.iter_mut().zip(y) {
        *xi = a * *xi + b * yi;
    }
    x
}

fn add_into(x: Vec<f64>, y: &[f64], sign: f64) -> Vec<f64> {
    if y.is_empty() {
        return x;
    }
    if x.is_empty() {
        return y.iter().map(|v| sign * v).collect();
    }
    let mut x = x;
    for (xi, yi) in x.iter_mut().zip(y) {
        *xi += sign * yi;
    }
    x
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual {
            v: self.v + rhs.v,
            d: add_into(self.d, &rhs.d, 1.0),
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual {
            v: self.v - rhs.v,
            d: add_into(self.d, &rhs.d, -1.0),
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        let (a, b) = (self.v, rhs.v);
        Dual {
            v: a * b,
            d: combine(self.d, b, &rhs.d, a),
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        let inv = 1.0 / rhs.v;
        let v = self.v * inv;
        Dual {
            v,
            d: combine(self.d, inv, &rhs.d, -v * inv),
        }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        let v = -self.v;
        self.chain(v, -1.0)
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    fn add(mut self, rhs: f64) -> Dual {
        self.v += rhs;
        self
    }
}

impl Sub<f64> for Dual {
    type Output = Dual;
    fn sub(mut self, rhs: f64) -> Dual {
        self.v -= rhs;
        self
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    fn mul(self, rhs: f64) -> Dual {
        let v = self.v * rhs;
        self.chain(v, rhs)
    }
}

impl Div<f64> for Dual {
    type Output = Dual;
    fn div(self, rhs: f64) -> Dual {
        let v = self.v / rhs;
        let mut d = self.d;
        d.iter_mut().for_each(|x| *x /= rhs);
        Dual { v, d }
    }
}

impl Real for Dual {
    fn constant(value: f64) -> Self {
        Dual::constant(value)
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn sin(&self) -> Self {
        self.clone().chain(self.v.sin(), self.v.cos())
    }
    fn cos(&self) -> Self {
        self.clone().chain(self.v.cos(), -self.v.sin())
    }
    fn tanh(&self) -> Self {
        let t = self.v.tanh();
        self.clone().chain(t, 1.0 - t * t)
    }
    fn exp(&self) -> Self {
        let e = self.v.exp();
        self.clone().chain(e, e)
    }
    fn ln(&self) -> Self {
        self.clone().chain(self.v.ln(), 1.0 / self.v)
    }
    fn sqrt(&self) -> Self {
        let s = self.v.sqrt();
        self.clone().chain(s, 0.5 / s)
    }
    fn powi(&self, n: i32) -> Self {
        let slope = if n == 0 {
            0.0
        } else {
            f64::from(n) * self.v.powi(n - 1)
        };
        self.clone().chain(self.v.powi(n), slope)
    }
    fn call_field(f: &dyn ScalarField, x: &[Self]) -> Self {
        f.eval_dual(x)
    }
    fn call_map(m: &dyn VectorMap, x: &[Self]) -> Vec<Self> {
        m.eval_dual(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let x = Dual::seed(&[2.0, 5.0]);
        let f = x[0].clone() * x[1].clone();
        assert_eq!(f.v, 10.0);
        assert_eq!(f.d, vec![5.0, 2.0]);
    }

    #[test]
    fn constants_stay_sparse() {
        let c = Dual::constant(3.0) * Dual::constant(2.0) + 1.0;
        assert_eq!(c.v, 7.0);
        assert!(c.d.is_empty());
        assert_eq!(c.partial(4), 0.0);
    }

    #[test]
    fn quotient_rule() {
        let x = Dual::seed(&[3.0, 2.0]);
        let f = x[0].clone() / x[1].clone();
        assert!((f.v - 1.5).abs() < 1e-15);
        assert!((f.d[0] - 0.5).abs() < 1e-15);
        assert!((f.d[1] + 0.75).abs() < 1e-15);
    }
}
