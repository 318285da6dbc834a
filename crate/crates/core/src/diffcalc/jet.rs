//! Second-order forward-mode numbers: value, gradient and dense Hessian.
//!
//! Products are propagated as
//! `H(ab) = a·H(b) + b·H(a) + ∇a ∇bᵀ + ∇b ∇aᵀ` and unary functions as
//! `H(φ∘a) = φ'·H(a) + φ''·∇a ∇aᵀ`. Both updates are symmetric term by term,
//! so the Hessian stays exactly symmetric. Empty buffers mean zero.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::real::{Real, ScalarField, VectorMap};

#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub v: f64,
    /// Gradient, length n or empty.
    pub g: Vec<f64>,
    /// Row-major n×n Hessian, or empty.
    pub h: Vec<f64>,
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        Jet {
            v,
            g: Vec::new(),
            h: Vec::new(),
        }
    }

    pub fn variable(v: f64, index: usize, n: usize) -> Self {
        let mut g = vec![0.0; n];
        g[index] = 1.0;
        Jet {
            v,
            g,
            h: vec![0.0; n * n],
        }
    }

    pub fn seed(x: &[f64]) -> Vec<Jet> {
        let n = x.len();
        x.iter()
            .enumerate()
            .map(|(i, &v)| Jet::variable(v, i, n))
            .collect()
    }

    pub fn partial(&self, i: usize) -> f64 {
        self.g.get(i).copied().unwrap_or(0.0)
    }

    pub fn second_partial(&self, i: usize, j: usize) -> f64 {
        let n = self.g.len();
        if self.h.is_empty() {
            0.0
        } else {
            self.h[i * n + j]
        }
    }

    fn chain(self, value: f64, d1: f64, d2: f64) -> Self {
        let Jet { g, mut h, .. } = self;
        if g.is_empty() {
            return Jet::constant(value);
        }
        let n = g.len();
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                h[k] = d1 * h[k] + d2 * (g[i] * g[j]);
            }
        }
        let g = g.into_iter().map(|x| d1 * x).collect();
        Jet { v: value, g, h }
    }

    fn scale(self, value: f64, factor: f64) -> Self {
        let Jet { mut g, mut h, .. } = self;
        g.iter_mut().for_each(|x| *x *= factor);
        h.iter_mut().for_each(|x| *x *= factor);
        Jet { v: value, g, h }
    }

    fn add_signed(self, rhs: Jet, sign: f64) -> Self {
        let v = self.v + sign * rhs.v;
        if rhs.g.is_empty() {
            return Jet { v, ..self };
        }
        if self.g.is_empty() {
            let scaled = rhs.scale(0.0, sign);
            return Jet { v, ..scaled };
        }
        let Jet { mut g, mut h, .. } = self;
        for (a, b) in g.iter_mut().zip(&rhs.g) {
            *a += sign * b;
        }
        for (a, b) in h.iter_mut().zip(&rhs.h) {
            *a += sign * b;
        }
        Jet { v, g, h }
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        self.add_signed(rhs, 1.0)
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        self.add_signed(rhs, -1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        let (a, b) = (self.v, rhs.v);
        if rhs.g.is_empty() {
            return self.scale(a * b, b);
        }
        if self.g.is_empty() {
            return rhs.scale(a * b, a);
        }
        let n = self.g.len();
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                h[k] = a * rhs.h[k] + b * self.h[k] + (self.g[i] * rhs.g[j] + rhs.g[i] * self.g[j]);
            }
        }
        let g = self
            .g
            .iter()
            .zip(&rhs.g)
            .map(|(ga, gb)| b * ga + a * gb)
            .collect();
        Jet { v: a * b, g, h }
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, rhs: Jet) -> Jet {
        let inv = 1.0 / rhs.v;
        let recip = rhs.chain(inv, -inv * inv, 2.0 * inv * inv * inv);
        self * recip
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        let v = -self.v;
        self.scale(v, -1.0)
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, rhs: f64) -> Jet {
        self.v += rhs;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(mut self, rhs: f64) -> Jet {
        self.v -= rhs;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        let v = self.v * rhs;
        self.scale(v, rhs)
    }
}

impl Div<f64> for Jet {
    type Output = Jet;
    fn div(self, rhs: f64) -> Jet {
        let v = self.v / rhs;
        let Jet { mut g, mut h, .. } = self;
        g.iter_mut().for_each(|x| *x /= rhs);
        h.iter_mut().for_each(|x| *x /= rhs);
        Jet { v, g, h }
    }
}

impl Real for Jet {
    fn constant(value: f64) -> Self {
        Jet::constant(value)
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn sin(&self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.clone().chain(s, c, -s)
    }
    fn cos(&self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.clone().chain(c, -s, -c)
    }
    fn tanh(&self) -> Self {
        let t = self.v.tanh();
        let d1 = 1.0 - t * t;
        self.clone().chain(t, d1, -2.0 * t * d1)
    }
    fn exp(&self) -> Self {
        let e = self.v.exp();
        self.clone().chain(e, e, e)
    }
    fn ln(&self) -> Self {
        let inv = 1.0 / self.v;
        self.clone().chain(self.v.ln(), inv, -inv * inv)
    }
    fn sqrt(&self) -> Self {
        let s = self.v.sqrt();
        self.clone().chain(s, 0.5 / s, -0.25 / (s * self.v))
    }
    fn powi(&self, n: i32) -> Self {
        let nf = f64::from(n);
        let d1 = if n == 0 { 0.0 } else { nf * self.v.powi(n - 1) };
        let d2 = if n == 0 || n == 1 {
            0.0
        } else {
            nf * (nf - 1.0) * self.v.powi(n - 2)
        };
        self.clone().chain(self.v.powi(n), d1, d2)
    }
    fn call_field(f: &dyn ScalarField, x: &[Self]) -> Self {
        f.eval_jet(x)
    }
    fn call_map(m: &dyn VectorMap, x: &[Self]) -> Vec<Self> {
        m.eval_jet(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_second_derivative() {
        let x = Jet::seed(&[2.0]);
        let f = x[0].powi(3);
        assert_eq!(f.v, 8.0);
        assert_eq!(f.g, vec![12.0]);
        assert_eq!(f.h, vec![12.0]);
    }

    #[test]
    fn mixed_partial_of_product() {
        let x = Jet::seed(&[2.0, 5.0]);
        let f = x[0].clone() * x[1].clone();
        assert_eq!(f.h, vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn reciprocal_matches_powi() {
        let x = Jet::seed(&[1.7]);
        let a = Jet::constant(1.0) / x[0].clone();
        let b = x[0].powi(-1);
        assert!((a.g[0] - b.g[0]).abs() < 1e-14);
        assert!((a.h[0] - b.h[0]).abs() < 1e-14);
    }
}
