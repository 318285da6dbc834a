//! The scalar abstraction every differentiable expression is written against,
//! plus the object-safe field traits used to pass expressions around.
//!
//! Expressions implement [`ScalarFn`] / [`VectorFn`] once, generically over
//! [`Real`]. The blanket impls turn them into [`ScalarField`] / [`VectorMap`]
//! trait objects that can be evaluated with plain floats, first-order duals,
//! or second-order jets. A composite expression holding a `dyn ScalarField`
//! evaluates it through [`Real::call_field`], which dispatches to the method
//! matching the scalar type in use.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::DMatrix;

use super::dual::Dual;
use super::jet::Jet;

pub trait Real:
    Clone
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn constant(value: f64) -> Self;
    fn value(&self) -> f64;

    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn tanh(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn powi(&self, n: i32) -> Self;

    fn square(&self) -> Self {
        self.clone() * self.clone()
    }

    fn call_field(f: &dyn ScalarField, x: &[Self]) -> Self;
    fn call_map(m: &dyn VectorMap, x: &[Self]) -> Vec<Self>;
}

/// A scalar expression written once for every [`Real`].
pub trait ScalarFn: Send + Sync {
    fn dim(&self) -> usize;
    fn eval<T: Real>(&self, x: &[T]) -> T;
}

/// A vector-valued expression written once for every [`Real`].
pub trait VectorFn: Send + Sync {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn eval<T: Real>(&self, x: &[T]) -> Vec<T>;
}

/// Object-safe view of a twice-differentiable scalar field.
pub trait ScalarField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval_f64(&self, x: &[f64]) -> f64;
    fn eval_dual(&self, x: &[Dual]) -> Dual;
    fn eval_jet(&self, x: &[Jet]) -> Jet;
}

/// Object-safe view of a twice-differentiable map between parameter spaces.
pub trait VectorMap: Send + Sync {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn eval_f64(&self, x: &[f64]) -> Vec<f64>;
    fn eval_dual(&self, x: &[Dual]) -> Vec<Dual>;
    fn eval_jet(&self, x: &[Jet]) -> Vec<Jet>;
}

impl<F: ScalarFn + ?Sized> ScalarField for F {
    fn dim(&self) -> usize {
        ScalarFn::dim(self)
    }
    fn eval_f64(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }
    fn eval_dual(&self, x: &[Dual]) -> Dual {
        self.eval(x)
    }
    fn eval_jet(&self, x: &[Jet]) -> Jet {
        self.eval(x)
    }
}

impl<F: VectorFn + ?Sized> VectorMap for F {
    fn in_dim(&self) -> usize {
        VectorFn::in_dim(self)
    }
    fn out_dim(&self) -> usize {
        VectorFn::out_dim(self)
    }
    fn eval_f64(&self, x: &[f64]) -> Vec<f64> {
        self.eval(x)
    }
    fn eval_dual(&self, x: &[Dual]) -> Vec<Dual> {
        self.eval(x)
    }
    fn eval_jet(&self, x: &[Jet]) -> Vec<Jet> {
        self.eval(x)
    }
}

impl Real for f64 {
    fn constant(value: f64) -> Self {
        value
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn tanh(&self) -> Self {
        f64::tanh(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn powi(&self, n: i32) -> Self {
        f64::powi(*self, n)
    }
    fn call_field(f: &dyn ScalarField, x: &[Self]) -> Self {
        f.eval_f64(x)
    }
    fn call_map(m: &dyn VectorMap, x: &[Self]) -> Vec<Self> {
        m.eval_f64(x)
    }
}

/// Σ terms in index order, starting from an exact zero.
pub fn sum<T: Real>(terms: impl IntoIterator<Item = T>) -> T {
    terms
        .into_iter()
        .fold(T::constant(0.0), |acc, term| acc + term)
}

/// Float matrix times a vector of scalars.
pub fn mat_vec<T: Real>(m: &DMatrix<f64>, x: &[T]) -> Vec<T> {
    debug_assert_eq!(m.ncols(), x.len());
    (0..m.nrows())
        .map(|i| sum((0..m.ncols()).map(|j| x[j].clone() * m[(i, j)])))
        .collect()
}
