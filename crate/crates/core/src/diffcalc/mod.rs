//! Exact derivatives of losses, networks and reparameterizations.
//!
//! Gradients and Jacobians come from [`Dual`] numbers, Hessians and second
//! derivatives of vector maps from [`Jet`]s. Both are exact to roundoff.
//! [`finite_diff`] holds the central-difference oracle used by the tests;
//! nothing in the library differentiates numerically.

mod dual;
pub mod finite_diff;
mod jet;
mod real;

use nalgebra::{DMatrix, DVector};

pub use dual::Dual;
pub use jet::Jet;
pub use real::{mat_vec, sum, Real, ScalarField, ScalarFn, VectorFn, VectorMap};

use crate::error::{Error, Result};

/// Second derivatives of a vector map: `self[l][(i, j)] = ∂²m^l/∂x^i∂x^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank3 {
    slices: Vec<DMatrix<f64>>,
}

impl Rank3 {
    pub fn zeros(outer: usize, n: usize) -> Self {
        Rank3 {
            slices: vec![DMatrix::zeros(n, n); outer],
        }
    }

    pub fn from_slices(slices: Vec<DMatrix<f64>>) -> Self {
        Rank3 { slices }
    }

    pub fn outer_dim(&self) -> usize {
        self.slices.len()
    }

    pub fn inner_dim(&self) -> usize {
        self.slices.first().map_or(0, |m| m.nrows())
    }

    pub fn get(&self, l: usize, i: usize, j: usize) -> f64 {
        self.slices[l][(i, j)]
    }

    pub fn slice(&self, l: usize) -> &DMatrix<f64> {
        &self.slices[l]
    }

    pub fn slices(&self) -> &[DMatrix<f64>] {
        &self.slices
    }

    /// `out[l] = Σ_ij self[l][i][j] u^i w^j`.
    pub fn contract(&self, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.slices.len(),
            self.slices.iter().map(|m| u.dot(&(m * w))),
        )
    }

    /// `out[(i, j)] = Σ_l c_l self[l][i][j]`.
    pub fn weighted_sum(&self, c: &DVector<f64>) -> DMatrix<f64> {
        let n = self.inner_dim();
        self.slices
            .iter()
            .zip(c.iter())
            .fold(DMatrix::zeros(n, n), |acc, (m, &w)| acc + m * w)
    }

    pub fn max_abs(&self) -> f64 {
        self.slices
            .iter()
            .flat_map(|m| m.iter())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }
}

fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

fn non_finite(what: &'static str, theta: &DVector<f64>) -> Error {
    Error::NonFinite {
        what,
        at: theta.iter().copied().collect(),
    }
}

/// Evaluate a field and reject non-finite values.
pub fn value(f: &dyn ScalarField, theta: &DVector<f64>) -> Result<f64> {
    check_dim("scalar field input", f.dim(), theta.len())?;
    let v = f.eval_f64(theta.as_slice());
    if v.is_finite() {
        Ok(v)
    } else {
        Err(non_finite("loss value", theta))
    }
}

/// Evaluate a map and reject non-finite outputs.
pub fn apply(m: &dyn VectorMap, theta: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("vector map input", m.in_dim(), theta.len())?;
    let out = DVector::from_vec(m.eval_f64(theta.as_slice()));
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(non_finite("map value", theta))
    }
}

/// `∂f/∂θ^i`.
pub fn gradient(f: &dyn ScalarField, theta: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("scalar field input", f.dim(), theta.len())?;
    let n = theta.len();
    let out = f.eval_dual(&Dual::seed(theta.as_slice()));
    let grad = DVector::from_fn(n, |i, _| out.partial(i));
    if out.v.is_finite() && grad.iter().all(|v| v.is_finite()) {
        Ok(grad)
    } else {
        Err(non_finite("gradient", theta))
    }
}

/// Gradient and Hessian from one second-order pass.
pub fn gradient_and_hessian(
    f: &dyn ScalarField,
    theta: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_dim("scalar field input", f.dim(), theta.len())?;
    let n = theta.len();
    let out = f.eval_jet(&Jet::seed(theta.as_slice()));
    let grad = DVector::from_fn(n, |i, _| out.partial(i));
    let mut hess = DMatrix::from_fn(n, n, |i, j| out.second_partial(i, j));
    symmetrize(&mut hess);
    if out.v.is_finite() && grad.iter().all(|v| v.is_finite()) && hess.iter().all(|v| v.is_finite())
    {
        Ok((grad, hess))
    } else {
        Err(non_finite("hessian", theta))
    }
}

/// `∂²f/∂θ^i∂θ^j`, exactly symmetric.
pub fn hessian(f: &dyn ScalarField, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    gradient_and_hessian(f, theta).map(|(_, h)| h)
}

/// `J[(a, i)] = ∂m^a/∂θ^i`.
pub fn jacobian(m: &dyn VectorMap, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_dim("vector map input", m.in_dim(), theta.len())?;
    let n = theta.len();
    let out = m.eval_dual(&Dual::seed(theta.as_slice()));
    let jac = DMatrix::from_fn(out.len(), n, |a, i| out[a].partial(i));
    if out.iter().all(|o| o.v.is_finite()) && jac.iter().all(|v| v.is_finite()) {
        Ok(jac)
    } else {
        Err(non_finite("jacobian", theta))
    }
}

/// `D[l][(i, j)] = ∂²m^l/∂θ^i∂θ^j`, exactly symmetric in `(i, j)`.
pub fn second_derivatives(m: &dyn VectorMap, theta: &DVector<f64>) -> Result<Rank3> {
    check_dim("vector map input", m.in_dim(), theta.len())?;
    let n = theta.len();
    let out = m.eval_jet(&Jet::seed(theta.as_slice()));
    let mut slices = Vec::with_capacity(out.len());
    for o in &out {
        let mut s = DMatrix::from_fn(n, n, |i, j| o.second_partial(i, j));
        symmetrize(&mut s);
        if !o.v.is_finite() || s.iter().any(|v| !v.is_finite()) {
            return Err(non_finite("second derivative", theta));
        }
        slices.push(s);
    }
    Ok(Rank3 { slices })
}

/// Copy the upper triangle onto the lower one.
fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            m[(i, j)] = m[(j, i)];
        }
    }
}
