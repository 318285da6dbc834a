//! Central finite differences, kept as an independent oracle for the exact
//! derivatives. Only plain `f64` evaluation is used here.

use nalgebra::{DMatrix, DVector};

use super::real::{ScalarField, VectorMap};
use super::Rank3;

/// Step used by every oracle comparison in this crate.
pub const STEP: f64 = 1e-5;

fn shifted(theta: &DVector<f64>, i: usize, delta: f64) -> DVector<f64> {
    let mut t = theta.clone();
    t[i] += delta;
    t
}

pub fn gradient(f: &dyn ScalarField, theta: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(theta.len(), |i, _| {
        let plus = f.eval_f64(shifted(theta, i, h).as_slice());
        let minus = f.eval_f64(shifted(theta, i, -h).as_slice());
        (plus - minus) / (2.0 * h)
    })
}

/// Central differences of an exact gradient supplied by the caller.
pub fn jacobian_of<F>(grad: F, theta: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = theta.len();
    let cols: Vec<DVector<f64>> = (0..n)
        .map(|i| (grad(&shifted(theta, i, h)) - grad(&shifted(theta, i, -h))) / (2.0 * h))
        .collect();
    let m = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(m, n, |a, i| cols[i][a])
}

/// Hessian as central differences of central-difference gradients.
pub fn hessian(f: &dyn ScalarField, theta: &DVector<f64>, h: f64) -> DMatrix<f64> {
    jacobian_of(|t| gradient(f, t, h), theta, h)
}

pub fn jacobian(m: &dyn VectorMap, theta: &DVector<f64>, h: f64) -> DMatrix<f64> {
    jacobian_of(|t| DVector::from_vec(m.eval_f64(t.as_slice())), theta, h)
}

/// Second derivatives by differencing a caller-supplied Jacobian.
pub fn second_derivatives_of<F>(jac: F, theta: &DVector<f64>, h: f64) -> Rank3
where
    F: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let n = theta.len();
    let diffs: Vec<DMatrix<f64>> = (0..n)
        .map(|j| (jac(&shifted(theta, j, h)) - jac(&shifted(theta, j, -h))) / (2.0 * h))
        .collect();
    let outer = diffs.first().map_or(0, |d| d.nrows());
    Rank3::from_slices(
        (0..outer)
            .map(|l| DMatrix::from_fn(n, n, |i, j| diffs[j][(l, i)]))
            .collect(),
    )
}

/// `max|a−b| / max(1, max|b|)`: relative to the expected magnitude, with an
/// absolute floor so near-zero references do not blow up.
pub fn max_rel_error(actual: &[f64], expected: &[f64]) -> f64 {
    assert_eq!(actual.len(), expected.len());
    let scale = expected.iter().fold(1.0_f64, |m, b| m.max(b.abs()));
    actual
        .iter()
        .zip(expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}
