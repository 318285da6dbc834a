//! The reparameterization catalog.
//!
//! Every map has a closed-form inverse, so nothing here is solved
//! iteratively. Linear families are `θ̄ = Aθ + c`; the nonlinear family is
//! the triangular shear `θ̄_k = θ_k + β Σ_{j<k} W_kj φ(θ_j)`, whose Jacobian
//! is unit lower triangular.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diffcalc::{mat_vec, sum, Real, VectorFn};
use crate::error::{Error, Result};
use crate::linalg;

/// Families of reparameterizations sampled by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Translation,
    /// Orthogonal linear part plus translation.
    Euclidean,
    /// Signed permutation plus translation.
    SignedPermutation,
    /// Generic invertible (non-orthogonal) linear part plus translation.
    Affine,
    Shear,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Translation,
        Family::Euclidean,
        Family::SignedPermutation,
        Family::Affine,
        Family::Shear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Translation => "translation",
            Family::Euclidean => "euclidean",
            Family::SignedPermutation => "signed-permutation",
            Family::Affine => "affine",
            Family::Shear => "shear",
        }
    }

    /// Stable index used to derive per-family random streams.
    pub fn index(self) -> u64 {
        match self {
            Family::Translation => 0,
            Family::Euclidean => 1,
            Family::SignedPermutation => 2,
            Family::Affine => 3,
            Family::Shear => 4,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translation" => Ok(Family::Translation),
            "euclidean" => Ok(Family::Euclidean),
            "signed-permutation" | "signed-permutation+translation" => {
                Ok(Family::SignedPermutation)
            }
            "affine" => Ok(Family::Affine),
            "shear" => Ok(Family::Shear),
            other => Err(Error::Config(format!("unknown family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShearProfile {
    Sin,
    Tanh,
}

impl ShearProfile {
    fn apply<T: Real>(self, x: &T) -> T {
        match self {
            ShearProfile::Sin => x.sin(),
            ShearProfile::Tanh => x.tanh(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shear {
    beta: f64,
    /// Strictly lower triangular coupling weights.
    weights: DMatrix<f64>,
    profile: ShearProfile,
}

impl Shear {
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn profile(&self) -> ShearProfile {
        self.profile
    }

    fn offset<T: Real>(&self, k: usize, lower: &[T]) -> T {
        sum((0..k)
            .filter(|&j| self.weights[(k, j)] != 0.0)
            .map(|j| self.profile.apply(&lower[j]) * self.weights[(k, j)]))
            * self.beta
    }

    fn forward<T: Real>(&self, x: &[T]) -> Vec<T> {
        (0..x.len())
            .map(|k| {
                if k == 0 {
                    x[0].clone()
                } else {
                    x[k].clone() + self.offset(k, x)
                }
            })
            .collect()
    }

    fn inverse<T: Real>(&self, y: &[T]) -> Vec<T> {
        let mut x: Vec<T> = Vec::with_capacity(y.len());
        for k in 0..y.len() {
            let xk = if k == 0 {
                y[0].clone()
            } else {
                y[k].clone() - self.offset(k, &x)
            };
            x.push(xk);
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Diffeomorphism {
    Identity {
        dim: usize,
    },
    Translation {
        offset: DVector<f64>,
    },
    /// `θ̄ = Aθ + c`, tagged with the family it was built as.
    Linear {
        matrix: DMatrix<f64>,
        inverse: DMatrix<f64>,
        offset: DVector<f64>,
        family: Family,
    },
    Shear(Shear),
    /// Applied first to last.
    Composite(Vec<Diffeomorphism>),
}

const ORTHOGONALITY_TOL: f64 = 1e-10;

fn orthogonality_defect(q: &DMatrix<f64>) -> f64 {
    let n = q.nrows();
    linalg::max_abs(&(q * q.transpose() - DMatrix::identity(n, n)))
}

impl Diffeomorphism {
    pub fn identity(dim: usize) -> Self {
        Diffeomorphism::Identity { dim }
    }

    pub fn translation(offset: DVector<f64>) -> Self {
        Diffeomorphism::Translation { offset }
    }

    pub fn euclidean(q: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        check_square(&q, &offset)?;
        let defect = orthogonality_defect(&q);
        if defect > ORTHOGONALITY_TOL {
            return Err(Error::InvalidArgument(format!(
                "matrix is not orthogonal (|QQᵀ − I| = {defect:e})"
            )));
        }
        Ok(Diffeomorphism::Linear {
            inverse: q.transpose(),
            matrix: q,
            offset,
            family: Family::Euclidean,
        })
    }

    /// `θ̄_i = signs[i] · θ_{perm[i]} + c_i`.
    pub fn signed_permutation(perm: &[usize], signs: &[f64], offset: DVector<f64>) -> Result<Self> {
        let n = perm.len();
        if signs.len() != n || offset.len() != n {
            return Err(Error::DimensionMismatch {
                what: "signed permutation",
                expected: n,
                found: signs.len().min(offset.len()),
            });
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidArgument(format!(
                    "{perm:?} is not a permutation"
                )));
            }
        }
        if signs.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::InvalidArgument("signs must be ±1".into()));
        }
        let mut matrix = DMatrix::zeros(n, n);
        for (i, (&p, &s)) in perm.iter().zip(signs).enumerate() {
            matrix[(i, p)] = s;
        }
        Ok(Diffeomorphism::Linear {
            inverse: matrix.transpose(),
            matrix,
            offset,
            family: Family::SignedPermutation,
        })
    }

    pub fn affine(a: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        check_square(&a, &offset)?;
        let inverse = linalg::inverse(&a)
            .filter(|inv| inv.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::Singular {
                what: "affine matrix",
                condition: linalg::condition_number(&a),
                at: Vec::new(),
            })?;
        Ok(Diffeomorphism::Linear {
            matrix: a,
            inverse,
            offset,
            family: Family::Affine,
        })
    }

    /// `θ̄ = γ θ`.
    pub fn scaling(factor: f64, dim: usize) -> Result<Self> {
        Diffeomorphism::affine(DMatrix::identity(dim, dim) * factor, DVector::zeros(dim))
    }

    pub fn shear(beta: f64, weights: DMatrix<f64>, profile: ShearProfile) -> Result<Self> {
        if weights.nrows() != weights.ncols() {
            return Err(Error::InvalidArgument(
                "shear weights must be square".into(),
            ));
        }
        let n = weights.nrows();
        for i in 0..n {
            for j in i..n {
                if weights[(i, j)] != 0.0 {
                    return Err(Error::InvalidArgument(
                        "shear weights must be strictly lower triangular".into(),
                    ));
                }
            }
        }
        if !beta.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "shear coefficients must be finite".into(),
            ));
        }
        Ok(Diffeomorphism::Shear(Shear {
            beta,
            weights,
            profile,
        }))
    }

    /// `self` followed by `then`.
    pub fn then(self, then: Diffeomorphism) -> Self {
        let mut parts = match self {
            Diffeomorphism::Composite(parts) => parts,
            other => vec![other],
        };
        match then {
            Diffeomorphism::Composite(more) => parts.extend(more),
            other => parts.push(other),
        }
        Diffeomorphism::Composite(parts)
    }

    pub fn dim(&self) -> usize {
        match self {
            Diffeomorphism::Identity { dim } => *dim,
            Diffeomorphism::Translation { offset } => offset.len(),
            Diffeomorphism::Linear { offset, .. } => offset.len(),
            Diffeomorphism::Shear(s) => s.weights.nrows(),
            Diffeomorphism::Composite(parts) => parts.first().map_or(0, |p| p.dim()),
        }
    }

    /// The catalog family, if the map belongs to exactly one.
    pub fn family(&self) -> Option<Family> {
        match self {
            Diffeomorphism::Identity { .. } | Diffeomorphism::Translation { .. } => {
                Some(Family::Translation)
            }
            Diffeomorphism::Linear { family, .. } => Some(*family),
            Diffeomorphism::Shear(_) => Some(Family::Shear),
            Diffeomorphism::Composite(_) => None,
        }
    }

    pub fn forward<T: Real>(&self, x: &[T]) -> Vec<T> {
        match self {
            Diffeomorphism::Identity { .. } => x.to_vec(),
            Diffeomorphism::Translation { offset } => x
                .iter()
                .zip(offset.iter())
                .map(|(v, &c)| v.clone() + c)
                .collect(),
            Diffeomorphism::Linear { matrix, offset, .. } => mat_vec(matrix, x)
                .into_iter()
                .zip(offset.iter())
                .map(|(v, &c)| v + c)
                .collect(),
            Diffeomorphism::Shear(s) => s.forward(x),
            Diffeomorphism::Composite(parts) => parts
                .iter()
                .fold(x.to_vec(), |acc, part| part.forward(&acc)),
        }
    }

    pub fn inverse<T: Real>(&self, y: &[T]) -> Vec<T> {
        match self {
            Diffeomorphism::Identity { .. } => y.to_vec(),
            Diffeomorphism::Translation { offset } => y
                .iter()
                .zip(offset.iter())
                .map(|(v, &c)| v.clone() - c)
                .collect(),
            Diffeomorphism::Linear {
                inverse, offset, ..
            } => {
                let shifted: Vec<T> = y
                    .iter()
                    .zip(offset.iter())
                    .map(|(v, &c)| v.clone() - c)
                    .collect();
                mat_vec(inverse, &shifted)
            }
            Diffeomorphism::Shear(s) => s.inverse(y),
            Diffeomorphism::Composite(parts) => parts
                .iter()
                .rev()
                .fold(y.to_vec(), |acc, part| part.inverse(&acc)),
        }
    }

    pub fn apply(&self, theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.forward(theta.as_slice()))
    }

    pub fn apply_inverse(&self, theta_bar: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.inverse(theta_bar.as_slice()))
    }

    /// View of the inverse map as a differentiable [`VectorFn`].
    pub fn inverse_map(&self) -> Inverse<'_> {
        Inverse(self)
    }
}

fn check_square(a: &DMatrix<f64>, offset: &DVector<f64>) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() != offset.len() {
        return Err(Error::DimensionMismatch {
            what: "affine map",
            expected: offset.len(),
            found: a.nrows(),
        });
    }
    Ok(())
}

impl VectorFn for Diffeomorphism {
    fn in_dim(&self) -> usize {
        self.dim()
    }
    fn out_dim(&self) -> usize {
        self.dim()
    }
    fn eval<T: Real>(&self, x: &[T]) -> Vec<T> {
        self.forward(x)
    }
}

pub struct Inverse<'a>(pub &'a Diffeomorphism);

impl VectorFn for Inverse<'_> {
    fn in_dim(&self) -> usize {
        self.0.dim()
    }
    fn out_dim(&self) -> usize {
        self.0.dim()
    }
    fn eval<T: Real>(&self, x: &[T]) -> Vec<T> {
        self.0.inverse(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcalc::{jacobian, second_derivatives};

    fn example_shear() -> Diffeomorphism {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        Diffeomorphism::shear(0.5, w, ShearProfile::Sin).unwrap()
    }

    #[test]
    fn shear_inverse_is_exact_in_closed_form() {
        let g = example_shear();
        let theta = DVector::from_vec(vec![0.7, -1.2]);
        let back = g.apply_inverse(&g.apply(&theta));
        assert!((back - theta).amax() <= 1e-15);
    }

    #[test]
    fn shear_jacobian_and_curvature() {
        let g = example_shear();
        let j = jacobian(&g, &DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 1.0]));
        let d = second_derivatives(
            &g,
            &DVector::from_vec(vec![std::f64::consts::FRAC_PI_2, 1.0]),
        )
        .unwrap();
        assert!((d.get(1, 0, 0) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn shear_rejects_upper_weights() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(Diffeomorphism::shear(0.5, w, ShearProfile::Tanh).is_err());
    }

    #[test]
    fn signed_permutation_layout() {
        let g =
            Diffeomorphism::signed_permutation(&[2, 0, 1], &[1.0, -1.0, 1.0], DVector::zeros(3))
                .unwrap();
        let y = g.apply(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert_eq!(y.as_slice(), &[3.0, -1.0, 2.0]);
        assert!(
            Diffeomorphism::signed_permutation(&[0, 0], &[1.0, 1.0], DVector::zeros(2)).is_err()
        );
    }

    #[test]
    fn composite_applies_in_order() {
        let t = Diffeomorphism::translation(DVector::from_vec(vec![1.0]));
        let s = Diffeomorphism::scaling(2.0, 1).unwrap();
        let g = t.clone().then(s.clone());
        assert_eq!(g.apply(&DVector::from_vec(vec![1.0]))[0], 4.0);
        let h = s.then(t);
        assert_eq!(h.apply(&DVector::from_vec(vec![1.0]))[0], 3.0);
        assert_eq!(h.apply_inverse(&DVector::from_vec(vec![3.0]))[0], 1.0);
    }

    #[test]
    fn non_orthogonal_is_rejected_as_euclidean() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(Diffeomorphism::euclidean(a, DVector::zeros(2)).is_err());
    }

    #[test]
    fn singular_affine_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(Diffeomorphism::affine(a, DVector::zeros(2)).is_err());
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert!("rotation".parse::<Family>().is_err());
    }
}
