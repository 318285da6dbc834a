//! Seeded sampling of catalog reparameterizations.
//!
//! All randomness in the crate flows through [`SeededRng`] (ChaCha8), one
//! stream per independent draw so results do not depend on evaluation order.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::diffeo::{Diffeomorphism, Family, ShearProfile};
use crate::error::{Error, Result};
use crate::linalg;

pub type SeededRng = ChaCha8Rng;

/// Largest condition number of a sampled affine linear part.
pub const AFFINE_MAX_CONDITION: f64 = 50.0;

/// Generic rotations closer than this (entrywise) to a signed permutation
/// are rejected.
pub const SIGNED_PERMUTATION_EXCLUSION: f64 = 1e-3;

/// Generator for `(seed, stream)`; distinct streams are independent.
pub fn rng_for(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn uniform_vector(n: usize, lo: f64, hi: f64, rng: &mut SeededRng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

fn gaussian_matrix(n: usize, rng: &mut SeededRng) -> DMatrix<f64> {
    let entries: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_vec(n, n, entries)
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`.
pub fn random_orthogonal(n: usize, rng: &mut SeededRng) -> DMatrix<f64> {
    loop {
        let qr = gaussian_matrix(n, rng).qr();
        let r = qr.r();
        if (0..n).any(|i| r[(i, i)].abs() < 1e-12) {
            continue;
        }
        let mut q = qr.q();
        for j in 0..n {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        return q;
    }
}

/// True when every row has an entry within `tol` of ±1 (so the orthogonal
/// matrix is entrywise close to a signed permutation).
pub fn is_near_signed_permutation(q: &DMatrix<f64>, tol: f64) -> bool {
    q.row_iter()
        .all(|row| row.iter().any(|v| (v.abs() - 1.0).abs() <= tol))
}

fn random_signed_permutation(n: usize, rng: &mut SeededRng) -> (Vec<usize>, Vec<f64>) {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let signs = (0..n)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    (perm, signs)
}

/// `U diag(s) Vᵀ` with `s ∈ [1, κ]`, `κ ∈ [2, 50]`, so the map is never
/// orthogonal and its condition number is capped.
fn random_affine_matrix(n: usize, rng: &mut SeededRng) -> DMatrix<f64> {
    let kappa = rng.random_range(2.0..AFFINE_MAX_CONDITION);
    if n == 1 {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        return DMatrix::from_element(1, 1, sign * kappa);
    }
    let mut s: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..kappa)).collect();
    s[0] = 1.0;
    s[n - 1] = kappa;
    let u = random_orthogonal(n, rng);
    let v = random_orthogonal(n, rng);
    &u * DMatrix::from_diagonal(&DVector::from_vec(s)) * v.transpose()
}

fn random_shear(n: usize, rng: &mut SeededRng) -> Result<Diffeomorphism> {
    let beta = rng.random_range(0.3..1.0);
    let mut weights = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            weights[(i, j)] = rng.random_range(-1.0..1.0);
        }
    }
    let profile = if rng.random_bool(0.5) {
        ShearProfile::Sin
    } else {
        ShearProfile::Tanh
    };
    Diffeomorphism::shear(beta, weights, profile)
}

/// Draw one member of `family` in dimension `n`. Linear families include a
/// random translation in `[-1, 1]^n`.
pub fn sample(family: Family, n: usize, rng: &mut SeededRng) -> Result<Diffeomorphism> {
    if n == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    match family {
        Family::Translation => Ok(Diffeomorphism::translation(uniform_vector(
            n, -1.0, 1.0, rng,
        ))),
        Family::Euclidean => {
            if n < 2 {
                return Err(Error::InvalidArgument(
                    "generic rotations need dimension ≥ 2".into(),
                ));
            }
            let q = loop {
                let q = random_orthogonal(n, rng);
                if !is_near_signed_permutation(&q, SIGNED_PERMUTATION_EXCLUSION) {
                    break q;
                }
            };
            let c = uniform_vector(n, -1.0, 1.0, rng);
            Diffeomorphism::euclidean(q, c)
        }
        Family::SignedPermutation => {
            let (perm, signs) = random_signed_permutation(n, rng);
            let c = uniform_vector(n, -1.0, 1.0, rng);
            Diffeomorphism::signed_permutation(&perm, &signs, c)
        }
        Family::Affine => {
            let a = random_affine_matrix(n, rng);
            debug_assert!(linalg::condition_number(&a) <= AFFINE_MAX_CONDITION * (1.0 + 1e-9));
            let c = uniform_vector(n, -1.0, 1.0, rng);
            Diffeomorphism::affine(a, c)
        }
        Family::Shear => random_shear(n, rng),
    }
}

/// Catalog entry addressed by family name and seed.
pub fn catalog(family: Family, n: usize, seed: u64) -> Result<Diffeomorphism> {
    sample(family, n, &mut rng_for(seed, family.index()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_rotations_are_orthogonal_and_generic() {
        let mut rng = rng_for(7, 0);
        for n in [2, 3, 8] {
            for _ in 0..10 {
                let q = random_orthogonal(n, &mut rng);
                let defect = (&q * q.transpose() - DMatrix::identity(n, n)).amax();
                assert!(defect < 1e-12);
            }
            let g = sample(Family::Euclidean, n, &mut rng).unwrap();
            if let Diffeomorphism::Linear { matrix, .. } = &g {
                assert!(!is_near_signed_permutation(
                    matrix,
                    SIGNED_PERMUTATION_EXCLUSION
                ));
            } else {
                panic!("expected a linear map");
            }
        }
    }

    #[test]
    fn affine_condition_is_capped() {
        let mut rng = rng_for(3, 1);
        for n in [1, 2, 4, 8] {
            for _ in 0..20 {
                let g = sample(Family::Affine, n, &mut rng).unwrap();
                let Diffeomorphism::Linear { matrix, .. } = &g else {
                    panic!("expected a linear map")
                };
                let cond = linalg::condition_number(matrix);
                assert!(cond <= AFFINE_MAX_CONDITION * (1.0 + 1e-9));
                let defect = (matrix * matrix.transpose() - DMatrix::identity(n, n)).amax();
                assert!(defect > 0.5, "affine sample is nearly orthogonal");
            }
        }
    }

    #[test]
    fn catalog_is_reproducible() {
        for f in Family::ALL {
            assert_eq!(catalog(f, 4, 11).unwrap(), catalog(f, 4, 11).unwrap());
        }
        assert_ne!(
            catalog(Family::Shear, 4, 11).unwrap(),
            catalog(Family::Shear, 4, 12).unwrap()
        );
    }

    #[test]
    fn one_dimensional_rotation_is_refused() {
        assert!(sample(Family::Euclidean, 1, &mut rng_for(0, 0)).is_err());
    }
}
