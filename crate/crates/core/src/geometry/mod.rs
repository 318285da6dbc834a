//! Reparameterizations and how every object of the lab transforms under them.
//!
//! Conventions: `g` maps the base chart `θ` to the barred chart `θ̄ = g(θ)`.
//! Losses and models are pulled back (`L̄ = L ∘ g⁻¹`), states and tangents are
//! pushed forward by the chain rule, and bilinear forms transform with two
//! Jacobians.

mod diffeo;
pub mod sampling;
mod state;
mod tensor;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub use diffeo::{Diffeomorphism, Family, Inverse, Shear, ShearProfile};
pub use state::{OptimizerState, StateVelocity};
pub use tensor::{Connection, Preconditioner, Variance};

use crate::diffcalc::{self, Rank3, Real, ScalarField, ScalarFn};
use crate::error::{Error, Result};
use crate::linalg;
use crate::models::ParametricModel;

/// Jacobians with a larger condition number are treated as singular.
pub const JACOBIAN_MAX_CONDITION: f64 = 1e12;

/// Tolerance of the pointwise naturalizer conditions.
pub const MEMBERSHIP_TOL: f64 = 1e-8;

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

/// `L̄(θ̄) = L(g⁻¹(θ̄))`.
struct PulledBackLoss {
    chart: Diffeomorphism,
    loss: Arc<dyn ScalarField>,
}

impl ScalarFn for PulledBackLoss {
    fn dim(&self) -> usize {
        self.chart.dim()
    }
    fn eval<T: Real>(&self, theta_bar: &[T]) -> T {
        T::call_field(&*self.loss, &self.chart.inverse(theta_bar))
    }
}

/// The loss expressed in the barred chart.
pub fn pullback_loss(
    g: &Diffeomorphism,
    loss: Arc<dyn ScalarField>,
) -> Result<Arc<dyn ScalarField>> {
    check_dim("pullback loss", g.dim(), loss.dim())?;
    if let Diffeomorphism::Identity { .. } = g {
        return Ok(loss);
    }
    Ok(Arc::new(PulledBackLoss {
        chart: g.clone(),
        loss,
    }))
}

/// A model evaluated in the barred chart: `f̄(x, θ̄) = f(x, g⁻¹(θ̄))`.
#[derive(Debug, Clone)]
pub struct Reparameterized<M> {
    pub model: M,
    pub chart: Diffeomorphism,
}

impl<M: ParametricModel> ParametricModel for Reparameterized<M> {
    fn param_dim(&self) -> usize {
        self.model.param_dim()
    }
    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.model.output_dim()
    }
    fn forward<T: Real>(&self, x: &[f64], theta_bar: &[T]) -> Vec<T> {
        self.model.forward(x, &self.chart.inverse(theta_bar))
    }
}

pub fn pullback_model<M: ParametricModel>(
    g: &Diffeomorphism,
    model: M,
) -> Result<Reparameterized<M>> {
    check_dim("pullback model", g.dim(), model.param_dim())?;
    Ok(Reparameterized {
        model,
        chart: g.clone(),
    })
}

/// `S(g)`: map a state through `g` by the chain rule. Time is unchanged.
pub fn pushforward_state(g: &Diffeomorphism, s: &OptimizerState) -> Result<OptimizerState> {
    s.validate()?;
    check_dim("pushforward state", g.dim(), s.dim())?;
    let theta = s.position();
    let theta_bar = diffcalc::apply(g, theta)?;
    let derivs = match s.velocity() {
        None => vec![theta_bar],
        Some(u) => {
            let j = diffcalc::jacobian(g, theta)?;
            vec![theta_bar, j * u]
        }
    };
    Ok(OptimizerState {
        time: s.time,
        derivs,
    })
}

/// `TS(g)`: map a state velocity `v` at `s` into the barred chart.
///
/// For second-order states `s = (θ, u)`, `v = (u, a)`, the acceleration picks
/// up the curvature of `g`: `ā = J a + D²g[u, u]`.
pub fn pushforward_tangent(
    g: &Diffeomorphism,
    s: &OptimizerState,
    v: &StateVelocity,
) -> Result<StateVelocity> {
    s.validate()?;
    check_dim("pushforward tangent", g.dim(), s.dim())?;
    if v.dderivs.len() != s.order() {
        return Err(Error::DimensionMismatch {
            what: "tangent order",
            expected: s.order(),
            found: v.dderivs.len(),
        });
    }
    let theta = s.position();
    let j = diffcalc::jacobian(g, theta)?;
    let dderivs = match s.velocity() {
        None => vec![&j * &v.dderivs[0]],
        Some(u) => {
            let d2 = diffcalc::second_derivatives(g, theta)?;
            vec![&j * &v.dderivs[0], &j * &v.dderivs[1] + d2.contract(u, u)]
        }
    };
    Ok(StateVelocity {
        dderivs,
        pseudo_inverse: v.pseudo_inverse,
    })
}

fn checked_jacobian(jac: DMatrix<f64>, at: &DVector<f64>) -> Result<DMatrix<f64>> {
    let condition = linalg::condition_number(&jac);
    if condition > JACOBIAN_MAX_CONDITION {
        return Err(Error::Singular {
            what: "jacobian",
            condition,
            at: at.iter().copied().collect(),
        });
    }
    Ok(jac)
}

/// Components of `G` in the barred chart at `θ̄`.
///
/// Covariant: `Ḡ = Kᵀ G K` with `K = ∂θ/∂θ̄`. Contravariant: `Ḡ = J G Jᵀ`
/// with `J = ∂θ̄/∂θ`.
pub fn transform_bilinear(
    g: &Diffeomorphism,
    form: &Preconditioner,
    theta_bar: &DVector<f64>,
) -> Result<Preconditioner> {
    check_dim("bilinear form", g.dim(), form.dim())?;
    check_dim("bilinear form point", g.dim(), theta_bar.len())?;
    Ok(match form.variance {
        Variance::Covariant => {
            let k = checked_jacobian(diffcalc::jacobian(&g.inverse_map(), theta_bar)?, theta_bar)?;
            Preconditioner {
                matrix: k.transpose() * &form.matrix * &k,
                variance: Variance::Covariant,
                factor: form.factor.as_ref().map(|b| b * &k),
            }
        }
        Variance::Contravariant => {
            let theta = diffcalc::apply(&g.inverse_map(), theta_bar)?;
            let j = checked_jacobian(diffcalc::jacobian(g, &theta)?, theta_bar)?;
            Preconditioner::contravariant(&j * &form.matrix * j.transpose())
        }
    })
}

/// Christoffel symbols of the base chart's flat connection seen from the
/// barred chart: `Γ̄^k_ij = Σ_l (∂θ̄^k/∂θ^l) ∂²θ^l/∂θ̄^i∂θ̄^j`.
pub fn pullback_connection(g: &Diffeomorphism) -> Connection {
    let n = g.dim();
    match g.family() {
        Some(Family::Shear) | None => {}
        // Affine charts have vanishing second derivatives.
        Some(_) => return Connection::flat(n),
    }
    let g = g.clone();
    Connection::from_fn(n, move |theta_bar| christoffel_at(&g, theta_bar))
}

fn christoffel_at(g: &Diffeomorphism, theta_bar: &DVector<f64>) -> Result<Rank3> {
    let inv = g.inverse_map();
    let theta = diffcalc::apply(&inv, theta_bar)?;
    let j = checked_jacobian(diffcalc::jacobian(g, &theta)?, theta_bar)?;
    let d2 = diffcalc::second_derivatives(&inv, theta_bar)?;
    let n = g.dim();
    let slices = (0..n)
        .map(|k| {
            let weights = DVector::from_fn(n, |l, _| j[(k, l)]);
            d2.weighted_sum(&weights)
        })
        .collect();
    Ok(Rank3::from_slices(slices))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NaturalizerCondition {
    /// `J Jᵀ = I` with `J` constant.
    OrthogonalJacobian,
    /// `J` a constant signed permutation matrix.
    SignedPermutation,
    /// `J` constant.
    Affine,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Membership {
    pub holds: bool,
    pub max_violation: f64,
}

/// Check the named Jacobian condition at every sample, including constancy
/// of the Jacobian across samples.
pub fn naturalizer_membership(
    g: &Diffeomorphism,
    condition: NaturalizerCondition,
    samples: &[DVector<f64>],
) -> Result<Membership> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no sample points".into()));
    }
    let jacobians = samples
        .iter()
        .map(|s| diffcalc::jacobian(g, s))
        .collect::<Result<Vec<_>>>()?;
    let n = g.dim();
    let reference = &jacobians[0];
    let mut violation = 0.0_f64;
    for j in &jacobians {
        violation = violation.max(linalg::max_abs(&(j - reference)));
        let orthogonality = linalg::max_abs(&(j * j.transpose() - DMatrix::identity(n, n)));
        match condition {
            NaturalizerCondition::Affine => {}
            NaturalizerCondition::OrthogonalJacobian => violation = violation.max(orthogonality),
            NaturalizerCondition::SignedPermutation => {
                let entries = j
                    .iter()
                    .map(|v| v.abs().min((v.abs() - 1.0).abs()))
                    .fold(0.0, f64::max);
                violation = violation.max(orthogonality).max(entries);
            }
        }
    }
    Ok(Membership {
        holds: violation <= MEMBERSHIP_TOL,
        max_violation: violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::QuadraticLoss;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_6};

    fn shear(beta: f64) -> Diffeomorphism {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        Diffeomorphism::shear(beta, w, ShearProfile::Sin).unwrap()
    }

    fn rotation(angle: f64) -> DMatrix<f64> {
        let (s, c) = angle.sin_cos();
        DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn pullback_of_doubling() {
        let g = Diffeomorphism::scaling(2.0, 1).unwrap();
        let lbar = pullback_loss(&g, Arc::new(QuadraticLoss::isotropic(1))).unwrap();
        for x in [-3.0, 0.5, 4.0] {
            assert!((lbar.eval_f64(&[x]) - x * x / 8.0).abs() < 1e-15);
        }
    }

    #[test]
    fn pullback_of_identity_and_translation() {
        let loss: Arc<dyn ScalarField> = Arc::new(QuadraticLoss::isotropic(2));
        let same = pullback_loss(&Diffeomorphism::identity(2), loss.clone()).unwrap();
        assert_eq!(same.eval_f64(&[1.0, 2.0]), loss.eval_f64(&[1.0, 2.0]));
        let c = v(&[0.5, -1.0]);
        let shifted = pullback_loss(&Diffeomorphism::translation(c.clone()), loss.clone()).unwrap();
        let x = v(&[2.0, 3.0]);
        assert_eq!(
            shifted.eval_f64(x.as_slice()),
            loss.eval_f64((&x - &c).as_slice())
        );
    }

    #[test]
    fn affine_pushforward_of_second_order_state() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        let c = v(&[1.0, -1.0]);
        let g = Diffeomorphism::affine(a.clone(), c.clone()).unwrap();
        let s = OptimizerState::second_order(0.5, v(&[1.0, 2.0]), v(&[-1.0, 0.5]));
        let out = pushforward_state(&g, &s).unwrap();
        assert_eq!(out.time, 0.5);
        assert_eq!(out.derivs[0], &a * s.position() + c);
        assert_eq!(out.derivs[1], &a * s.velocity().unwrap());
    }

    #[test]
    fn shear_pushforward_velocity() {
        let s = OptimizerState::second_order(1.0, v(&[0.0, 1.0]), v(&[1.0, 0.0]));
        let out = pushforward_state(&shear(0.5), &s).unwrap();
        assert_eq!(out.derivs[1], v(&[1.0, 0.5]));
    }

    #[test]
    fn identity_pushforward_is_noop() {
        let s = OptimizerState::second_order(2.0, v(&[0.3, 1.0]), v(&[1.0, -4.0]));
        assert_eq!(
            pushforward_state(&Diffeomorphism::identity(2), &s).unwrap(),
            s
        );
    }

    #[test]
    fn affine_tangent_has_no_curvature_term() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        let g = Diffeomorphism::affine(a.clone(), v(&[0.0, 0.0])).unwrap();
        let s = OptimizerState::second_order(1.0, v(&[1.0, 2.0]), v(&[1.0, 1.0]));
        let vel = StateVelocity::new(vec![v(&[1.0, 1.0]), v(&[0.5, -2.0])]);
        let out = pushforward_tangent(&g, &s, &vel).unwrap();
        assert_eq!(out.dderivs[1], &a * v(&[0.5, -2.0]));
    }

    #[test]
    fn shear_tangent_curvature_term() {
        let s = OptimizerState::second_order(1.0, v(&[FRAC_PI_2, 0.0]), v(&[1.0, 0.0]));
        let vel = StateVelocity::new(vec![v(&[1.0, 0.0]), v(&[0.0, 0.0])]);
        let out = pushforward_tangent(&shear(0.5), &s, &vel).unwrap();
        assert!((&out.dderivs[1] - v(&[0.0, -0.5])).amax() < 1e-15);
    }

    #[test]
    fn bilinear_under_doubling_rotation_identity() {
        let doubling = Diffeomorphism::scaling(2.0, 1).unwrap();
        let g1 = Preconditioner::covariant(DMatrix::from_element(1, 1, 1.0));
        let out = transform_bilinear(&doubling, &g1, &v(&[3.0])).unwrap();
        assert_eq!(out.matrix[(0, 0)], 0.25);

        let q = Diffeomorphism::euclidean(rotation(0.4), v(&[1.0, 2.0])).unwrap();
        let eye = Preconditioner::covariant(DMatrix::identity(2, 2));
        let out = transform_bilinear(&q, &eye, &v(&[0.1, 0.2])).unwrap();
        assert!((out.matrix - DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);

        let m = Preconditioner::covariant(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]));
        let out = transform_bilinear(&Diffeomorphism::identity(2), &m, &v(&[0.1, 0.2])).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn contravariant_form_uses_inverse_law() {
        let doubling = Diffeomorphism::scaling(2.0, 1).unwrap();
        let inv = Preconditioner::contravariant(DMatrix::from_element(1, 1, 1.0));
        let out = transform_bilinear(&doubling, &inv, &v(&[3.0])).unwrap();
        assert_eq!(out.matrix[(0, 0)], 4.0);
    }

    #[test]
    fn affine_connection_is_flat() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        let g = Diffeomorphism::affine(a, v(&[0.0, 1.0])).unwrap();
        let conn = pullback_connection(&g);
        assert_eq!(conn.christoffel(&v(&[0.3, 0.4])).unwrap().max_abs(), 0.0);
        // A composite that happens to be affine goes through the general path.
        let c = g.clone().then(Diffeomorphism::identity(2));
        let conn = pullback_connection(&c);
        assert!(conn.christoffel(&v(&[0.3, 0.4])).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn shear_connection_single_entry() {
        // At θ₁ = π/2 the only curvature is ∂²θ₂/∂θ̄₁² = +β sin θ₁ = 0.5,
        // and the Jacobian row k = 2 picks it up with weight 1.
        let g = shear(0.5);
        let theta_bar = g.apply(&v(&[FRAC_PI_2, 0.3]));
        let gamma = pullback_connection(&g).christoffel(&theta_bar).unwrap();
        assert!((gamma.get(1, 0, 0) - 0.5).abs() < 1e-15);
        for (k, i, j) in [(0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 0, 1), (1, 1, 1)] {
            assert!(gamma.get(k, i, j).abs() < 1e-15);
        }
    }

    #[test]
    fn composing_with_identity_keeps_connection() {
        let g = shear(0.7);
        let c = g.clone().then(Diffeomorphism::identity(2));
        let at = v(&[0.4, -1.1]);
        let a = pullback_connection(&g).christoffel(&at).unwrap();
        let b = pullback_connection(&c).christoffel(&at).unwrap();
        for (x, y) in a.slices().iter().zip(b.slices()) {
            assert!((x - y).amax() < 1e-15);
        }
    }

    #[test]
    fn membership_examples() {
        let pts = vec![v(&[0.0, 0.0]), v(&[1.0, -1.0]), v(&[-1.5, 0.7])];
        let rot = Diffeomorphism::euclidean(rotation(FRAC_PI_6), v(&[1.0, 2.0])).unwrap();
        let m =
            naturalizer_membership(&rot, NaturalizerCondition::OrthogonalJacobian, &pts).unwrap();
        assert!(m.holds);

        let doubling = Diffeomorphism::scaling(2.0, 2).unwrap();
        let m = naturalizer_membership(&doubling, NaturalizerCondition::OrthogonalJacobian, &pts)
            .unwrap();
        assert!(!m.holds);
        assert!((m.max_violation - 3.0).abs() < 1e-15);

        let m = naturalizer_membership(&shear(0.5), NaturalizerCondition::Affine, &pts).unwrap();
        assert!(!m.holds);

        let m =
            naturalizer_membership(&rot, NaturalizerCondition::SignedPermutation, &pts).unwrap();
        assert!(!m.holds);
        let p = Diffeomorphism::signed_permutation(&[1, 0], &[-1.0, 1.0], v(&[0.0, 3.0])).unwrap();
        let m = naturalizer_membership(&p, NaturalizerCondition::SignedPermutation, &pts).unwrap();
        assert!(m.holds);
        assert!(naturalizer_membership(&p, NaturalizerCondition::Affine, &[]).is_err());
    }
}
