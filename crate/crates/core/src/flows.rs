//! Limiting ODEs of the training algorithms.
//!
//! Every flow is a pure map from an [`OptimizerState`] to its ξ-derivative.
//! Order-1 flows act on `θ`; order-2 flows act on `(θ, u)` and may depend on
//! time through a `r/ξ` friction term, regularized at [`XI_MIN`].

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diffcalc::{self, ScalarField};
use crate::error::{Error, Result};
use crate::geometry::{Connection, OptimizerState, Preconditioner, StateVelocity, Variance};
use crate::linalg;
use crate::models::{network_jacobian, Dataset, GaussianHead, ParametricModel};

/// Lower bound on ξ inside the friction term.
pub const XI_MIN: f64 = 1e-3;

/// Hessians worse conditioned than this are refused by Newton flows.
pub const NEWTON_MAX_CONDITION: f64 = 1e12;

pub const DEFAULT_ADAM_EPS: f64 = 1e-8;

/// Friction constant of Nesterov's limit.
pub const DEFAULT_FRICTION: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Gd,
    Nesterov,
    Adam,
    Newton,
    NewtonCovariant,
    Ngd,
    Ggn,
    Nngd,
    Agn,
}

impl Algorithm {
    pub const ALL: [Algorithm; 9] = [
        Algorithm::Gd,
        Algorithm::Nesterov,
        Algorithm::Adam,
        Algorithm::Newton,
        Algorithm::NewtonCovariant,
        Algorithm::Ngd,
        Algorithm::Ggn,
        Algorithm::Nngd,
        Algorithm::Agn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Gd => "gd",
            Algorithm::Nesterov => "nesterov",
            Algorithm::Adam => "adam",
            Algorithm::Newton => "newton",
            Algorithm::NewtonCovariant => "newton-covariant",
            Algorithm::Ngd => "ngd",
            Algorithm::Ggn => "ggn",
            Algorithm::Nngd => "nngd",
            Algorithm::Agn => "agn",
        }
    }

    pub fn order(self) -> usize {
        match self {
            Algorithm::Nesterov | Algorithm::Nngd | Algorithm::Agn => 2,
            _ => 1,
        }
    }

    /// Needs a model and dataset rather than a bare loss.
    pub fn needs_model(self) -> bool {
        matches!(
            self,
            Algorithm::Ngd | Algorithm::Ggn | Algorithm::Nngd | Algorithm::Agn
        )
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}'")))
    }
}

type EvalFn = dyn Fn(&OptimizerState) -> Result<StateVelocity> + Send + Sync;

/// `θ ↦ P(θ)`.
pub type PreconditionerFn = Arc<dyn Fn(&DVector<f64>) -> Result<Preconditioner> + Send + Sync>;

/// A vector field on optimizer states.
#[derive(Clone)]
pub struct FlowField {
    order: usize,
    autonomous: bool,
    algorithm: Option<Algorithm>,
    eval: Arc<EvalFn>,
}

impl FlowField {
    fn new<F>(order: usize, autonomous: bool, f: F) -> Self
    where
        F: Fn(&OptimizerState) -> Result<StateVelocity> + Send + Sync + 'static,
    {
        FlowField {
            order,
            autonomous,
            algorithm: None,
            eval: Arc::new(f),
        }
    }

    pub fn with_algorithm(mut self, algorithm: Algorithm) -> Self {
        self.algorithm = Some(algorithm);
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn is_autonomous(&self) -> bool {
        self.autonomous
    }

    pub fn algorithm(&self) -> Option<Algorithm> {
        self.algorithm
    }

    pub fn eval(&self, s: &OptimizerState) -> Result<StateVelocity> {
        s.validate()?;
        if s.order() != self.order {
            return Err(Error::DimensionMismatch {
                what: "state order",
                expected: self.order,
                found: s.order(),
            });
        }
        if !self.autonomous && s.time < 0.0 {
            return Err(Error::NegativeTime(s.time));
        }
        let v = (self.eval)(s)?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "flow velocity",
                at: s.flatten().iter().copied().collect(),
            });
        }
        Ok(v)
    }
}

impl fmt::Debug for FlowField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FlowField")
            .field("order", &self.order)
            .field("autonomous", &self.autonomous)
            .field("algorithm", &self.algorithm)
            .finish()
    }
}

fn first_order<F>(f: F) -> FlowField
where
    F: Fn(&DVector<f64>) -> Result<(DVector<f64>, bool)> + Send + Sync + 'static,
{
    FlowField::new(1, true, move |s| {
        let (v, pseudo_inverse) = f(s.position())?;
        Ok(StateVelocity {
            dderivs: vec![v],
            pseudo_inverse,
        })
    })
}

/// `(u, −(r/max(ξ, ξ_min))·u + force(θ) − Γ(u, u))`.
fn second_order<F>(r: f64, connection: Option<Connection>, force: F) -> FlowField
where
    F: Fn(&DVector<f64>) -> Result<(DVector<f64>, bool)> + Send + Sync + 'static,
{
    let connection = connection.filter(|c| !c.is_flat());
    FlowField::new(2, false, move |s| {
        let theta = s.position();
        let u = s.velocity().expect("order checked by FlowField::eval");
        let (f, pseudo_inverse) = force(theta)?;
        let mut accel = u * (-r / s.time.max(XI_MIN)) + f;
        if let Some(c) = &connection {
            accel -= c.christoffel(theta)?.contract(u, u);
        }
        Ok(StateVelocity {
            dderivs: vec![u.clone(), accel],
            pseudo_inverse,
        })
    })
}

/// `θ̇ = −∇L`.
pub fn gradient_flow(loss: Arc<dyn ScalarField>) -> FlowField {
    first_order(move |theta| Ok((-diffcalc::gradient(&*loss, theta)?, false)))
        .with_algorithm(Algorithm::Gd)
}

/// `θ̈ = −(3/ξ)·θ̇ − ∇L`.
pub fn nesterov_flow(loss: Arc<dyn ScalarField>) -> FlowField {
    FlowField::new(2, false, move |s| {
        let u = s.velocity().expect("order checked by FlowField::eval");
        let grad = diffcalc::gradient(&*loss, s.position())?;
        let accel = u * (-DEFAULT_FRICTION / s.time.max(XI_MIN)) - grad;
        Ok(StateVelocity::new(vec![u.clone(), accel]))
    })
    .with_algorithm(Algorithm::Nesterov)
}

/// Stationary full-batch limit of Adam: `θ̇ⁱ = −gᵢ/(|gᵢ| + ε)`.
pub fn adam_stationary_flow(loss: Arc<dyn ScalarField>, eps: f64) -> Result<FlowField> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "adam ε must be positive, got {eps}"
        )));
    }
    Ok(first_order(move |theta| {
        let g = diffcalc::gradient(&*loss, theta)?;
        Ok((g.map(|gi| -gi / (gi.abs() + eps)), false))
    })
    .with_algorithm(Algorithm::Adam))
}

/// `H − Σ_k Γ^k ∂L/∂θ^k`; the plain Hessian for a flat connection.
pub fn covariant_hessian(
    loss: &dyn ScalarField,
    connection: Option<&Connection>,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let (grad, hess) = diffcalc::gradient_and_hessian(loss, theta)?;
    covariant_correction(hess, &grad, connection, theta)
}

fn covariant_correction(
    hess: DMatrix<f64>,
    grad: &DVector<f64>,
    connection: Option<&Connection>,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    match connection {
        Some(c) if !c.is_flat() => Ok(hess - c.christoffel(theta)?.weighted_sum(grad)),
        _ => Ok(hess),
    }
}

/// `θ̇ = −H⁻¹∇L`, with the covariant Hessian when a connection is given.
pub fn newton_flow(loss: Arc<dyn ScalarField>, connection: Option<Connection>) -> FlowField {
    let algorithm = if connection.is_some() {
        Algorithm::NewtonCovariant
    } else {
        Algorithm::Newton
    };
    first_order(move |theta| {
        let (grad, hess) = diffcalc::gradient_and_hessian(&*loss, theta)?;
        let h = covariant_correction(hess, &grad, connection.as_ref(), theta)?;
        let condition = linalg::condition_number(&h);
        if condition > NEWTON_MAX_CONDITION {
            return Err(Error::Singular {
                what: "hessian",
                condition,
                at: theta.iter().copied().collect(),
            });
        }
        let step = h.lu().solve(&grad).ok_or_else(|| Error::Singular {
            what: "hessian",
            condition,
            at: theta.iter().copied().collect(),
        })?;
        Ok((-step, false))
    })
    .with_algorithm(algorithm)
}

/// `G = (1/|S|) Σ Jᵀ M J` over the dataset, summed in dataset order.
///
/// The result also carries the factor `B` (rows `M^{1/2} J / √|S|`, stacked
/// per sample) with `BᵀB = G` up to roundoff.
pub fn ggn_matrix<M: ParametricModel>(
    model: &M,
    data: &Dataset,
    m: &DMatrix<f64>,
    theta: &DVector<f64>,
) -> Result<Preconditioner> {
    let p = model.output_dim();
    if m.nrows() != p || m.ncols() != p {
        return Err(Error::DimensionMismatch {
            what: "ggn output metric",
            expected: p,
            found: m.nrows(),
        });
    }
    if theta.len() != model.param_dim() {
        return Err(Error::DimensionMismatch {
            what: "ggn parameters",
            expected: model.param_dim(),
            found: theta.len(),
        });
    }
    let root = psd_sqrt(m)?;
    let n = theta.len();
    let scale = (data.len() as f64).sqrt();
    let mut g = DMatrix::zeros(n, n);
    let mut factor = DMatrix::zeros(p * data.len(), n);
    for (s, j) in network_jacobian(model, data, theta)?
        .into_iter()
        .enumerate()
    {
        g += j.transpose() * (m * &j);
        factor.rows_mut(s * p, p).copy_from(&(&root * &j / scale));
    }
    Ok(Preconditioner::gram(g / data.len() as f64, factor))
}

/// Symmetric square root of a PSD matrix.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let asym = linalg::max_abs(&(m - m.transpose()));
    let scale = linalg::max_abs(m).max(f64::MIN_POSITIVE);
    if asym > 1e-12 * scale {
        return Err(Error::InvalidArgument(
            "ggn output metric must be symmetric".into(),
        ));
    }
    let diagonal = (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0));
    if diagonal {
        if m.diagonal().iter().any(|&d| d < 0.0) {
            return Err(Error::InvalidArgument(
                "ggn output metric must be PSD".into(),
            ));
        }
        return Ok(m.map(f64::sqrt));
    }
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale) {
        return Err(Error::InvalidArgument(
            "ggn output metric must be PSD".into(),
        ));
    }
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

/// Fisher information of a Gaussian head: the GGN with `M = σ⁻² I`.
pub fn fisher_matrix<M: ParametricModel>(
    head: &GaussianHead<M>,
    data: &Dataset,
    theta: &DVector<f64>,
) -> Result<Preconditioner> {
    let p = head.model.output_dim();
    let m = DMatrix::identity(p, p) / head.noise_variance();
    ggn_matrix(&head.model, data, &m, theta)
}

/// `P(θ)⁻¹ ∇L`, read according to the variance of `P`.
fn precondition(p: &Preconditioner, grad: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    if p.dim() != grad.len() {
        return Err(Error::DimensionMismatch {
            what: "preconditioner",
            expected: grad.len(),
            found: p.dim(),
        });
    }
    match p.variance {
        Variance::Covariant => {
            let sol = match &p.factor {
                Some(b) => linalg::solve_gram(b, grad),
                None => linalg::solve_or_pinv(&p.matrix, grad),
            };
            Ok((sol.x, sol.truncated))
        }
        Variance::Contravariant => Ok((&p.matrix * grad, false)),
    }
}

/// `θ̇ = −P(θ)⁻¹∇L`, falling back to a pseudo-inverse when `P` is rank
/// deficient (flagged on the returned velocity).
pub fn preconditioned_flow(loss: Arc<dyn ScalarField>, p: PreconditionerFn) -> FlowField {
    first_order(move |theta| {
        let grad = diffcalc::gradient(&*loss, theta)?;
        let (step, truncated) = precondition(&p(theta)?, &grad)?;
        Ok((-step, truncated))
    })
}

/// `θ̈ = −(r/ξ)·θ̇ − P(θ)⁻¹∇L − Γ(θ̇, θ̇)`.
///
/// Without a connection the last term is absent. Supplying the pulled-back
/// connection of a chart makes the acceleration covariant, so the flow in
/// that chart is the image of the flat-chart flow.
pub fn accelerated_flow(
    loss: Arc<dyn ScalarField>,
    p: PreconditionerFn,
    r: f64,
    connection: Option<Connection>,
) -> Result<FlowField> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "friction r must be positive, got {r}"
        )));
    }
    Ok(second_order(r, connection, move |theta| {
        let grad = diffcalc::gradient(&*loss, theta)?;
        let (step, truncated) = precondition(&p(theta)?, &grad)?;
        Ok((-step, truncated))
    }))
}

/// The constant identity preconditioner.
pub fn identity_preconditioner(n: usize) -> PreconditionerFn {
    Arc::new(move |_| Ok(Preconditioner::covariant(DMatrix::identity(n, n))))
}
