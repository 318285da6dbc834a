//! Naturality residuals and equivariance verdicts.
//!
//! A [`FlowBuilder`] constructs the same algorithm in any chart. The barred
//! flow is always built intrinsically, from the pulled-back loss, the
//! pulled-back model and the pulled-back connection, never by transporting
//! the base flow.

pub mod table;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcalc::{self, ScalarField};
use crate::error::{ChartTag, Error, Result};
use crate::flows::{
    self, accelerated_flow, adam_stationary_flow, gradient_flow, nesterov_flow, newton_flow,
    preconditioned_flow, Algorithm, FlowField, PreconditionerFn,
};
use crate::geometry::sampling::{self, uniform_vector};
use crate::geometry::{
    pullback_connection, pullback_loss, pullback_model, pushforward_state, pushforward_tangent,
    Diffeomorphism, Family, OptimizerState,
};
use crate::linalg;
use crate::models::{dataset_loss, Dataset, GaussianHead, Model, ParametricModel};

pub use table::{
    expected_verdict, group_label, reproduce_table, standard_problem, TableConfig, TableReport,
};

pub const DEFAULT_TOLERANCE: f64 = 1e-7;
pub const DEFAULT_VIOLATION_THRESHOLD: f64 = 1e-3;

/// States whose required matrices are worse conditioned are resampled.
pub const MAX_STATE_CONDITION: f64 = 1e8;

/// Coordinates of sampled states (θ and u) lie in `[-STATE_BOX, STATE_BOX]`.
pub const STATE_BOX: f64 = 1.5;

/// Flow times of sampled second-order states.
pub const TIME_RANGE: (f64, f64) = (0.5, 2.0);

const MAX_REJECTIONS: usize = 500;

/// A supervised problem: model, data, and the output metrics of its
/// Fisher and GGN preconditioners.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: Model,
    pub data: Dataset,
    pub noise_variance: f64,
    /// `M` of the GGN, `P×P`.
    pub output_metric: DMatrix<f64>,
}

impl Problem {
    pub fn new(model: Model, data: Dataset) -> Result<Self> {
        let p = model.output_dim();
        let problem = Problem {
            model,
            data,
            noise_variance: 1.0,
            output_metric: DMatrix::identity(p, p),
        };
        problem.check()?;
        Ok(problem)
    }

    fn check(&self) -> Result<()> {
        let p = self.model.output_dim();
        if self.output_metric.shape() != (p, p) {
            return Err(Error::DimensionMismatch {
                what: "ggn output metric",
                expected: p,
                found: self.output_metric.nrows(),
            });
        }
        if self.data.input_dim() != self.model.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "model input",
                expected: self.model.input_dim(),
                found: self.data.input_dim(),
            });
        }
        if self.data.output_dim() != p {
            return Err(Error::DimensionMismatch {
                what: "model output",
                expected: p,
                found: self.data.output_dim(),
            });
        }
        if !(self.noise_variance > 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::Config(format!(
                "noise variance must be positive, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }
}

/// What the algorithm minimizes.
#[derive(Clone)]
pub enum Objective {
    Loss(Arc<dyn ScalarField>),
    Supervised(Arc<Problem>),
}

impl Objective {
    pub fn dim(&self) -> usize {
        match self {
            Objective::Loss(l) => l.dim(),
            Objective::Supervised(p) => p.model.param_dim(),
        }
    }

    fn base_loss(&self) -> Result<Arc<dyn ScalarField>> {
        match self {
            Objective::Loss(l) => Ok(l.clone()),
            Objective::Supervised(p) => dataset_loss(p.model.clone(), &p.data),
        }
    }
}

impl fmt::Debug for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::Loss(l) => write!(f, "Loss(dim = {})", l.dim()),
            Objective::Supervised(p) => f.debug_tuple("Supervised").field(p).finish(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Metric {
    Fisher,
    Ggn,
}

/// An algorithm and its objective, buildable in any chart.
#[derive(Debug, Clone)]
pub struct FlowBuilder {
    algorithm: Algorithm,
    objective: Objective,
    friction: f64,
    adam_eps: f64,
}

impl FlowBuilder {
    pub fn new(algorithm: Algorithm, objective: Objective) -> Result<Self> {
        if algorithm.needs_model() && matches!(objective, Objective::Loss(_)) {
            return Err(Error::Config(format!(
                "algorithm '{algorithm}' needs a model and dataset"
            )));
        }
        if let Objective::Supervised(p) = &objective {
            p.check()?;
        }
        Ok(FlowBuilder {
            algorithm,
            objective,
            friction: flows::DEFAULT_FRICTION,
            adam_eps: flows::DEFAULT_ADAM_EPS,
        })
    }

    pub fn with_friction(mut self, r: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Config(format!(
                "friction r must be positive, got {r}"
            )));
        }
        self.friction = r;
        Ok(self)
    }

    pub fn with_adam_eps(mut self, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!("adam ε must be positive, got {eps}")));
        }
        self.adam_eps = eps;
        Ok(self)
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn order(&self) -> usize {
        self.algorithm.order()
    }

    /// The loss in the chart `θ̄ = chart(θ)`.
    pub fn loss(&self, chart: &Diffeomorphism) -> Result<Arc<dyn ScalarField>> {
        pullback_loss(chart, self.objective.base_loss()?)
    }

    fn metric(&self) -> Option<Metric> {
        match self.algorithm {
            Algorithm::Ngd | Algorithm::Nngd => Some(Metric::Fisher),
            Algorithm::Ggn | Algorithm::Agn => Some(Metric::Ggn),
            _ => None,
        }
    }

    fn preconditioner(&self, chart: &Diffeomorphism, metric: Metric) -> Result<PreconditionerFn> {
        let Objective::Supervised(problem) = &self.objective else {
            return Err(Error::Config("preconditioner needs a model".into()));
        };
        let model = pullback_model(chart, problem.model.clone())?;
        let data = problem.data.clone();
        Ok(match metric {
            Metric::Fisher => {
                let head = GaussianHead::new(model, problem.noise_variance)?;
                Arc::new(move |theta| flows::fisher_matrix(&head, &data, theta))
            }
            Metric::Ggn => {
                let m = problem.output_metric.clone();
                Arc::new(move |theta| flows::ggn_matrix(&model, &data, &m, theta))
            }
        })
    }

    /// The flow in the chart `θ̄ = chart(θ)`; the identity gives the base flow.
    pub fn build(&self, chart: &Diffeomorphism) -> Result<FlowField> {
        let loss = self.loss(chart)?;
        let flow = match self.algorithm {
            Algorithm::Gd => gradient_flow(loss),
            Algorithm::Nesterov => nesterov_flow(loss),
            Algorithm::Adam => adam_stationary_flow(loss, self.adam_eps)?,
            Algorithm::Newton => newton_flow(loss, None),
            Algorithm::NewtonCovariant => newton_flow(loss, Some(pullback_connection(chart))),
            Algorithm::Ngd | Algorithm::Ggn => {
                let metric = self.metric().expect("preconditioned algorithm");
                preconditioned_flow(loss, self.preconditioner(chart, metric)?)
            }
            Algorithm::Nngd | Algorithm::Agn => {
                let metric = self.metric().expect("preconditioned algorithm");
                accelerated_flow(
                    loss,
                    self.preconditioner(chart, metric)?,
                    self.friction,
                    Some(pullback_connection(chart)),
                )?
            }
        };
        Ok(flow.with_algorithm(self.algorithm))
    }

    /// Matrices the flow inverts at `θ̄` in the given chart.
    pub fn required_matrices(
        &self,
        chart: &Diffeomorphism,
        theta: &DVector<f64>,
    ) -> Result<Vec<DMatrix<f64>>> {
        match self.algorithm {
            Algorithm::Gd | Algorithm::Nesterov | Algorithm::Adam => Ok(Vec::new()),
            Algorithm::Newton => Ok(vec![diffcalc::hessian(&*self.loss(chart)?, theta)?]),
            Algorithm::NewtonCovariant => {
                let conn = pullback_connection(chart);
                Ok(vec![flows::covariant_hessian(
                    &*self.loss(chart)?,
                    Some(&conn),
                    theta,
                )?])
            }
            _ => {
                let metric = self.metric().expect("preconditioned algorithm");
                Ok(vec![self.preconditioner(chart, metric)?(theta)?.matrix])
            }
        }
    }
}

/// `‖TS(g)(η(s)) − η̄(S(g)s)‖` for already built base and barred flows.
pub fn residual_between(
    base: &FlowField,
    barred: &FlowField,
    g: &Diffeomorphism,
    s: &OptimizerState,
) -> Result<f64> {
    let v = base.eval(s).map_err(|e| e.in_chart(ChartTag::Base))?;
    let pushed = pushforward_tangent(g, s, &v)?;
    let s_bar = pushforward_state(g, s)?;
    let v_bar = barred
        .eval(&s_bar)
        .map_err(|e| e.in_chart(ChartTag::Barred))?;
    Ok((pushed.flatten() - v_bar.flatten()).norm())
}

/// How far the flow is from commuting with the reparameterization `g` at `s`.
pub fn naturality_residual(b: &FlowBuilder, g: &Diffeomorphism, s: &OptimizerState) -> Result<f64> {
    let base = b.build(&Diffeomorphism::identity(b.dim()))?;
    let barred = b.build(g)?;
    residual_between(&base, &barred, g, s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Equivariant,
    Violated,
    /// Between the tolerance and the violation threshold.
    Indeterminate,
}

impl Verdict {
    pub fn classify(max_residual: f64, tolerance: f64, threshold: f64) -> Verdict {
        if max_residual <= tolerance {
            Verdict::Equivariant
        } else if max_residual >= threshold {
            Verdict::Violated
        } else {
            Verdict::Indeterminate
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Verdict::Equivariant => "equivariant",
            Verdict::Violated => "violated",
            Verdict::Indeterminate => "indeterminate",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub algorithm: Algorithm,
    pub family: Family,
    pub dim: usize,
    pub trials: usize,
    pub max_residual: f64,
    pub mean_residual: f64,
    pub verdict: Verdict,
    pub seed: u64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyConfig {
    pub trials: usize,
    pub states_per_trial: usize,
    pub tolerance: f64,
    pub violation_threshold: f64,
    pub seed: u64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            trials: 32,
            states_per_trial: 2,
            tolerance: DEFAULT_TOLERANCE,
            violation_threshold: DEFAULT_VIOLATION_THRESHOLD,
            seed: 0,
        }
    }
}

impl ClassifyConfig {
    fn check(&self) -> Result<()> {
        if self.trials == 0 || self.states_per_trial == 0 {
            return Err(Error::Config(
                "trials and states per trial must be ≥ 1".into(),
            ));
        }
        if !(self.tolerance > 0.0 && self.tolerance < self.violation_threshold) {
            return Err(Error::Config(format!(
                "tolerance {} must be positive and below the violation threshold {}",
                self.tolerance, self.violation_threshold
            )));
        }
        Ok(())
    }
}

/// Random stream of one (family, trial) pair; shared by every algorithm so
/// all of them see the same reparameterizations.
fn trial_stream(family: Family, trial: usize) -> u64 {
    (family.index() << 32) | trial as u64
}

fn well_conditioned(b: &FlowBuilder, chart: &Diffeomorphism, theta: &DVector<f64>) -> Result<bool> {
    match b.required_matrices(chart, theta) {
        Ok(ms) => Ok(ms
            .iter()
            .all(|m| linalg::condition_number(m) <= MAX_STATE_CONDITION)),
        Err(Error::NonFinite { .. } | Error::Singular { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Draw a state whose required matrices are well conditioned in both charts.
pub fn sample_state(
    b: &FlowBuilder,
    g: &Diffeomorphism,
    rng: &mut sampling::SeededRng,
) -> Result<OptimizerState> {
    let n = b.dim();
    let identity = Diffeomorphism::identity(n);
    for _ in 0..MAX_REJECTIONS {
        let theta = uniform_vector(n, -STATE_BOX, STATE_BOX, rng);
        let s = if b.order() == 2 {
            let u = uniform_vector(n, -STATE_BOX, STATE_BOX, rng);
            let xi = rng.random_range(TIME_RANGE.0..TIME_RANGE.1);
            OptimizerState::second_order(xi, theta, u)
        } else {
            OptimizerState::first_order(theta)
        };
        if !well_conditioned(b, &identity, s.position())? {
            continue;
        }
        let theta_bar = diffcalc::apply(g, s.position())?;
        if well_conditioned(b, g, &theta_bar)? {
            return Ok(s);
        }
    }
    Err(Error::InvalidArgument(format!(
        "no well-conditioned state for {} after {MAX_REJECTIONS} draws",
        b.algorithm()
    )))
}

fn trial_residuals(
    b: &FlowBuilder,
    base: &FlowField,
    family: Family,
    trial: usize,
    cfg: &ClassifyConfig,
) -> Result<Vec<f64>> {
    let mut rng = sampling::rng_for(cfg.seed, trial_stream(family, trial));
    let g = sampling::sample(family, b.dim(), &mut rng)?;
    let barred = b.build(&g)?;
    (0..cfg.states_per_trial)
        .map(|_| {
            let s = sample_state(b, &g, &mut rng)?;
            residual_between(base, &barred, &g, &s)
        })
        .collect()
}

/// Monte-Carlo verdict for each family. Trials run in parallel and are
/// merged in (family, trial) order.
pub fn classify_equivariance(
    b: &FlowBuilder,
    families: &[Family],
    cfg: &ClassifyConfig,
) -> Result<Vec<ResidualReport>> {
    cfg.check()?;
    let base = b.build(&Diffeomorphism::identity(b.dim()))?;
    let jobs: Vec<(Family, usize)> = families
        .iter()
        .flat_map(|&f| (0..cfg.trials).map(move |t| (f, t)))
        .collect();
    let results: Vec<Result<Vec<f64>>> = jobs
        .par_iter()
        .map(|&(f, t)| trial_residuals(b, &base, f, t, cfg))
        .collect();
    let mut per_family = results.into_iter();
    families
        .iter()
        .map(|&family| {
            let mut residuals = Vec::with_capacity(cfg.trials * cfg.states_per_trial);
            for r in per_family.by_ref().take(cfg.trials) {
                residuals.extend(r?);
            }
            let max = residuals.iter().copied().fold(0.0, f64::max);
            let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
            let verdict = Verdict::classify(max, cfg.tolerance, cfg.violation_threshold);
            if verdict == Verdict::Indeterminate {
                log::warn!(
                    "{} × {family}: max residual {max:e} inside the verdict gap",
                    b.algorithm()
                );
            }
            Ok(ResidualReport {
                algorithm: b.algorithm(),
                family,
                dim: b.dim(),
                trials: cfg.trials,
                max_residual: max,
                mean_residual: mean,
                verdict,
                seed: cfg.seed,
                tolerance: cfg.tolerance,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::QuadraticLoss;

    fn half_square() -> Objective {
        Objective::Loss(Arc::new(QuadraticLoss::isotropic(1)))
    }

    #[test]
    fn gd_residual_under_doubling() {
        let b = FlowBuilder::new(Algorithm::Gd, half_square()).unwrap();
        let g = Diffeomorphism::scaling(2.0, 1).unwrap();
        let s = OptimizerState::first_order(DVector::from_vec(vec![1.0]));
        let r = naturality_residual(&b, &g, &s).unwrap();
        assert!((r - 1.5).abs() < 1e-12);
    }

    #[test]
    fn identity_has_zero_residual() {
        let problem = standard_problem(4).unwrap();
        for a in Algorithm::ALL {
            let b = FlowBuilder::new(a, Objective::Supervised(Arc::new(problem.clone()))).unwrap();
            let mut rng = sampling::rng_for(5, 0);
            let id = Diffeomorphism::identity(4);
            let s = sample_state(&b, &id, &mut rng).unwrap();
            assert!(naturality_residual(&b, &id, &s).unwrap() <= 1e-12, "{a}");
        }
    }

    #[test]
    fn model_algorithms_need_a_model() {
        assert!(FlowBuilder::new(Algorithm::Ngd, half_square()).is_err());
        assert!(FlowBuilder::new(Algorithm::Newton, half_square()).is_ok());
    }

    #[test]
    fn verdict_gap() {
        assert_eq!(Verdict::classify(1e-8, 1e-7, 1e-3), Verdict::Equivariant);
        assert_eq!(Verdict::classify(1e-2, 1e-7, 1e-3), Verdict::Violated);
        assert_eq!(Verdict::classify(1e-5, 1e-7, 1e-3), Verdict::Indeterminate);
    }

    #[test]
    fn errors_are_tagged_with_chart() {
        struct Quartic;
        impl crate::diffcalc::ScalarFn for Quartic {
            fn dim(&self) -> usize {
                1
            }
            fn eval<T: crate::diffcalc::Real>(&self, x: &[T]) -> T {
                x[0].powi(4)
            }
        }
        let b = FlowBuilder::new(Algorithm::Newton, Objective::Loss(Arc::new(Quartic))).unwrap();
        let s = OptimizerState::first_order(DVector::from_vec(vec![0.0]));
        let err = naturality_residual(&b, &Diffeomorphism::identity(1), &s).unwrap_err();
        assert!(matches!(
            err,
            Error::InChart {
                chart: ChartTag::Base,
                ..
            }
        ));
    }

    #[test]
    fn bad_config_is_refused() {
        let b = FlowBuilder::new(Algorithm::Gd, half_square()).unwrap();
        let cfg = ClassifyConfig {
            tolerance: 1e-2,
            ..ClassifyConfig::default()
        };
        assert!(classify_equivariance(&b, &[Family::Translation], &cfg).is_err());
        let cfg = ClassifyConfig {
            trials: 0,
            ..ClassifyConfig::default()
        };
        assert!(classify_equivariance(&b, &[Family::Translation], &cfg).is_err());
    }
}
