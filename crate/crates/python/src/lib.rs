//! Python bindings for `natflow-core`.
//!
//! Vectors and matrices cross the boundary as lists, reports as plain
//! dicts (their JSON form).

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

use natflow_core::diffcalc;
use natflow_core::experiment::{self, ExperimentConfig};
use natflow_core::flows::{Algorithm, XI_MIN};
use natflow_core::geometry::{
    sampling, Diffeomorphism as CoreDiffeo, Family, OptimizerState, ShearProfile,
};
use natflow_core::harness::{
    self, ClassifyConfig, FlowBuilder as CoreBuilder, Objective, Problem as CoreProblem,
    TableConfig,
};
use natflow_core::integrate::{self, Scheme};
use natflow_core::models::{Dataset, Model, ParametricModel, QuadraticLoss};

create_exception!(natflow, NatflowError, PyException);

fn err(e: natflow_core::Error) -> PyErr {
    NatflowError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr<Err = natflow_core::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| NatflowError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(NatflowError::new_err("matrix rows have different lengths"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn families(names: Option<Vec<String>>) -> PyResult<Vec<Family>> {
    match names {
        None => Ok(Family::ALL.to_vec()),
        Some(names) => names.iter().map(|n| parse(n)).collect(),
    }
}

/// A reparameterization `θ̄ = g(θ)`.
#[pyclass(module = "natflow", skip_from_py_object)]
#[derive(Clone)]
struct Diffeomorphism(CoreDiffeo);

#[pymethods]
impl Diffeomorphism {
    #[staticmethod]
    fn identity(dim: usize) -> Self {
        Diffeomorphism(CoreDiffeo::identity(dim))
    }

    #[staticmethod]
    fn translation(offset: Vec<f64>) -> Self {
        Diffeomorphism(CoreDiffeo::translation(DVector::from_vec(offset)))
    }

    #[staticmethod]
    fn euclidean(q: Vec<Vec<f64>>, offset: Vec<f64>) -> PyResult<Self> {
        CoreDiffeo::euclidean(matrix(q)?, DVector::from_vec(offset))
            .map(Diffeomorphism)
            .map_err(err)
    }

    #[staticmethod]
    fn signed_permutation(perm: Vec<usize>, signs: Vec<f64>, offset: Vec<f64>) -> PyResult<Self> {
        CoreDiffeo::signed_permutation(&perm, &signs, DVector::from_vec(offset))
            .map(Diffeomorphism)
            .map_err(err)
    }

    #[staticmethod]
    fn affine(a: Vec<Vec<f64>>, offset: Vec<f64>) -> PyResult<Self> {
        CoreDiffeo::affine(matrix(a)?, DVector::from_vec(offset))
            .map(Diffeomorphism)
            .map_err(err)
    }

    #[staticmethod]
    fn scaling(factor: f64, dim: usize) -> PyResult<Self> {
        CoreDiffeo::scaling(factor, dim)
            .map(Diffeomorphism)
            .map_err(err)
    }

    /// `profile` is `"sin"` or `"tanh"`.
    #[staticmethod]
    #[pyo3(signature = (beta, weights, profile = "tanh"))]
    fn shear(beta: f64, weights: Vec<Vec<f64>>, profile: &str) -> PyResult<Self> {
        let profile = match profile {
            "sin" => ShearProfile::Sin,
            "tanh" => ShearProfile::Tanh,
            other => {
                return Err(NatflowError::new_err(format!(
                    "unknown shear profile '{other}'"
                )))
            }
        };
        CoreDiffeo::shear(beta, matrix(weights)?, profile)
            .map(Diffeomorphism)
            .map_err(err)
    }

    /// The seeded catalog member of `family` in dimension `dim`.
    #[staticmethod]
    #[pyo3(signature = (family, dim, seed = 0))]
    fn catalog(family: &str, dim: usize, seed: u64) -> PyResult<Self> {
        sampling::catalog(parse(family)?, dim, seed)
            .map(Diffeomorphism)
            .map_err(err)
    }

    /// `other ∘ self`.
    fn then(&self, other: &Diffeomorphism) -> Self {
        Diffeomorphism(self.0.clone().then(other.0.clone()))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn family(&self) -> Option<&'static str> {
        self.0.family().map(Family::name)
    }

    fn apply(&self, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(theta.len())?;
        Ok(self.0.apply(&DVector::from_vec(theta)).as_slice().to_vec())
    }

    fn apply_inverse(&self, theta_bar: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(theta_bar.len())?;
        Ok(self
            .0
            .apply_inverse(&DVector::from_vec(theta_bar))
            .as_slice()
            .to_vec())
    }

    fn jacobian(&self, theta: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        self.check(theta.len())?;
        diffcalc::jacobian(&self.0, &DVector::from_vec(theta))
            .map(|j| rows(&j))
            .map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Diffeomorphism(family={}, dim={})",
            self.0.family().map_or("composite", Family::name),
            self.0.dim()
        )
    }
}

impl Diffeomorphism {
    fn check(&self, n: usize) -> PyResult<()> {
        if n == self.0.dim() {
            Ok(())
        } else {
            Err(NatflowError::new_err(format!(
                "expected a vector of length {}, got {n}",
                self.0.dim()
            )))
        }
    }
}

/// Model, data and output metrics of a supervised objective.
#[pyclass(module = "natflow", skip_from_py_object)]
#[derive(Clone)]
struct Problem(Arc<CoreProblem>);

#[pymethods]
impl Problem {
    /// `model` is a JSON object such as `{"kind": "linear", "input_dim": 2}`;
    /// `dataset` is `"sine"`, `"linear"` or a CSV path.
    #[new]
    #[pyo3(signature = (model, dataset = "sine", samples = 12, noise_variance = 1.0, output_metric_scale = 1.0))]
    fn new(
        model: &str,
        dataset: &str,
        samples: usize,
        noise_variance: f64,
        output_metric_scale: f64,
    ) -> PyResult<Self> {
        let model: Model = serde_json::from_str(model)
            .map_err(|e| NatflowError::new_err(format!("bad model: {e}")))?;
        let (i, o) = (model.input_dim(), model.output_dim());
        let data = match dataset {
            "sine" | "linear" => Dataset::builtin(dataset, i, o, samples),
            path => Dataset::load_csv(Path::new(path), i, o),
        }
        .map_err(err)?;
        let mut problem = CoreProblem::new(model, data).map_err(err)?;
        problem.noise_variance = noise_variance;
        problem.output_metric = DMatrix::identity(o, o) * output_metric_scale;
        Ok(Problem(Arc::new(problem)))
    }

    /// The corpus problem with `n` parameters.
    #[staticmethod]
    fn standard(n: usize) -> PyResult<Self> {
        harness::standard_problem(n)
            .map(|p| Problem(Arc::new(p)))
            .map_err(err)
    }

    #[getter]
    fn param_dim(&self) -> usize {
        self.0.model.param_dim()
    }

    #[getter]
    fn model<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.model)
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(model={}, samples={}, param_dim={})",
            self.0.model.kind(),
            self.0.data.len(),
            self.0.model.param_dim()
        )
    }
}

/// One algorithm on one objective, buildable in any chart.
#[pyclass(module = "natflow", skip_from_py_object)]
#[derive(Clone)]
struct FlowBuilder(CoreBuilder);

#[pymethods]
impl FlowBuilder {
    #[new]
    #[pyo3(signature = (algorithm, problem, friction = None, adam_eps = None))]
    fn new(
        algorithm: &str,
        problem: &Problem,
        friction: Option<f64>,
        adam_eps: Option<f64>,
    ) -> PyResult<Self> {
        let b = CoreBuilder::new(parse(algorithm)?, Objective::Supervised(problem.0.clone()))
            .map_err(err)?;
        Self::tuned(b, friction, adam_eps)
    }

    /// `L(θ) = ½ (θ − c)ᵀ A (θ − c)`; only for algorithms that need no model.
    #[staticmethod]
    #[pyo3(signature = (algorithm, a, center = None, friction = None, adam_eps = None))]
    fn quadratic(
        algorithm: &str,
        a: Vec<Vec<f64>>,
        center: Option<Vec<f64>>,
        friction: Option<f64>,
        adam_eps: Option<f64>,
    ) -> PyResult<Self> {
        let a = matrix(a)?;
        let center = center.map_or_else(|| DVector::zeros(a.nrows()), DVector::from_vec);
        let loss = QuadraticLoss::new(a, center).map_err(err)?;
        let b =
            CoreBuilder::new(parse(algorithm)?, Objective::Loss(Arc::new(loss))).map_err(err)?;
        Self::tuned(b, friction, adam_eps)
    }

    #[getter]
    fn algorithm(&self) -> &'static str {
        self.0.algorithm().name()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn order(&self) -> usize {
        self.0.order()
    }

    /// Loss at `theta`, in the chart of `chart` if given.
    #[pyo3(signature = (theta, chart = None))]
    fn loss(&self, theta: Vec<f64>, chart: Option<&Diffeomorphism>) -> PyResult<f64> {
        let chart = self.chart(chart);
        let l = self.0.loss(&chart).map_err(err)?;
        if theta.len() != l.dim() {
            return Err(NatflowError::new_err(format!(
                "expected a vector of length {}, got {}",
                l.dim(),
                theta.len()
            )));
        }
        Ok(l.eval_f64(&theta))
    }

    /// Flattened state velocity `(θ', u')` at the given state.
    #[pyo3(signature = (theta, velocity = None, time = XI_MIN, chart = None))]
    fn eval(
        &self,
        theta: Vec<f64>,
        velocity: Option<Vec<f64>>,
        time: f64,
        chart: Option<&Diffeomorphism>,
    ) -> PyResult<Vec<f64>> {
        let s = self.state(theta, velocity, time)?;
        let flow = self.0.build(&self.chart(chart)).map_err(err)?;
        let v = flow.eval(&s).map_err(err)?;
        Ok(v.flatten().as_slice().to_vec())
    }

    /// Naturality residual of the flow under `g` at one state.
    #[pyo3(signature = (g, theta, velocity = None, time = 1.0))]
    fn residual(
        &self,
        g: &Diffeomorphism,
        theta: Vec<f64>,
        velocity: Option<Vec<f64>>,
        time: f64,
    ) -> PyResult<f64> {
        let s = self.state(theta, velocity, time)?;
        harness::naturality_residual(&self.0, &g.0, &s).map_err(err)
    }

    /// Monte-Carlo equivariance verdict per family.
    #[pyo3(signature = (families = None, seed = 0, trials = 32, states_per_trial = 2,
                        tolerance = harness::DEFAULT_TOLERANCE,
                        violation_threshold = harness::DEFAULT_VIOLATION_THRESHOLD))]
    #[allow(clippy::too_many_arguments)]
    fn classify<'py>(
        &self,
        py: Python<'py>,
        families: Option<Vec<String>>,
        seed: u64,
        trials: usize,
        states_per_trial: usize,
        tolerance: f64,
        violation_threshold: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let families = self::families(families)?;
        let cfg = ClassifyConfig {
            trials,
            states_per_trial,
            tolerance,
            violation_threshold,
            seed,
        };
        let b = &self.0;
        let reports = py
            .detach(|| harness::classify_equivariance(b, &families, &cfg))
            .map_err(err)?;
        to_py(py, &reports)
    }

    /// Fixed-step trajectory as rows `[ξ, θ…, u…]`.
    #[pyo3(signature = (theta, h, steps, scheme = "rk4", velocity = None, time = XI_MIN, chart = None))]
    #[allow(clippy::too_many_arguments)]
    fn integrate(
        &self,
        py: Python<'_>,
        theta: Vec<f64>,
        h: f64,
        steps: usize,
        scheme: &str,
        velocity: Option<Vec<f64>>,
        time: f64,
        chart: Option<&Diffeomorphism>,
    ) -> PyResult<Vec<Vec<f64>>> {
        let scheme: Scheme = parse(scheme)?;
        let s0 = self.state(theta, velocity, time)?;
        let flow = self.0.build(&self.chart(chart)).map_err(err)?;
        let traj = py
            .detach(|| integrate::integrate(&flow, &s0, h, steps, scheme))
            .map_err(err)?;
        Ok(traj
            .states
            .iter()
            .map(|s| {
                std::iter::once(s.time)
                    .chain(s.flatten().iter().copied())
                    .collect()
            })
            .collect())
    }

    /// Gap between pushed-forward base trajectories and barred trajectories
    /// at a fixed horizon, for each step size.
    #[pyo3(signature = (g, theta, h_list = None, horizon = integrate::DEFAULT_HORIZON,
                        scheme = "euler", velocity = None, time = XI_MIN))]
    #[allow(clippy::too_many_arguments)]
    fn drift<'py>(
        &self,
        py: Python<'py>,
        g: &Diffeomorphism,
        theta: Vec<f64>,
        h_list: Option<Vec<f64>>,
        horizon: f64,
        scheme: &str,
        velocity: Option<Vec<f64>>,
        time: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let scheme: Scheme = parse(scheme)?;
        let s0 = self.state(theta, velocity, time)?;
        let h_list = h_list.unwrap_or_else(|| integrate::DEFAULT_H_LIST.to_vec());
        let (b, g) = (&self.0, &g.0);
        let report = py
            .detach(|| integrate::equivariance_drift(b, g, &s0, &h_list, horizon, scheme))
            .map_err(err)?;
        to_py(py, &report)
    }

    fn __repr__(&self) -> String {
        format!(
            "FlowBuilder(algorithm={}, dim={})",
            self.0.algorithm(),
            self.0.dim()
        )
    }
}

impl FlowBuilder {
    fn tuned(mut b: CoreBuilder, friction: Option<f64>, adam_eps: Option<f64>) -> PyResult<Self> {
        if let Some(r) = friction {
            b = b.with_friction(r).map_err(err)?;
        }
        if let Some(eps) = adam_eps {
            b = b.with_adam_eps(eps).map_err(err)?;
        }
        Ok(FlowBuilder(b))
    }

    fn chart(&self, chart: Option<&Diffeomorphism>) -> CoreDiffeo {
        chart.map_or_else(|| CoreDiffeo::identity(self.0.dim()), |g| g.0.clone())
    }

    fn state(
        &self,
        theta: Vec<f64>,
        velocity: Option<Vec<f64>>,
        time: f64,
    ) -> PyResult<OptimizerState> {
        let n = theta.len();
        let theta = DVector::from_vec(theta);
        let s = match (self.0.order(), velocity) {
            (1, None) => OptimizerState::first_order(theta),
            (1, Some(_)) => {
                return Err(NatflowError::new_err(format!(
                    "{} is a first-order flow and takes no velocity",
                    self.0.algorithm()
                )))
            }
            (_, u) => {
                let u = u.map_or_else(|| DVector::zeros(n), DVector::from_vec);
                OptimizerState::second_order(time, theta, u)
            }
        };
        if s.dim() != self.0.dim() {
            return Err(NatflowError::new_err(format!(
                "expected a vector of length {}, got {}",
                self.0.dim(),
                s.dim()
            )));
        }
        s.validate().map_err(err)?;
        Ok(s)
    }
}

/// Names of every algorithm, in table order.
#[pyfunction]
fn algorithms() -> Vec<&'static str> {
    Algorithm::ALL.iter().map(|a| a.name()).collect()
}

/// Names of every reparameterization family.
#[pyfunction]
#[pyo3(name = "families")]
fn families_list() -> Vec<&'static str> {
    Family::ALL.iter().map(|f| f.name()).collect()
}

/// The verdict an algorithm is expected to get for a family.
#[pyfunction]
fn expected_verdict(algorithm: &str, family: &str) -> PyResult<&'static str> {
    Ok(harness::expected_verdict(parse(algorithm)?, parse(family)?).name())
}

/// Full verdict table over the corpus problems; returns the report dict
/// with an extra `text` rendering.
#[pyfunction]
#[pyo3(signature = (seed = 0, trials = 32, dims = None, algorithms = None, families = None))]
fn reproduce_table<'py>(
    py: Python<'py>,
    seed: u64,
    trials: usize,
    dims: Option<Vec<usize>>,
    algorithms: Option<Vec<String>>,
    families: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = TableConfig {
        seed,
        trials,
        ..TableConfig::default()
    };
    if let Some(dims) = dims {
        cfg.dims = dims;
    }
    if let Some(names) = algorithms {
        cfg.algorithms = names.iter().map(|n| parse(n)).collect::<PyResult<_>>()?;
    }
    cfg.families = self::families(families)?;
    let report = py.detach(|| harness::reproduce_table(&cfg)).map_err(err)?;
    let out = to_py(py, &report)?;
    out.set_item("text", report.to_text())?;
    out.set_item("clean", report.is_clean())?;
    Ok(out)
}

/// Diagnostics for a JSON experiment config, as `(severity, message)`.
#[pyfunction]
fn validate_config(config: &str) -> PyResult<Vec<(String, String)>> {
    let cfg = ExperimentConfig::from_json(config).map_err(err)?;
    Ok(experiment::validate(&cfg)
        .into_iter()
        .map(|d| {
            let text = d.to_string();
            let (severity, message) = text.split_once(": ").unwrap_or(("error", &text));
            (severity.to_string(), message.to_string())
        })
        .collect())
}

/// Run a JSON experiment config. Returns `{"report", "files", "clean"}`;
/// files are written only when `out` is given.
#[pyfunction]
#[pyo3(signature = (config, out = None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config: &str,
    out: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ExperimentConfig::from_json(config).map_err(err)?;
    let diagnostics = experiment::validate(&cfg);
    if experiment::has_fatal(&diagnostics) {
        let text: Vec<String> = diagnostics.iter().map(ToString::to_string).collect();
        return Err(NatflowError::new_err(text.join("\n")));
    }
    let result = py.detach(|| experiment::run(&cfg)).map_err(err)?;
    if let Some(dir) = out {
        result.write(Path::new(dir)).map_err(err)?;
    }
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("report", to_py(py, &result.report)?)?;
    dict.set_item(
        "files",
        result
            .files
            .iter()
            .cloned()
            .collect::<std::collections::BTreeMap<_, _>>(),
    )?;
    dict.set_item("clean", result.clean)?;
    Ok(dict.into_any())
}

#[pymodule]
fn natflow(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NatflowError", m.py().get_type::<NatflowError>())?;
    m.add("XI_MIN", XI_MIN)?;
    m.add("DEFAULT_TOLERANCE", harness::DEFAULT_TOLERANCE)?;
    m.add(
        "DEFAULT_VIOLATION_THRESHOLD",
        harness::DEFAULT_VIOLATION_THRESHOLD,
    )?;
    m.add_class::<Diffeomorphism>()?;
    m.add_class::<Problem>()?;
    m.add_class::<FlowBuilder>()?;
    m.add_function(wrap_pyfunction!(algorithms, m)?)?;
    m.add_function(wrap_pyfunction!(families_list, m)?)?;
    m.add_function(wrap_pyfunction!(expected_verdict, m)?)?;
    m.add_function(wrap_pyfunction!(reproduce_table, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
