//! The algorithm × family verdict matrix against the expected groups.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    classify_equivariance, ClassifyConfig, FlowBuilder, Objective, Problem, ResidualReport,
    Verdict, DEFAULT_TOLERANCE, DEFAULT_VIOLATION_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::flows::{Algorithm, DEFAULT_ADAM_EPS, DEFAULT_FRICTION};
use crate::geometry::Family;
use crate::models::{Dataset, Model, ParametricModel, MAX_PARAM_DIM};

/// Samples in the builtin corpus datasets.
pub const CORPUS_SAMPLES: usize = 12;

/// Verdict the theory predicts for `algorithm` under `family`.
pub fn expected_verdict(algorithm: Algorithm, family: Family) -> Verdict {
    use Family::*;
    let holds = match algorithm {
        Algorithm::Gd | Algorithm::Nesterov => {
            matches!(family, Translation | Euclidean | SignedPermutation)
        }
        Algorithm::Adam => matches!(family, Translation | SignedPermutation),
        Algorithm::Newton => family != Shear,
        Algorithm::NewtonCovariant
        | Algorithm::Ngd
        | Algorithm::Ggn
        | Algorithm::Nngd
        | Algorithm::Agn => true,
    };
    if holds {
        Verdict::Equivariant
    } else {
        Verdict::Violated
    }
}

/// The equivariance group each algorithm is expected to respect.
pub fn group_label(algorithm: Algorithm) -> &'static str {
    match algorithm {
        Algorithm::Gd | Algorithm::Nesterov => "E(N)",
        Algorithm::Adam => "B_N ⋉ T(N)",
        Algorithm::Newton => "Aff(N, R)",
        _ => "Diff(R^N)",
    }
}

/// The default problem in dimension `n`.
///
/// `n = 2, 4, 8` are small tanh networks (1-1-1 without biases, 1-1-1 with
/// both biases, 2-2-1 with a hidden bias); any other `n ≤ 16` is a linear
/// model with `n` inputs.
pub fn standard_problem(n: usize) -> Result<Problem> {
    if n == 0 || n > MAX_PARAM_DIM {
        return Err(Error::Config(format!(
            "dimension cap exceeded: N = {n}, allowed 1..={MAX_PARAM_DIM}"
        )));
    }
    let mlp = |input_dim, hidden, hidden_bias, output_bias| Model::MlpTanh {
        input_dim,
        hidden,
        output_dim: 1,
        hidden_bias,
        output_bias,
    };
    let (model, dataset) = match n {
        2 => (mlp(1, 1, false, false), "sine"),
        4 => (mlp(1, 1, true, true), "sine"),
        8 => (mlp(2, 2, true, false), "sine"),
        _ => (
            Model::Linear {
                input_dim: n,
                output_dim: 1,
            },
            "linear",
        ),
    };
    debug_assert_eq!(model.param_dim(), n);
    let data = Dataset::builtin(dataset, model.input_dim(), 1, CORPUS_SAMPLES)?;
    let mut problem = Problem::new(model, data)?;
    problem.output_metric = DMatrix::from_element(1, 1, 2.0);
    Ok(problem)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableConfig {
    pub seed: u64,
    pub trials: usize,
    pub states_per_trial: usize,
    pub dims: Vec<usize>,
    pub algorithms: Vec<Algorithm>,
    pub families: Vec<Family>,
    pub tolerance: f64,
    pub violation_threshold: f64,
    pub friction: f64,
    pub adam_eps: f64,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            seed: 0,
            trials: 32,
            states_per_trial: 2,
            dims: vec![2, 4, 8],
            algorithms: Algorithm::ALL.to_vec(),
            families: Family::ALL.to_vec(),
            tolerance: DEFAULT_TOLERANCE,
            violation_threshold: DEFAULT_VIOLATION_THRESHOLD,
            friction: DEFAULT_FRICTION,
            adam_eps: DEFAULT_ADAM_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    #[serde(flatten)]
    pub report: ResidualReport,
    pub expected: Verdict,
    pub matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub algorithm: Algorithm,
    pub expected_group: String,
    pub observed_equivariant: Vec<Family>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableReport {
    pub config: TableConfig,
    pub entries: Vec<TableEntry>,
    pub groups: Vec<GroupRow>,
    pub mismatches: Vec<String>,
}

impl TableReport {
    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty()
    }

    /// Aligned-column summary, one verdict matrix per dimension.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let width = 19;
        for &n in &self.config.dims {
            let _ = writeln!(out, "N = {n}");
            let _ = write!(out, "{:<18}", "algorithm");
            for f in &self.config.families {
                let _ = write!(out, "{:>width$}", f.name());
            }
            let _ = writeln!(out);
            for &a in &self.config.algorithms {
                let _ = write!(out, "{:<18}", a.name());
                for &f in &self.config.families {
                    let cell = self
                        .entries
                        .iter()
                        .find(|e| {
                            e.report.algorithm == a && e.report.family == f && e.report.dim == n
                        })
                        .map(|e| {
                            let mark = if e.matches { ' ' } else { '!' };
                            format!(
                                "{} {:.1e}{mark}",
                                short(e.report.verdict),
                                e.report.max_residual
                            )
                        })
                        .unwrap_or_else(|| "-".into());
                    let _ = write!(out, "{cell:>width$}");
                }
                let _ = writeln!(out);
            }
            let _ = writeln!(out);
        }
        let _ = writeln!(out, "{:<18}{:<14}observed (all N)", "algorithm", "expected");
        for g in &self.groups {
            let observed: Vec<&str> = g.observed_equivariant.iter().map(|f| f.name()).collect();
            let _ = writeln!(
                out,
                "{:<18}{:<14}{}",
                g.algorithm.name(),
                g.expected_group,
                observed.join(", ")
            );
        }
        let _ = writeln!(out);
        if self.mismatches.is_empty() {
            let _ = writeln!(out, "mismatches: none");
        } else {
            let _ = writeln!(out, "mismatches: {}", self.mismatches.len());
            for m in &self.mismatches {
                let _ = writeln!(out, "  {m}");
            }
        }
        out
    }
}

fn short(v: Verdict) -> &'static str {
    match v {
        Verdict::Equivariant => "eq",
        Verdict::Violated => "viol",
        Verdict::Indeterminate => "??",
    }
}

/// Classify every configured algorithm on the standard corpus and compare
/// with the expected verdicts.
pub fn reproduce_table(cfg: &TableConfig) -> Result<TableReport> {
    let classify = ClassifyConfig {
        trials: cfg.trials,
        states_per_trial: cfg.states_per_trial,
        tolerance: cfg.tolerance,
        violation_threshold: cfg.violation_threshold,
        seed: cfg.seed,
    };
    let mut entries = Vec::new();
    if !cfg.families.is_empty() {
        for &n in &cfg.dims {
            let problem = Arc::new(standard_problem(n)?);
            for &a in &cfg.algorithms {
                let b = FlowBuilder::new(a, Objective::Supervised(problem.clone()))?
                    .with_friction(cfg.friction)?
                    .with_adam_eps(cfg.adam_eps)?;
                for report in classify_equivariance(&b, &cfg.families, &classify)? {
                    let expected = expected_verdict(a, report.family);
                    entries.push(TableEntry {
                        matches: report.verdict == expected,
                        expected,
                        report,
                    });
                }
            }
        }
    }
    let mismatches = entries
        .iter()
        .filter(|e| !e.matches)
        .map(|e| {
            format!(
                "{} × {} (N = {}): expected {}, got {} (max residual {:e})",
                e.report.algorithm,
                e.report.family,
                e.report.dim,
                e.expected,
                e.report.verdict,
                e.report.max_residual
            )
        })
        .collect();
    let groups = if entries.is_empty() {
        Vec::new()
    } else {
        cfg.algorithms
            .iter()
            .map(|&a| GroupRow {
                algorithm: a,
                expected_group: group_label(a).to_string(),
                observed_equivariant: cfg
                    .families
                    .iter()
                    .copied()
                    .filter(|&f| {
                        entries
                            .iter()
                            .filter(|e| e.report.algorithm == a && e.report.family == f)
                            .all(|e| e.report.verdict == Verdict::Equivariant)
                    })
                    .collect(),
            })
            .collect()
    };
    Ok(TableReport {
        config: cfg.clone(),
        entries,
        groups,
        mismatches,
    })
}
