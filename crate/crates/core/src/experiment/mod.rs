//! Batch experiments driven by a JSON config: verdict tables, drift sweeps
//! and trajectories, written as JSON, text and CSV.

mod config;

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

pub use config::{
    has_fatal, validate, Diagnostic, ExperimentConfig, ExperimentKind, Plan, Severity,
};

use crate::error::{Error, Result};
use crate::flows::XI_MIN;
use crate::geometry::{sampling, Diffeomorphism, Family, OptimizerState};
use crate::harness::table::{
    expected_verdict, reproduce_table, standard_problem, TableConfig, TableEntry, TableReport,
};
use crate::harness::{classify_equivariance, ClassifyConfig, FlowBuilder, Objective, Problem};
use crate::integrate::{equivariance_drift, integrate, DriftReport, Scheme};
use crate::models::{Dataset, ParametricModel};
use crate::{diffcalc, flows::Algorithm};

/// Random stream of the initial state of drift and trajectory runs.
const INITIAL_STATE_STREAM: u64 = 1 << 40;

/// Initial positions are drawn from `[-1, 1]^N`.
const INITIAL_BOX: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftRun {
    pub dim: usize,
    pub family: Family,
    pub csv: String,
    #[serde(flatten)]
    pub report: DriftReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRun {
    pub dim: usize,
    pub algorithm: Algorithm,
    pub scheme: Scheme,
    pub h: f64,
    pub steps: usize,
    pub csv: Option<String>,
    pub final_loss: Option<f64>,
    pub final_state: Option<OptimizerState>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "experiment", rename_all = "lowercase")]
pub enum Report {
    Classify { seed: u64, entries: Vec<TableEntry> },
    Table(TableReport),
    Drift { seed: u64, runs: Vec<DriftRun> },
    Trajectory { seed: u64, runs: Vec<TrajectoryRun> },
}

/// Everything a run produces, held in memory until it is written.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Report,
    /// `(file name, contents)`, including `report.json` and `report.txt`.
    pub files: Vec<(String, String)>,
    /// False when a table run has mismatching verdicts.
    pub clean: bool,
}

impl RunOutput {
    /// Write every file into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, contents) in &self.files {
            std::fs::write(dir.join(name), contents)?;
        }
        Ok(())
    }
}

/// Validate and execute `cfg`. Nothing touches the filesystem except
/// reading a dataset file; see [`RunOutput::write`].
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let (plan, diagnostics) = config::resolve(cfg);
    let Some(plan) = plan else {
        let messages: Vec<String> = diagnostics
            .iter()
            .filter(|d| d.severity == Severity::Fatal)
            .map(|d| d.message.clone())
            .collect();
        return Err(Error::Config(messages.join("; ")));
    };
    for d in &diagnostics {
        log::warn!("{}", d.message);
    }
    let mut files = Vec::new();
    let (report, text, clean) = match plan.kind {
        ExperimentKind::Table => {
            let table = reproduce_table(&TableConfig {
                seed: plan.seed,
                trials: cfg.trials,
                states_per_trial: cfg.states_per_trial,
                dims: plan.dims.clone(),
                algorithms: plan.algorithms.clone(),
                families: plan.families.clone(),
                tolerance: cfg.tolerance,
                violation_threshold: cfg.violation_threshold,
                friction: cfg.r,
                adam_eps: cfg.eps,
            })?;
            files.push(("verdicts.csv".to_string(), verdicts_csv(&table.entries)));
            let text = table.to_text();
            let clean = table.is_clean();
            (Report::Table(table), text, clean)
        }
        ExperimentKind::Classify => {
            let entries = run_classify(cfg, &plan)?;
            files.push(("verdicts.csv".to_string(), verdicts_csv(&entries)));
            let text = classify_text(&entries);
            (
                Report::Classify {
                    seed: plan.seed,
                    entries,
                },
                text,
                true,
            )
        }
        ExperimentKind::Drift => {
            let runs = run_drift(cfg, &plan, &mut files)?;
            let text = drift_text(&runs);
            (
                Report::Drift {
                    seed: plan.seed,
                    runs,
                },
                text,
                true,
            )
        }
        ExperimentKind::Trajectory => {
            let runs = run_trajectories(cfg, &plan, &mut files)?;
            let text = trajectory_text(&runs);
            (
                Report::Trajectory {
                    seed: plan.seed,
                    runs,
                },
                text,
                true,
            )
        }
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    files.insert(0, ("report.txt".to_string(), text));
    files.insert(0, ("report.json".to_string(), json));
    Ok(RunOutput {
        report,
        files,
        clean,
    })
}

fn problem_for(cfg: &ExperimentConfig, n: usize) -> Result<Arc<Problem>> {
    let mut problem = match &cfg.model {
        Some(model) => {
            let (i, o) = (model.input_dim(), model.output_dim());
            let data = match cfg.dataset.as_deref().unwrap_or("sine") {
                name @ ("sine" | "linear") => Dataset::builtin(name, i, o, cfg.samples)?,
                path => Dataset::load_csv(Path::new(path), i, o)?,
            };
            Problem::new(model.clone(), data)?
        }
        None => standard_problem(n)?,
    };
    let p = problem.model.output_dim();
    problem.noise_variance = cfg.noise_variance;
    problem.output_metric = DMatrix::identity(p, p) * cfg.output_metric_scale;
    Ok(Arc::new(problem))
}

fn builder(cfg: &ExperimentConfig, a: Algorithm, problem: &Arc<Problem>) -> Result<FlowBuilder> {
    FlowBuilder::new(a, Objective::Supervised(problem.clone()))?
        .with_friction(cfg.r)?
        .with_adam_eps(cfg.eps)
}

fn initial_state(n: usize, order: usize, seed: u64) -> OptimizerState {
    let mut rng = sampling::rng_for(seed, INITIAL_STATE_STREAM);
    let theta = sampling::uniform_vector(n, -INITIAL_BOX, INITIAL_BOX, &mut rng);
    if order == 2 {
        OptimizerState::second_order(XI_MIN, theta, nalgebra::DVector::zeros(n))
    } else {
        OptimizerState::first_order(theta)
    }
}

fn run_classify(cfg: &ExperimentConfig, plan: &Plan) -> Result<Vec<TableEntry>> {
    let classify = ClassifyConfig {
        trials: cfg.trials,
        states_per_trial: cfg.states_per_trial,
        tolerance: cfg.tolerance,
        violation_threshold: cfg.violation_threshold,
        seed: plan.seed,
    };
    let mut entries = Vec::new();
    for &n in &plan.dims {
        let problem = problem_for(cfg, n)?;
        for &a in &plan.algorithms {
            log::info!("classifying {a} at N = {n}");
            for report in
                classify_equivariance(&builder(cfg, a, &problem)?, &plan.families, &classify)?
            {
                let expected = expected_verdict(a, report.family);
                entries.push(TableEntry {
                    matches: report.verdict == expected,
                    expected,
                    report,
                });
            }
        }
    }
    Ok(entries)
}

fn run_drift(
    cfg: &ExperimentConfig,
    plan: &Plan,
    files: &mut Vec<(String, String)>,
) -> Result<Vec<DriftRun>> {
    let mut runs = Vec::new();
    for &n in &plan.dims {
        let problem = problem_for(cfg, n)?;
        for &a in &plan.algorithms {
            let b = builder(cfg, a, &problem)?;
            let s0 = initial_state(n, a.order(), plan.seed);
            for &family in &plan.families {
                let g = sampling::catalog(family, n, plan.seed)?;
                for &scheme in &plan.schemes {
                    log::info!("drift of {a} under {family} with {scheme} at N = {n}");
                    let report = equivariance_drift(&b, &g, &s0, &cfg.h_list, cfg.horizon, scheme)?;
                    let csv = format!("drift_{a}_{family}_{scheme}_n{n}.csv");
                    files.push((csv.clone(), report.to_csv()));
                    runs.push(DriftRun {
                        dim: n,
                        family,
                        csv,
                        report,
                    });
                }
            }
        }
    }
    Ok(runs)
}

fn run_trajectories(
    cfg: &ExperimentConfig,
    plan: &Plan,
    files: &mut Vec<(String, String)>,
) -> Result<Vec<TrajectoryRun>> {
    let mut runs = Vec::new();
    for &n in &plan.dims {
        let problem = problem_for(cfg, n)?;
        for &a in &plan.algorithms {
            let b = builder(cfg, a, &problem)?;
            let identity = Diffeomorphism::identity(n);
            let flow = b.build(&identity)?;
            let loss = b.loss(&identity)?;
            let s0 = initial_state(n, a.order(), plan.seed);
            for &scheme in &plan.schemes {
                for (i, &h) in cfg.h_list.iter().enumerate() {
                    let steps = ((cfg.horizon / h).round() as usize).max(1);
                    let mut run = TrajectoryRun {
                        dim: n,
                        algorithm: a,
                        scheme,
                        h,
                        steps,
                        csv: None,
                        final_loss: None,
                        final_state: None,
                        error: None,
                    };
                    match integrate(&flow, &s0, h, steps, scheme) {
                        Ok(t) => {
                            let name = format!("trajectory_{a}_{scheme}_n{n}_h{i}.csv");
                            files.push((name.clone(), t.to_csv()));
                            run.csv = Some(name);
                            run.final_loss =
                                diffcalc::value(&*loss, t.final_state().position()).ok();
                            run.final_state = Some(t.final_state().clone());
                        }
                        Err(e) => {
                            log::warn!("{a} with {scheme} at h = {h}: {e}");
                            run.error = Some(e.to_string());
                        }
                    }
                    runs.push(run);
                }
            }
        }
    }
    Ok(runs)
}

fn verdicts_csv(entries: &[TableEntry]) -> String {
    let mut out = String::from(
        "algorithm,family,dim,trials,max_residual,mean_residual,verdict,expected,matches\n",
    );
    for e in entries {
        let r = &e.report;
        let _ = writeln!(
            out,
            "{},{},{},{},{:e},{:e},{},{},{}",
            r.algorithm,
            r.family,
            r.dim,
            r.trials,
            r.max_residual,
            r.mean_residual,
            r.verdict.name(),
            e.expected.name(),
            e.matches
        );
    }
    out
}

fn classify_text(entries: &[TableEntry]) -> String {
    let mut out = format!(
        "{:<18}{:<20}{:>4}{:>14}{:>14}  {:<14}{}\n",
        "algorithm", "family", "N", "max", "mean", "verdict", "expected"
    );
    for e in entries {
        let r = &e.report;
        let _ = writeln!(
            out,
            "{:<18}{:<20}{:>4}{:>14.3e}{:>14.3e}  {:<14}{}",
            r.algorithm.name(),
            r.family.name(),
            r.dim,
            r.max_residual,
            r.mean_residual,
            r.verdict.name(),
            e.expected.name()
        );
    }
    out
}

fn drift_text(runs: &[DriftRun]) -> String {
    let mut out = String::new();
    for r in runs {
        let slope = r
            .report
            .slope
            .map_or_else(|| "n/a".to_string(), |s| format!("{s:.3}"));
        let _ = writeln!(
            out,
            "{} under {} ({}, N = {}): slope {slope}",
            r.report.algorithm, r.family, r.report.scheme, r.dim
        );
        for p in &r.report.points {
            match (p.defect, &p.error) {
                (Some(d), _) => {
                    let _ = writeln!(out, "  h = {:<8} defect {d:.6e}", p.h);
                }
                (None, e) => {
                    let _ = writeln!(
                        out,
                        "  h = {:<8} failed: {}",
                        p.h,
                        e.as_deref().unwrap_or("?")
                    );
                }
            }
        }
    }
    out
}

fn trajectory_text(runs: &[TrajectoryRun]) -> String {
    let mut out = String::new();
    for r in runs {
        let tail = match (&r.error, r.final_loss) {
            (Some(e), _) => format!("failed: {e}"),
            (None, Some(l)) => format!("final loss {l:.6e}"),
            (None, None) => "final loss n/a".into(),
        };
        let _ = writeln!(
            out,
            "{:<18}{:<7}N = {:<3} h = {:<8} steps {:<6} {tail}",
            r.algorithm.name(),
            r.scheme.name(),
            r.dim,
            r.h,
            r.steps
        );
    }
    out
}
