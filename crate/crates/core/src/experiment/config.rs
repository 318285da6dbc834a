use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{Algorithm, DEFAULT_ADAM_EPS, DEFAULT_FRICTION};
use crate::geometry::Family;
use crate::harness::table::CORPUS_SAMPLES;
use crate::harness::{DEFAULT_TOLERANCE, DEFAULT_VIOLATION_THRESHOLD};
use crate::integrate::{Scheme, DEFAULT_HORIZON, DEFAULT_H_LIST};
use crate::models::{Model, ParametricModel, MAX_PARAM_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Classify,
    Table,
    Drift,
    Trajectory,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [
        ExperimentKind::Classify,
        ExperimentKind::Table,
        ExperimentKind::Drift,
        ExperimentKind::Trajectory,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Classify => "classify",
            ExperimentKind::Table => "table",
            ExperimentKind::Drift => "drift",
            ExperimentKind::Trajectory => "trajectory",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }

    /// Problem dimensions used when neither `dims` nor `model` is given.
    fn default_dims(self) -> Vec<usize> {
        match self {
            ExperimentKind::Classify | ExperimentKind::Table => vec![2, 4, 8],
            ExperimentKind::Drift | ExperimentKind::Trajectory => vec![3],
        }
    }
}

/// One experiment, as read from a JSON file.
///
/// Names are kept as strings so that [`validate`] can report every unknown
/// one instead of stopping at the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    /// Required; there is no default seed.
    pub seed: Option<u64>,
    pub algorithms: Vec<String>,
    pub families: Vec<String>,
    /// Standard-corpus dimensions, ignored when `model` is set.
    pub dims: Option<Vec<usize>>,
    pub model: Option<Model>,
    /// Builtin dataset name or path to a CSV file, used with `model`.
    pub dataset: Option<String>,
    pub samples: usize,
    pub noise_variance: f64,
    /// `M = scale · I` in the GGN.
    pub output_metric_scale: f64,
    pub trials: usize,
    pub states_per_trial: usize,
    pub tolerance: f64,
    pub violation_threshold: f64,
    pub h_list: Vec<f64>,
    pub horizon: f64,
    pub schemes: Vec<String>,
    /// Friction of the accelerated flows.
    pub r: f64,
    /// Adam's ε.
    pub eps: f64,
    pub out: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: "table".into(),
            seed: None,
            algorithms: Algorithm::ALL
                .iter()
                .map(|a| a.name().to_string())
                .collect(),
            families: Family::ALL.iter().map(|f| f.name().to_string()).collect(),
            dims: None,
            model: None,
            dataset: None,
            samples: CORPUS_SAMPLES,
            noise_variance: 1.0,
            output_metric_scale: 2.0,
            trials: 32,
            states_per_trial: 2,
            tolerance: DEFAULT_TOLERANCE,
            violation_threshold: DEFAULT_VIOLATION_THRESHOLD,
            h_list: DEFAULT_H_LIST.to_vec(),
            horizon: DEFAULT_HORIZON,
            schemes: Scheme::ALL.iter().map(|s| s.name().to_string()).collect(),
            r: DEFAULT_FRICTION,
            eps: DEFAULT_ADAM_EPS,
            out: "out".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("malformed config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Fatal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Warning => "warning",
            Severity::Fatal => "error",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

pub fn has_fatal(diagnostics: &[Diagnostic]) -> bool {
    diagnostics.iter().any(|d| d.severity == Severity::Fatal)
}

/// Names resolved and numbers checked; what [`super::run`] executes.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub algorithms: Vec<Algorithm>,
    pub families: Vec<Family>,
    pub schemes: Vec<Scheme>,
    pub dims: Vec<usize>,
}

/// Check a config without running it. Nothing is written; a dataset path
/// is only checked for existence.
pub fn validate(cfg: &ExperimentConfig) -> Vec<Diagnostic> {
    resolve(cfg).1
}

pub(crate) fn resolve(cfg: &ExperimentConfig) -> (Option<Plan>, Vec<Diagnostic>) {
    let mut out = Vec::new();
    let mut fatal = |message: String| {
        out.push(Diagnostic {
            severity: Severity::Fatal,
            message,
        })
    };
    let kind = ExperimentKind::parse(&cfg.experiment)
        .map_err(|e| fatal(e.to_string()))
        .ok();
    if cfg.seed.is_none() {
        fatal("seed is mandatory".into());
    }
    let algorithms = parse_all::<Algorithm>(&cfg.algorithms, &mut fatal);
    let families = parse_all::<Family>(&cfg.families, &mut fatal);
    let schemes = parse_all::<Scheme>(&cfg.schemes, &mut fatal);
    if cfg.algorithms.is_empty() {
        fatal("no algorithms given".into());
    }

    let dims = match (&cfg.model, &cfg.dims) {
        (Some(m), _) => vec![m.param_dim()],
        (None, Some(d)) => d.clone(),
        (None, None) => kind.map(|k| k.default_dims()).unwrap_or_default(),
    };
    for &n in &dims {
        if n == 0 || n > MAX_PARAM_DIM {
            fatal(format!(
                "dimension cap exceeded: N = {n}, allowed 1..={MAX_PARAM_DIM}"
            ));
        }
    }
    if dims.is_empty() {
        fatal("no problem dimensions given".into());
    }

    if !(cfg.tolerance > 0.0 && cfg.tolerance.is_finite()) {
        fatal(format!("tolerance must be positive, got {}", cfg.tolerance));
    }
    if cfg.tolerance.partial_cmp(&cfg.violation_threshold) != Some(std::cmp::Ordering::Less) {
        fatal(format!(
            "tolerance {} must be below the violation threshold {}",
            cfg.tolerance, cfg.violation_threshold
        ));
    }
    if cfg.trials == 0 || cfg.states_per_trial == 0 {
        fatal("trials and states_per_trial must be at least 1".into());
    }
    if let Some(h) = cfg.h_list.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
        fatal(format!("step sizes must be positive, got {h}"));
    }
    if !(cfg.horizon > 0.0 && cfg.horizon.is_finite()) {
        fatal(format!("horizon must be positive, got {}", cfg.horizon));
    }
    if !(cfg.r > 0.0 && cfg.r.is_finite()) {
        fatal(format!("friction r must be positive, got {}", cfg.r));
    }
    if !(cfg.eps > 0.0 && cfg.eps.is_finite()) {
        fatal(format!("eps must be positive, got {}", cfg.eps));
    }
    if !(cfg.noise_variance > 0.0 && cfg.noise_variance.is_finite()) {
        fatal(format!(
            "noise_variance must be positive, got {}",
            cfg.noise_variance
        ));
    }
    if !(cfg.output_metric_scale > 0.0 && cfg.output_metric_scale.is_finite()) {
        fatal(format!(
            "output_metric_scale must be positive, got {}",
            cfg.output_metric_scale
        ));
    }
    if cfg.samples == 0 {
        fatal("samples must be at least 1".into());
    }
    if let Some(d) = &cfg.dataset {
        if !matches!(d.as_str(), "sine" | "linear") && !Path::new(d).is_file() {
            fatal(format!(
                "dataset '{d}' is neither a builtin name nor a readable file"
            ));
        }
    }
    if let Some(kind) = kind {
        if matches!(kind, ExperimentKind::Drift | ExperimentKind::Trajectory) {
            if cfg.h_list.is_empty() {
                fatal("h_list is empty".into());
            }
            if cfg.schemes.is_empty() {
                fatal("no schemes given".into());
            }
        }
        if matches!(kind, ExperimentKind::Drift | ExperimentKind::Classify)
            && cfg.families.is_empty()
        {
            fatal("no families given".into());
        }
    }

    let mut warn = |message: String| {
        out.push(Diagnostic {
            severity: Severity::Warning,
            message,
        })
    };
    if cfg.model.is_some() && cfg.dims.is_some() {
        warn("dims is ignored when a model is given".into());
    }
    if cfg.model.is_none() && cfg.dataset.is_some() {
        warn("dataset is ignored without a model".into());
    }
    if kind == Some(ExperimentKind::Table) && cfg.model.is_some() {
        warn("table always runs the standard corpus; model is ignored".into());
    }
    if cfg.violation_threshold / cfg.tolerance < 10.0 && cfg.tolerance < cfg.violation_threshold {
        warn(format!(
            "tolerance {} and violation threshold {} leave a narrow gap",
            cfg.tolerance, cfg.violation_threshold
        ));
    }

    let plan = match (kind, cfg.seed, algorithms, families, schemes) {
        (Some(kind), Some(seed), Some(algorithms), Some(families), Some(schemes))
            if !has_fatal(&out) =>
        {
            Some(Plan {
                kind,
                seed,
                algorithms,
                families,
                schemes,
                dims: if kind == ExperimentKind::Table {
                    cfg.dims.clone().unwrap_or_else(|| kind.default_dims())
                } else {
                    dims
                },
            })
        }
        _ => None,
    };
    (plan, out)
}

fn parse_all<T: std::str::FromStr<Err = Error>>(
    names: &[String],
    fatal: &mut impl FnMut(String),
) -> Option<Vec<T>> {
    let mut ok = true;
    let parsed = names
        .iter()
        .filter_map(|n| match n.parse::<T>() {
            Ok(v) => Some(v),
            Err(e) => {
                ok = false;
                fatal(match e {
                    Error::Config(m) => m,
                    other => other.to_string(),
                });
                None
            }
        })
        .collect();
    ok.then_some(parsed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded() -> ExperimentConfig {
        ExperimentConfig {
            seed: Some(0),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn default_config_is_clean() {
        assert!(validate(&seeded()).is_empty());
    }

    #[test]
    fn missing_seed_is_fatal() {
        let d = validate(&ExperimentConfig::default());
        assert!(has_fatal(&d));
        assert!(d.iter().any(|d| d.message.contains("seed")));
    }

    #[test]
    fn dimension_cap() {
        let cfg = ExperimentConfig {
            dims: Some(vec![32]),
            ..seeded()
        };
        let d = validate(&cfg);
        assert!(
            d.iter()
                .any(|d| d.severity == Severity::Fatal
                    && d.message.contains("dimension cap exceeded"))
        );
    }

    #[test]
    fn tolerance_above_threshold() {
        let cfg = ExperimentConfig {
            tolerance: 1e-2,
            ..seeded()
        };
        let d = validate(&cfg);
        assert!(d
            .iter()
            .any(|d| d.severity == Severity::Fatal && d.message.contains("violation threshold")));
    }

    #[test]
    fn unknown_names_are_named() {
        let cfg = ExperimentConfig {
            algorithms: vec!["gd".into(), "sgd-momentum".into()],
            families: vec!["conformal".into()],
            ..seeded()
        };
        let d = validate(&cfg);
        assert!(d.iter().any(|d| d.message.contains("'sgd-momentum'")));
        assert!(d.iter().any(|d| d.message.contains("'conformal'")));
    }

    #[test]
    fn parses_partial_json() {
        let cfg = ExperimentConfig::from_json(r#"{"experiment": "drift", "seed": 4}"#).unwrap();
        assert_eq!(cfg.seed, Some(4));
        let (plan, d) = resolve(&cfg);
        assert!(d.is_empty());
        assert_eq!(plan.unwrap().dims, vec![3]);
        assert!(ExperimentConfig::from_json(r#"{"seed": 1, "trails": 3}"#).is_err());
        assert!(ExperimentConfig::from_json("{").is_err());
    }
}
