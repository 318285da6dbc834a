//! Fixed-step integration of flow fields and the drift of naturality under
//! discretization.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{Algorithm, FlowField};
use crate::geometry::{pushforward_state, Diffeomorphism, OptimizerState, StateVelocity};
use crate::harness::FlowBuilder;

/// Default integration horizon of the drift study.
pub const DEFAULT_HORIZON: f64 = 1.0;

/// Step sizes of the default drift sweep.
pub const DEFAULT_H_LIST: [f64; 5] = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Rk4,
}

impl Scheme {
    pub const ALL: [Scheme; 2] = [Scheme::Euler, Scheme::Rk4];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Euler => "euler",
            Scheme::Rk4 => "rk4",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub scheme: Scheme,
    pub h: f64,
    /// Initial state followed by one state per step; each carries its `ξ`.
    pub states: Vec<OptimizerState>,
}

impl Trajectory {
    pub fn final_state(&self) -> &OptimizerState {
        self.states
            .last()
            .expect("trajectory holds the initial state")
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    /// Columns `xi, theta_1..theta_N[, u_1..u_N]`, one row per state.
    pub fn to_csv(&self) -> String {
        let first = &self.states[0];
        let n = first.dim();
        let mut out = String::from("xi");
        for i in 1..=n {
            let _ = write!(out, ",theta_{i}");
        }
        if first.order() == 2 {
            for i in 1..=n {
                let _ = write!(out, ",u_{i}");
            }
        }
        out.push('\n');
        for s in &self.states {
            let _ = write!(out, "{}", s.time);
            for v in s.flatten().iter() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// One explicit step of size `h`.
pub fn step(
    flow: &FlowField,
    s: &OptimizerState,
    h: f64,
    scheme: Scheme,
) -> Result<OptimizerState> {
    match scheme {
        Scheme::Euler => Ok(s.advanced(&flow.eval(s)?, h)),
        Scheme::Rk4 => {
            let k1 = flow.eval(s)?;
            let k2 = flow.eval(&s.advanced(&k1, h / 2.0))?;
            let k3 = flow.eval(&s.advanced(&k2, h / 2.0))?;
            let k4 = flow.eval(&s.advanced(&k3, h))?;
            let combined = StateVelocity::new(
                (0..k1.dderivs.len())
                    .map(|i| {
                        (&k1.dderivs[i]
                            + &k2.dderivs[i] * 2.0
                            + &k3.dderivs[i] * 2.0
                            + &k4.dderivs[i])
                            / 6.0
                    })
                    .collect(),
            );
            Ok(s.advanced(&combined, h))
        }
    }
}

/// Integrate `steps` fixed steps of size `h` from `s0`.
///
/// A non-finite state or flow value at step `k` is reported as
/// [`Error::Divergence`] with `step = k` (1-based).
pub fn integrate(
    flow: &FlowField,
    s0: &OptimizerState,
    h: f64,
    steps: usize,
    scheme: Scheme,
) -> Result<Trajectory> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step size must be positive, got {h}"
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument(
            "at least one step is required".into(),
        ));
    }
    s0.validate()?;
    if s0.order() != flow.order() {
        return Err(Error::InvalidArgument(format!(
            "state of order {} for a flow of order {}",
            s0.order(),
            flow.order()
        )));
    }
    let mut states = Vec::with_capacity(steps + 1);
    states.push(s0.clone());
    for k in 1..=steps {
        let next = match step(flow, &states[k - 1], h, scheme) {
            Ok(next) if next.is_finite() => next,
            Ok(_) | Err(Error::NonFinite { .. }) => return Err(Error::Divergence { step: k }),
            Err(e) => return Err(e),
        };
        states.push(next);
    }
    Ok(Trajectory { scheme, h, states })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftPoint {
    pub h: f64,
    pub steps: usize,
    /// `None` when either integration failed.
    pub defect: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub algorithm: Algorithm,
    pub scheme: Scheme,
    pub horizon: f64,
    pub points: Vec<DriftPoint>,
    /// Least-squares slope of `log defect` against `log h` over the points
    /// with a positive defect; `None` with fewer than two such points.
    pub slope: Option<f64>,
}

impl DriftReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,steps,defect\n");
        for p in &self.points {
            let defect = p.defect.map(|d| d.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{defect}", p.h, p.steps);
        }
        out
    }
}

/// How far integrating in the base chart and pushing forward is from
/// integrating the intrinsic barred flow, as a function of the step size.
///
/// Every `h` integrates to the same `horizon` with `round(horizon / h)`
/// steps. A failure at one `h` is recorded on that point and left out of
/// the fit.
pub fn equivariance_drift(
    b: &FlowBuilder,
    g: &Diffeomorphism,
    s0: &OptimizerState,
    h_list: &[f64],
    horizon: f64,
    scheme: Scheme,
) -> Result<DriftReport> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if let Some(h) = h_list.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "step size must be positive, got {h}"
        )));
    }
    let base = b.build(&Diffeomorphism::identity(b.dim()))?;
    let barred = b.build(g)?;
    let s0_bar = pushforward_state(g, s0)?;
    let points = h_list
        .par_iter()
        .map(|&h| {
            let steps = ((horizon / h).round() as usize).max(1);
            let defect = || -> Result<f64> {
                let end = integrate(&base, s0, h, steps, scheme)?;
                let pushed = pushforward_state(g, end.final_state())?;
                let end_bar = integrate(&barred, &s0_bar, h, steps, scheme)?;
                Ok((pushed.flatten() - end_bar.final_state().flatten()).norm())
            };
            match defect() {
                Ok(d) => DriftPoint {
                    h,
                    steps,
                    defect: Some(d),
                    error: None,
                },
                Err(e) => DriftPoint {
                    h,
                    steps,
                    defect: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect::<Vec<_>>();
    let fit: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| match p.defect {
            Some(d) if d > 0.0 && d.is_finite() => Some((p.h.ln(), d.ln())),
            _ => None,
        })
        .collect();
    Ok(DriftReport {
        algorithm: b.algorithm(),
        scheme,
        horizon,
        points,
        slope: log_log_slope(&fit),
    })
}

fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
