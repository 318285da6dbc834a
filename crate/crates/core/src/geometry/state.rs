use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `θ` and its ξ-derivatives up to order `n − 1`, at flow time `ξ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub time: f64,
    pub derivs: Vec<DVector<f64>>,
}

impl OptimizerState {
    pub fn first_order(theta: DVector<f64>) -> Self {
        OptimizerState {
            time: 0.0,
            derivs: vec![theta],
        }
    }

    pub fn second_order(time: f64, theta: DVector<f64>, velocity: DVector<f64>) -> Self {
        OptimizerState {
            time,
            derivs: vec![theta, velocity],
        }
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn order(&self) -> usize {
        self.derivs.len()
    }

    pub fn dim(&self) -> usize {
        self.derivs.first().map_or(0, |d| d.len())
    }

    pub fn position(&self) -> &DVector<f64> {
        &self.derivs[0]
    }

    pub fn velocity(&self) -> Option<&DVector<f64>> {
        self.derivs.get(1)
    }

    pub fn is_finite(&self) -> bool {
        self.time.is_finite() && self.derivs.iter().all(|d| d.iter().all(|v| v.is_finite()))
    }

    /// All state coordinates stacked in order.
    pub fn flatten(&self) -> DVector<f64> {
        stack(&self.derivs)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.order()) {
            return Err(Error::InvalidArgument(format!(
                "state order must be 1 or 2, got {}",
                self.order()
            )));
        }
        let n = self.dim();
        if let Some(bad) = self.derivs.iter().find(|d| d.len() != n) {
            return Err(Error::DimensionMismatch {
                what: "state entry",
                expected: n,
                found: bad.len(),
            });
        }
        if !self.is_finite() {
            return Err(Error::NonFinite {
                what: "state",
                at: self.flatten().iter().copied().collect(),
            });
        }
        Ok(())
    }

    /// `self + h · v`, advancing time by `h`.
    pub fn advanced(&self, v: &StateVelocity, h: f64) -> OptimizerState {
        OptimizerState {
            time: self.time + h,
            derivs: self
                .derivs
                .iter()
                .zip(&v.dderivs)
                .map(|(d, dd)| d + dd * h)
                .collect(),
        }
    }
}

/// The ξ-derivative of every state entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVelocity {
    pub dderivs: Vec<DVector<f64>>,
    /// A pseudo-inverse with singular-value cutoff was used to produce it.
    #[serde(default)]
    pub pseudo_inverse: bool,
}

impl StateVelocity {
    pub fn new(dderivs: Vec<DVector<f64>>) -> Self {
        StateVelocity {
            dderivs,
            pseudo_inverse: false,
        }
    }

    pub fn flatten(&self) -> DVector<f64> {
        stack(&self.dderivs)
    }

    pub fn is_finite(&self) -> bool {
        self.dderivs.iter().all(|d| d.iter().all(|v| v.is_finite()))
    }
}

fn stack(parts: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(
        parts.iter().map(|p| p.len()).sum(),
        parts.iter().flat_map(|p| p.iter().copied()),
    )
}
