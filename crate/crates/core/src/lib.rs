//! Limiting flows of training algorithms and numerical checks of their
//! equivariance under reparameterization.

pub mod diffcalc;
pub mod error;
pub mod experiment;
pub mod flows;
pub mod geometry;
pub mod harness;
pub mod integrate;
pub mod linalg;
pub mod models;

pub use error::{Error, Result};
