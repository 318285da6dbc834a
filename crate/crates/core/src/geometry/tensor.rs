use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::diffcalc::Rank3;
use crate::error::Result;

/// Index placement of a bilinear form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variance {
    /// Lower indices: Fisher, GGN, Hessian.
    Covariant,
    /// Upper indices: inverse Fisher.
    Contravariant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioner {
    pub matrix: DMatrix<f64>,
    pub variance: Variance,
    /// Optional `B` with `matrix = BᵀB`. Solves go through `B` when present,
    /// which avoids squaring its condition number.
    pub factor: Option<DMatrix<f64>>,
}

impl Preconditioner {
    pub fn covariant(matrix: DMatrix<f64>) -> Self {
        Preconditioner {
            matrix,
            variance: Variance::Covariant,
            factor: None,
        }
    }

    pub fn contravariant(matrix: DMatrix<f64>) -> Self {
        Preconditioner {
            matrix,
            variance: Variance::Contravariant,
            factor: None,
        }
    }

    /// Covariant form `BᵀB` remembering its factor.
    pub fn gram(matrix: DMatrix<f64>, factor: DMatrix<f64>) -> Self {
        Preconditioner {
            matrix,
            variance: Variance::Covariant,
            factor: Some(factor),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

type ChristoffelFn = dyn Fn(&DVector<f64>) -> Result<Rank3> + Send + Sync;

/// An affine connection given by its Christoffel symbols `Γ[k][(i, j)]`,
/// symmetric in the lower pair. `None` is the flat connection of the chart.
#[derive(Clone)]
pub struct Connection {
    dim: usize,
    christoffel: Option<Arc<ChristoffelFn>>,
}

impl Connection {
    pub fn flat(dim: usize) -> Self {
        Connection {
            dim,
            christoffel: None,
        }
    }

    pub fn from_fn<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<Rank3> + Send + Sync + 'static,
    {
        Connection {
            dim,
            christoffel: Some(Arc::new(f)),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_flat(&self) -> bool {
        self.christoffel.is_none()
    }

    pub fn christoffel(&self, theta: &DVector<f64>) -> Result<Rank3> {
        match &self.christoffel {
            Some(f) => f(theta),
            None => Ok(Rank3::zeros(self.dim, self.dim)),
        }
    }
}

impl fmt::Debug for Connection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Connection")
            .field("dim", &self.dim)
            .field("flat", &self.is_flat())
            .finish()
    }
}
