//! Toy differentiable models, datasets, and the mean-squared-error loss.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diffcalc::{self, mat_vec, sum, Real, ScalarField, ScalarFn, VectorFn};
use crate::error::{Error, Result};

/// Largest parameter dimension supported anywhere in the crate.
pub const MAX_PARAM_DIM: usize = 16;

/// A network `f(x, θ)` that can be differentiated in θ.
///
/// Inputs `x` are data and never carry derivatives.
pub trait ParametricModel: Send + Sync {
    fn param_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn forward<T: Real>(&self, x: &[f64], theta: &[T]) -> Vec<T>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Model {
    /// `f = W x` with `θ = vec(W)` row-major, `W` of shape output×input.
    Linear {
        input_dim: usize,
        #[serde(default = "one")]
        output_dim: usize,
    },
    /// Scalar `f = ½ Σ_i x_i θ_i²`.
    QuadraticSurrogate { input_dim: usize },
    /// One hidden tanh layer: `f = W₂ tanh(W₁ x + b₁) + b₂`.
    ///
    /// Parameters are laid out as `W₁` (row-major), `b₁`, `W₂` (row-major),
    /// `b₂`; either bias may be switched off.
    MlpTanh {
        input_dim: usize,
        hidden: usize,
        #[serde(default = "one")]
        output_dim: usize,
        #[serde(default = "yes")]
        hidden_bias: bool,
        #[serde(default = "yes")]
        output_bias: bool,
    },
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Linear { .. } => "linear",
            Model::QuadraticSurrogate { .. } => "quadratic-surrogate",
            Model::MlpTanh { .. } => "mlp-tanh",
        }
    }
}

impl ParametricModel for Model {
    fn param_dim(&self) -> usize {
        match *self {
            Model::Linear {
                input_dim,
                output_dim,
            } => input_dim * output_dim,
            Model::QuadraticSurrogate { input_dim } => input_dim,
            Model::MlpTanh {
                input_dim,
                hidden,
                output_dim,
                hidden_bias,
                output_bias,
            } => {
                hidden * input_dim
                    + if hidden_bias { hidden } else { 0 }
                    + output_dim * hidden
                    + if output_bias { output_dim } else { 0 }
            }
        }
    }

    fn input_dim(&self) -> usize {
        match *self {
            Model::Linear { input_dim, .. }
            | Model::QuadraticSurrogate { input_dim }
            | Model::MlpTanh { input_dim, .. } => input_dim,
        }
    }

    fn output_dim(&self) -> usize {
        match *self {
            Model::Linear { output_dim, .. } | Model::MlpTanh { output_dim, .. } => output_dim,
            Model::QuadraticSurrogate { .. } => 1,
        }
    }

    fn forward<T: Real>(&self, x: &[f64], theta: &[T]) -> Vec<T> {
        match *self {
            Model::Linear {
                input_dim,
                output_dim,
            } => (0..output_dim)
                .map(|o| {
                    let row = &theta[o * input_dim..(o + 1) * input_dim];
                    sum(row.iter().zip(x).map(|(w, &xi)| w.clone() * xi))
                })
                .collect(),
            Model::QuadraticSurrogate { .. } => {
                vec![sum(theta.iter().zip(x).map(|(t, &xi)| t.square() * xi)) * 0.5]
            }
            Model::MlpTanh {
                input_dim,
                hidden,
                output_dim,
                hidden_bias,
                output_bias,
            } => {
                let (w1, rest) = theta.split_at(hidden * input_dim);
                let (b1, rest) = if hidden_bias {
                    let (b, r) = rest.split_at(hidden);
                    (Some(b), r)
                } else {
                    (None, rest)
                };
                let (w2, rest) = rest.split_at(output_dim * hidden);
                let b2 = if output_bias {
                    Some(&rest[..output_dim])
                } else {
                    None
                };
                let act: Vec<T> = (0..hidden)
                    .map(|k| {
                        let row = &w1[k * input_dim..(k + 1) * input_dim];
                        let mut z = sum(row.iter().zip(x).map(|(w, &xi)| w.clone() * xi));
                        if let Some(b) = b1 {
                            z = z + b[k].clone();
                        }
                        z.tanh()
                    })
                    .collect();
                (0..output_dim)
                    .map(|o| {
                        let row = &w2[o * hidden..(o + 1) * hidden];
                        let mut y = sum(row.iter().zip(&act).map(|(w, a)| w.clone() * a.clone()));
                        if let Some(b) = b2 {
                            y = y + b[o].clone();
                        }
                        y
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// A non-empty list of dimension-consistent `(x, y)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Config("dataset is empty".into()))?;
        let (dx, dy) = (first.x.len(), first.y.len());
        for (k, s) in samples.iter().enumerate() {
            if s.x.len() != dx || s.y.len() != dy {
                return Err(Error::Config(format!(
                    "sample {k} has shape ({}, {}), expected ({dx}, {dy})",
                    s.x.len(),
                    s.y.len()
                )));
            }
            if s.x.iter().chain(&s.y).any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("sample {k} has a non-finite entry")));
            }
        }
        Ok(Dataset { samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.samples[0].x.len()
    }

    pub fn output_dim(&self) -> usize {
        self.samples[0].y.len()
    }

    /// Parse comma-separated lines of `input_dim` inputs then `output_dim`
    /// targets. Blank lines and lines starting with `#` are skipped.
    pub fn parse_csv(text: &str, input_dim: usize, output_dim: usize) -> Result<Self> {
        let mut samples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let values = line
                .split(',')
                .map(|field| field.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Config(format!("dataset line {}: {e}", lineno + 1)))?;
            if values.len() != input_dim + output_dim {
                return Err(Error::Config(format!(
                    "dataset line {}: expected {} values, found {}",
                    lineno + 1,
                    input_dim + output_dim,
                    values.len()
                )));
            }
            let (x, y) = values.split_at(input_dim);
            samples.push(Sample {
                x: x.to_vec(),
                y: y.to_vec(),
            });
        }
        Dataset::new(samples)
    }

    pub fn load_csv(path: &Path, input_dim: usize, output_dim: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Dataset::parse_csv(&text, input_dim, output_dim)
    }

    /// Deterministic synthetic datasets: `"sine"` or `"linear"`.
    ///
    /// Inputs are a Weyl sequence spread over `[-1.5, 1.5]^d`.
    pub fn builtin(name: &str, input_dim: usize, output_dim: usize, len: usize) -> Result<Self> {
        let target: fn(&[f64], usize) -> f64 = match name {
            "sine" => |x, o| {
                let phase: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (j + 1 + o) as f64 * v)
                    .sum();
                0.8 * phase.sin() + 0.1 * o as f64
            },
            "linear" => |x, o| {
                x.iter()
                    .enumerate()
                    .map(|(j, v)| (0.5 + 0.25 * (j + o) as f64) * v)
                    .sum::<f64>()
                    - 0.2 * o as f64
            },
            other => return Err(Error::Config(format!("unknown builtin dataset '{other}'"))),
        };
        let samples = (0..len)
            .map(|k| {
                let x: Vec<f64> = (0..input_dim)
                    .map(|j| {
                        let alpha = ((j + 2) as f64).sqrt().fract();
                        -1.5 + 3.0 * ((k as f64 + 0.5) * alpha).fract()
                    })
                    .collect();
                let y = (0..output_dim).map(|o| target(&x, o)).collect();
                Sample { x, y }
            })
            .collect();
        Dataset::new(samples)
    }
}

/// `L(θ) = (1/|S|) Σ ½‖f(x, θ) − y‖²`, summed in dataset order.
pub struct DatasetLoss<M> {
    model: M,
    data: Dataset,
}

impl<M: ParametricModel> ScalarFn for DatasetLoss<M> {
    fn dim(&self) -> usize {
        self.model.param_dim()
    }

    fn eval<T: Real>(&self, theta: &[T]) -> T {
        let total = sum(self.data.samples.iter().map(|s| {
            let out = self.model.forward(&s.x, theta);
            sum(out.into_iter().zip(&s.y).map(|(f, &y)| (f - y).square())) * 0.5
        }));
        total / self.data.len() as f64
    }
}

fn check_compatible<M: ParametricModel>(model: &M, data: &Dataset) -> Result<()> {
    if model.input_dim() != data.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "model input",
            expected: model.input_dim(),
            found: data.input_dim(),
        });
    }
    if model.output_dim() != data.output_dim() {
        return Err(Error::DimensionMismatch {
            what: "model output",
            expected: model.output_dim(),
            found: data.output_dim(),
        });
    }
    Ok(())
}

pub fn dataset_loss<M>(model: M, data: &Dataset) -> Result<Arc<dyn ScalarField>>
where
    M: ParametricModel + 'static,
{
    if data.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    check_compatible(&model, data)?;
    Ok(Arc::new(DatasetLoss {
        model,
        data: data.clone(),
    }))
}

/// `θ ↦ f(x, θ)` at one fixed input.
struct AtInput<'a, M> {
    model: &'a M,
    x: &'a [f64],
}

impl<M: ParametricModel> VectorFn for AtInput<'_, M> {
    fn in_dim(&self) -> usize {
        self.model.param_dim()
    }
    fn out_dim(&self) -> usize {
        self.model.output_dim()
    }
    fn eval<T: Real>(&self, theta: &[T]) -> Vec<T> {
        self.model.forward(self.x, theta)
    }
}

/// One `P×N` Jacobian `∂f^α/∂θ^i` per sample, in dataset order.
pub fn network_jacobian<M: ParametricModel>(
    model: &M,
    data: &Dataset,
    theta: &DVector<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    check_compatible(model, data)?;
    data.samples
        .iter()
        .map(|s| diffcalc::jacobian(&AtInput { model, x: &s.x }, theta))
        .collect()
}

/// A model whose output is read as the mean of an isotropic Gaussian.
#[derive(Debug, Clone)]
pub struct GaussianHead<M> {
    pub model: M,
    noise_variance: f64,
}

impl<M> GaussianHead<M> {
    pub fn new(model: M, noise_variance: f64) -> Result<Self> {
        if noise_variance > 0.0 && noise_variance.is_finite() {
            Ok(GaussianHead {
                model,
                noise_variance,
            })
        } else {
            Err(Error::InvalidArgument(format!(
                "noise variance must be positive, got {noise_variance}"
            )))
        }
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }
}

/// `L(θ) = ½ (θ − c)ᵀ A (θ − c)`.
#[derive(Debug, Clone)]
pub struct QuadraticLoss {
    a: DMatrix<f64>,
    center: DVector<f64>,
}

impl QuadraticLoss {
    pub fn new(a: DMatrix<f64>, center: DVector<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() != center.len() {
            return Err(Error::DimensionMismatch {
                what: "quadratic loss",
                expected: a.nrows(),
                found: center.len(),
            });
        }
        Ok(QuadraticLoss { a, center })
    }

    pub fn centered(a: DMatrix<f64>) -> Self {
        let n = a.nrows();
        QuadraticLoss {
            a,
            center: DVector::zeros(n),
        }
    }

    pub fn isotropic(n: usize) -> Self {
        QuadraticLoss::centered(DMatrix::identity(n, n))
    }
}

impl ScalarFn for QuadraticLoss {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn eval<T: Real>(&self, theta: &[T]) -> T {
        let d: Vec<T> = theta
            .iter()
            .zip(self.center.iter())
            .map(|(t, &c)| t.clone() - c)
            .collect();
        let ad = mat_vec(&self.a, &d);
        sum(d.into_iter().zip(ad).map(|(a, b)| a * b)) * 0.5
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcalc::{finite_diff, gradient};

    fn scalar_linear() -> Model {
        Model::Linear {
            input_dim: 1,
            output_dim: 1,
        }
    }

    #[test]
    fn single_sample_linear_loss() {
        let data = Dataset::new(vec![Sample {
            x: vec![1.0],
            y: vec![2.0],
        }])
        .unwrap();
        let loss = dataset_loss(scalar_linear(), &data).unwrap();
        let theta = DVector::from_vec(vec![0.0]);
        assert_eq!(loss.eval_f64(theta.as_slice()), 2.0);
        assert_eq!(gradient(&*loss, &theta).unwrap()[0], -2.0);
    }

    #[test]
    fn two_sample_mean_of_residuals() {
        let data = Dataset::new(vec![
            Sample {
                x: vec![1.0],
                y: vec![1.0],
            },
            Sample {
                x: vec![2.0],
                y: vec![5.0],
            },
        ])
        .unwrap();
        let loss = dataset_loss(scalar_linear(), &data).unwrap();
        // θ = 2: residuals 1 and −1, so L = (½ + ½) / 2.
        assert_eq!(loss.eval_f64(&[2.0]), 0.5);
        // θ = 0: residuals −1 and −5, so L = (½ + 25/2) / 2.
        assert_eq!(loss.eval_f64(&[0.0]), 6.5);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(matches!(Dataset::new(vec![]), Err(Error::Config(_))));
        assert!(Dataset::parse_csv("# nothing\n", 1, 1).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let data = Dataset::parse_csv("1.0, 2.0, 3.0\n\n# c\n-1,0.5,2e-1\n", 2, 1).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.samples()[1].x, vec![-1.0, 0.5]);
        assert_eq!(data.samples()[1].y, vec![0.2]);
        assert!(Dataset::parse_csv("1,2\n", 2, 1).is_err());
        assert!(Dataset::parse_csv("1,x,3\n", 2, 1).is_err());
    }

    #[test]
    fn mlp_parameter_counts() {
        let m = Model::MlpTanh {
            input_dim: 1,
            hidden: 1,
            output_dim: 1,
            hidden_bias: true,
            output_bias: false,
        };
        assert_eq!(m.param_dim(), 3);
        let m = Model::MlpTanh {
            input_dim: 2,
            hidden: 2,
            output_dim: 1,
            hidden_bias: true,
            output_bias: false,
        };
        assert_eq!(m.param_dim(), 8);
    }

    #[test]
    fn mlp_forward_by_hand() {
        let m = Model::MlpTanh {
            input_dim: 1,
            hidden: 1,
            output_dim: 1,
            hidden_bias: true,
            output_bias: false,
        };
        let y = m.forward(&[2.0], &[0.1, -0.2, 0.3]);
        assert!((y[0] - 0.3 * (0.1f64 * 2.0 - 0.2).tanh()).abs() < 1e-16);
    }

    #[test]
    fn interpolating_point_has_zero_loss_and_gradient() {
        let m = Model::MlpTanh {
            input_dim: 1,
            hidden: 1,
            output_dim: 1,
            hidden_bias: true,
            output_bias: false,
        };
        let theta = [0.7, -0.1, 1.3];
        let samples = [-1.0, 0.2, 0.9]
            .iter()
            .map(|&x| Sample {
                x: vec![x],
                y: m.forward(&[x], &theta),
            })
            .collect();
        let data = Dataset::new(samples).unwrap();
        let loss = dataset_loss(m, &data).unwrap();
        let t = DVector::from_row_slice(&theta);
        assert_eq!(loss.eval_f64(&theta), 0.0);
        assert!(gradient(&*loss, &t).unwrap().amax() <= 1e-10);
    }

    #[test]
    fn linear_jacobian_rows_are_inputs() {
        let m = Model::Linear {
            input_dim: 2,
            output_dim: 1,
        };
        let data = Dataset::new(vec![
            Sample {
                x: vec![1.0, 1.0],
                y: vec![0.0],
            },
            Sample {
                x: vec![-2.0, 0.5],
                y: vec![0.0],
            },
        ])
        .unwrap();
        let js = network_jacobian(&m, &data, &DVector::from_vec(vec![0.3, 0.4])).unwrap();
        assert_eq!(js[0], DMatrix::from_row_slice(1, 2, &[1.0, 1.0]));
        assert_eq!(js[1], DMatrix::from_row_slice(1, 2, &[-2.0, 0.5]));
    }

    struct ConstantModel;
    impl ParametricModel for ConstantModel {
        fn param_dim(&self) -> usize {
            3
        }
        fn input_dim(&self) -> usize {
            1
        }
        fn output_dim(&self) -> usize {
            2
        }
        fn forward<T: Real>(&self, _x: &[f64], _theta: &[T]) -> Vec<T> {
            vec![T::constant(1.0), T::constant(-2.0)]
        }
    }

    #[test]
    fn constant_model_jacobian_is_zero() {
        let data = Dataset::builtin("sine", 1, 2, 4).unwrap();
        let js = network_jacobian(&ConstantModel, &data, &DVector::from_vec(vec![0.1; 3])).unwrap();
        assert_eq!(js.len(), 4);
        assert!(js.iter().all(|j| j.shape() == (2, 3) && j.amax() == 0.0));
    }

    #[test]
    fn mlp_jacobian_matches_finite_differences() {
        let m = Model::MlpTanh {
            input_dim: 2,
            hidden: 2,
            output_dim: 2,
            hidden_bias: true,
            output_bias: true,
        };
        let data = Dataset::builtin("sine", 2, 2, 5).unwrap();
        let theta = DVector::from_fn(m.param_dim(), |i, _| 0.3 * (i as f64).cos());
        let js = network_jacobian(&m, &data, &theta).unwrap();
        for (s, j) in data.samples().iter().zip(&js) {
            let fd =
                finite_diff::jacobian(&AtInput { model: &m, x: &s.x }, &theta, finite_diff::STEP);
            assert!(finite_diff::max_rel_error(j.as_slice(), fd.as_slice()) <= 1e-5);
        }
    }

    #[test]
    fn loss_is_permutation_invariant_to_roundoff() {
        let m = Model::MlpTanh {
            input_dim: 1,
            hidden: 2,
            output_dim: 1,
            hidden_bias: true,
            output_bias: true,
        };
        let data = Dataset::builtin("sine", 1, 1, 9).unwrap();
        let mut reversed = data.samples().to_vec();
        reversed.reverse();
        let reversed = Dataset::new(reversed).unwrap();
        let theta: Vec<f64> = (0..m.param_dim()).map(|i| 0.2 * i as f64 - 0.5).collect();
        let a = dataset_loss(m.clone(), &data).unwrap().eval_f64(&theta);
        let b = dataset_loss(m, &reversed).unwrap().eval_f64(&theta);
        assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
    }

    #[test]
    fn gaussian_head_needs_positive_variance() {
        assert!(GaussianHead::new(scalar_linear(), 0.0).is_err());
        assert!(GaussianHead::new(scalar_linear(), -1.0).is_err());
        assert_eq!(
            GaussianHead::new(scalar_linear(), 2.0)
                .unwrap()
                .noise_variance(),
            2.0
        );
    }
}
