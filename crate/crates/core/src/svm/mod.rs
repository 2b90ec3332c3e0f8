//! Binary SVM trained by sequential minimal optimization, with a Platt
//! sigmoid mapping decision values to probabilities.

mod platt;
mod smo;

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::FeatureMatrix;
use crate::model::ClassDistribution;

pub use platt::{platt_calibrate, sigmoid_probability, Sigmoid};
pub use smo::{dual_objective, kkt_residual, train_smo};

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("training needs both classes and at least two rows")]
    SingleClass,
    #[error("invalid SMO parameters: {0}")]
    InvalidParams(String),
    #[error("expected a row of width {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("model has no probability calibration")]
    Uncalibrated,
    #[error("sigmoid calibration did not converge: {0}")]
    Calibration(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    #[default]
    Linear,
    /// `(x · z + coef0)^degree`.
    Polynomial { degree: u32, coef0: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<(), SvmError> {
        match self {
            KernelSpec::Polynomial { degree: 0, .. } => {
                Err(SvmError::InvalidParams("polynomial degree must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Kernel value from the plain inner product.
    pub fn apply(&self, dot: f64) -> f64 {
        match *self {
            KernelSpec::Linear => dot,
            KernelSpec::Polynomial { degree, coef0 } => (dot + coef0).powi(degree as i32),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoParams {
    /// Box constraint.
    pub c: f64,
    /// KKT tolerance.
    pub tol: f64,
    pub max_passes: usize,
    /// Upper bound on accepted pair updates.
    pub max_iter: usize,
}

impl Default for SmoParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-3,
            max_passes: 10,
            max_iter: 1_000_000,
        }
    }
}

impl SmoParams {
    pub fn validate(&self) -> Result<(), SvmError> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(SvmError::InvalidParams(format!("C = {} must be > 0", self.c)));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(SvmError::InvalidParams(format!("tol = {} must be > 0", self.tol)));
        }
        if self.max_passes == 0 || self.max_iter == 0 {
            return Err(SvmError::InvalidParams("max_passes and max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// A training row with non-zero dual coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportVector {
    /// Index of the row in the training matrix.
    pub row: usize,
    /// `alpha * y`.
    pub coef: f64,
    /// Active one-hot columns, ascending.
    pub active: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub width: usize,
    pub kernel: KernelSpec,
    pub c: f64,
    pub alphas: Vec<f64>,
    pub labels: Vec<f64>,
    pub support: Vec<SupportVector>,
    pub bias: f64,
    pub calibration: Option<Sigmoid>,
    pub converged: bool,
    /// Accepted pair updates.
    pub iterations: usize,
    #[serde(skip)]
    weights: OnceLock<Vec<f64>>,
}

/// `|a ∩ b|` for ascending index lists, i.e. the dot product of two 0/1 rows.
pub(crate) fn overlap(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

impl SvmModel {
    pub(crate) fn from_solution(
        fm: &FeatureMatrix,
        kernel: KernelSpec,
        c: f64,
        alphas: Vec<f64>,
        bias: f64,
        converged: bool,
        iterations: usize,
    ) -> Self {
        let labels = fm.labels().to_vec();
        let support = alphas
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > 0.0)
            .map(|(i, &a)| SupportVector {
                row: i,
                coef: a * labels[i],
                active: fm.active(i).to_vec(),
            })
            .collect();
        Self {
            width: fm.width(),
            kernel,
            c,
            alphas,
            labels,
            support,
            bias,
            calibration: None,
            converged,
            iterations,
            weights: OnceLock::new(),
        }
    }

    pub fn with_calibration(mut self, sigmoid: Sigmoid) -> Self {
        self.calibration = Some(sigmoid);
        self
    }

    /// Primal weights; only meaningful for the linear kernel.
    fn weights(&self) -> &[f64] {
        self.weights.get_or_init(|| {
            let mut w = vec![0.0; self.width];
            for sv in &self.support {
                for &col in &sv.active {
                    w[col as usize] += sv.coef;
                }
            }
            w
        })
    }

    /// Decision value of a row given by its active one-hot columns (ascending).
    pub fn decision_value_active(&self, active: &[u32]) -> f64 {
        match self.kernel {
            KernelSpec::Linear => {
                let w = self.weights();
                active.iter().map(|&c| w[c as usize]).sum::<f64>() + self.bias
            }
            kernel => {
                self.support
                    .iter()
                    .map(|sv| sv.coef * kernel.apply(overlap(&sv.active, active) as f64))
                    .sum::<f64>()
                    + self.bias
            }
        }
    }

    pub fn predict_proba_active(&self, active: &[u32]) -> Result<ClassDistribution, SvmError> {
        let sigmoid = self.calibration.ok_or(SvmError::Uncalibrated)?;
        let p = sigmoid_probability(sigmoid, self.decision_value_active(active));
        Ok(ClassDistribution::from_fatal(p))
    }
}

/// `Σ αᵢ yᵢ K(xᵢ, x) + b` for a dense row.
pub fn decision_value(model: &SvmModel, x: &[f64]) -> Result<f64, SvmError> {
    if x.len() != model.width {
        return Err(SvmError::Shape {
            expected: model.width,
            got: x.len(),
        });
    }
    Ok(match model.kernel {
        KernelSpec::Linear => {
            model
                .weights()
                .iter()
                .zip(x)
                .map(|(w, v)| w * v)
                .sum::<f64>()
                + model.bias
        }
        kernel => {
            model
                .support
                .iter()
                .map(|sv| {
                    let dot: f64 = sv.active.iter().map(|&c| x[c as usize]).sum();
                    sv.coef * kernel.apply(dot)
                })
                .sum::<f64>()
                + model.bias
        }
    })
}

/// `(1 - p, p)` with `p` the calibrated probability of Fatal.
pub fn svm_predict_proba(model: &SvmModel, x: &[f64]) -> Result<ClassDistribution, SvmError> {
    let sigmoid = model.calibration.ok_or(SvmError::Uncalibrated)?;
    let f = decision_value(model, x)?;
    Ok(ClassDistribution::from_fatal(sigmoid_probability(sigmoid, f)))
}

/// Train with SMO, then fit the sigmoid on the training decision values.
pub fn fit_calibrated(
    features: &FeatureMatrix,
    params: &SmoParams,
    kernel: KernelSpec,
    seed: u64,
) -> Result<SvmModel, SvmError> {
    let model = train_smo(features, params, kernel, seed)?;
    let values: Vec<f64> = (0..features.n_rows())
        .map(|i| model.decision_value_active(features.active(i)))
        .collect();
    let sigmoid = platt_calibrate(&values, features.labels())?;
    Ok(model.with_calibration(sigmoid))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_counts_shared_columns() {
        assert_eq!(overlap(&[0, 3, 7], &[1, 3, 7, 9]), 2);
        assert_eq!(overlap(&[], &[1]), 0);
    }

    #[test]
    fn kernel_values() {
        assert_eq!(KernelSpec::Linear.apply(3.0), 3.0);
        let k = KernelSpec::Polynomial {
            degree: 2,
            coef0: 1.0,
        };
        assert_eq!(k.apply(3.0), 16.0);
        assert!(KernelSpec::Polynomial {
            degree: 0,
            coef0: 0.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn params_validation() {
        assert!(SmoParams::default().validate().is_ok());
        assert!(SmoParams { c: 0.0, ..Default::default() }.validate().is_err());
        assert!(SmoParams { tol: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn uncalibrated_and_shape_errors() {
        let fm = FeatureMatrix::from_active(4, vec![vec![0, 2], vec![1, 3]], vec![1.0, -1.0]);
        let model = train_smo(&fm, &SmoParams::default(), KernelSpec::Linear, 0).unwrap();
        assert_eq!(
            svm_predict_proba(&model, &[1.0, 0.0, 1.0, 0.0]),
            Err(SvmError::Uncalibrated)
        );
        assert_eq!(
            decision_value(&model, &[1.0]),
            Err(SvmError::Shape { expected: 4, got: 1 })
        );
    }

    #[test]
    fn sigmoid_midpoint_and_asymptote() {
        let fm = FeatureMatrix::from_active(4, vec![vec![0, 2], vec![1, 3]], vec![1.0, -1.0]);
        let model = train_smo(&fm, &SmoParams::default(), KernelSpec::Linear, 0)
            .unwrap()
            .with_calibration(Sigmoid { a: -2.0, b: 0.0 });
        // Midpoint of the two rows has decision value 0.
        let mid = svm_predict_proba(&model, &[0.5, 0.5, 0.5, 0.5]).unwrap();
        assert!((mid.fatal - 0.5).abs() < 1e-12);
        let far = svm_predict_proba(&model, &[1e6, 0.0, 1e6, 0.0]).unwrap();
        assert_eq!(far.fatal, 1.0);
        let x = [1.0, 0.0, 0.3, 0.0];
        let f = decision_value(&model, &x).unwrap();
        let p = svm_predict_proba(&model, &x).unwrap().fatal;
        assert!((p - 1.0 / (1.0 + (-2.0 * f).exp())).abs() < 1e-15);
    }
}
