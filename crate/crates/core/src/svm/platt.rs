//! Sigmoid fit of decision values to class probabilities, solved by Newton's
//! method with backtracking on the regularized-target log-loss.

use serde::{Deserialize, Serialize};

use super::SvmError;

/// `P(fatal | f) = 1 / (1 + exp(a f + b))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sigmoid {
    pub a: f64,
    pub b: f64,
}

const MAX_ITER: usize = 100;
const MIN_STEP: f64 = 1e-10;
const SIGMA: f64 = 1e-12;
const GRAD_TOL: f64 = 1e-8;

/// Numerically stable `1 / (1 + exp(a f + b))`.
pub fn sigmoid_probability(s: Sigmoid, f: f64) -> f64 {
    let z = s.a * f + s.b;
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// `-Σ t log p + (1 - t) log(1 - p)` written in terms of `z = a f + b`.
fn loss(values: &[f64], targets: &[f64], a: f64, b: f64) -> f64 {
    values
        .iter()
        .zip(targets)
        .map(|(&f, &t)| {
            let z = a * f + b;
            if z >= 0.0 {
                t * z + (-z).exp().ln_1p()
            } else {
                (t - 1.0) * z + z.exp().ln_1p()
            }
        })
        .sum()
}

/// Fit `a`, `b` on decision values and labels in {-1, +1}.
///
/// Targets are smoothed to `(N₊ + 1) / (N₊ + 2)` and `1 / (N₋ + 2)`.
pub fn platt_calibrate(values: &[f64], labels: &[f64]) -> Result<Sigmoid, SvmError> {
    if values.len() != labels.len() {
        return Err(SvmError::Shape {
            expected: labels.len(),
            got: values.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&y| y > 0.0).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(SvmError::SingleClass);
    }
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&y| if y > 0.0 { hi } else { lo }).collect();

    let mut a = 0.0;
    let mut b = ((n_neg + 1.0) / (n_pos + 1.0)).ln();
    let mut fval = loss(values, &targets, a, b);

    for _ in 0..MAX_ITER {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (SIGMA, SIGMA, 0.0, 0.0, 0.0);
        for (&f, &t) in values.iter().zip(&targets) {
            let p = sigmoid_probability(Sigmoid { a, b }, f);
            let q = 1.0 - p;
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = t - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < GRAD_TOL && g2.abs() < GRAD_TOL {
            return Ok(Sigmoid { a, b });
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;

        let mut step = 1.0;
        loop {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = loss(values, &targets, na, nb);
            if nf < fval + 1e-4 * step * gd + 1e-12 * fval.abs() {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
            if step < MIN_STEP {
                return Err(SvmError::Calibration("line search failed".into()));
            }
        }
    }
    Err(SvmError::Calibration(format!(
        "no convergence after {MAX_ITER} Newton iterations"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn log_loss(values: &[f64], labels: &[f64], s: Sigmoid) -> f64 {
        values
            .iter()
            .zip(labels)
            .map(|(&f, &y)| {
                let p = sigmoid_probability(s, f).clamp(1e-300, 1.0 - 1e-16);
                if y > 0.0 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum()
    }

    #[test]
    fn separated_scores_give_negative_slope() {
        let values: Vec<f64> = (0..40).map(|i| if i < 20 { -1.0 - i as f64 * 0.05 } else { 1.0 + i as f64 * 0.05 }).collect();
        let labels: Vec<f64> = (0..40).map(|i| if i < 20 { -1.0 } else { 1.0 }).collect();
        let s = platt_calibrate(&values, &labels).unwrap();
        assert!(s.a < 0.0);
        // Beats the best constant predictor.
        let constant = Sigmoid { a: 0.0, b: 0.0 };
        assert!(log_loss(&values, &labels, s) < log_loss(&values, &labels, constant));
    }

    #[test]
    fn symmetric_data_has_zero_offset() {
        let values = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0, -0.3, 0.3];
        let labels = [-1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0, 1.0];
        let s = platt_calibrate(&values, &labels).unwrap();
        assert!(s.b.abs() < 1e-8, "b = {}", s.b);
    }

    #[test]
    fn gradient_vanishes_at_solution() {
        let values = [-1.5, -0.2, 0.1, 0.4, 0.9, -0.7, 1.3, 0.0];
        let labels = [-1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, 1.0];
        let s = platt_calibrate(&values, &labels).unwrap();
        let eps = 1e-6;
        let n_pos = 4.0;
        let n_neg = 4.0;
        let t: Vec<f64> = labels
            .iter()
            .map(|&y| if y > 0.0 { (n_pos + 1.0) / (n_pos + 2.0) } else { 1.0 / (n_neg + 2.0) })
            .collect();
        let l = |a: f64, b: f64| loss(&values, &t, a, b);
        let ga = (l(s.a + eps, s.b) - l(s.a - eps, s.b)) / (2.0 * eps);
        let gb = (l(s.a, s.b + eps) - l(s.a, s.b - eps)) / (2.0 * eps);
        assert!(ga.abs() < 1e-6 && gb.abs() < 1e-6);
    }

    #[test]
    fn stable_at_extremes() {
        let s = Sigmoid { a: -1.0, b: 0.0 };
        assert_eq!(sigmoid_probability(s, 1e4), 1.0);
        assert_eq!(sigmoid_probability(s, -1e4), 0.0);
        assert!((sigmoid_probability(s, 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_class_is_an_error() {
        assert_eq!(platt_calibrate(&[0.1, 0.2], &[1.0, 1.0]), Err(SvmError::SingleClass));
    }

    proptest! {
        #[test]
        fn probability_monotone_in_score(a in -5.0f64..-0.01, b in -3.0f64..3.0, f in -10.0f64..10.0, d in 0.001f64..5.0) {
            let s = Sigmoid { a, b };
            prop_assert!(sigmoid_probability(s, f + d) >= sigmoid_probability(s, f));
        }
    }
}
