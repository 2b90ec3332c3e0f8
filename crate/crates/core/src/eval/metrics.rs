use std::fmt;

use serde::{Deserialize, Serialize};

use super::{auc_pr, auc_roc, pr_baseline, pr_curve, EvalError};
use crate::dataset::Class;

/// Counts with Fatal as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, predicted: Class, actual: Class) {
        match (predicted, actual) {
            (Class::Fatal, Class::Fatal) => self.tp += 1,
            (Class::Fatal, Class::NotFatal) => self.fp += 1,
            (Class::NotFatal, Class::Fatal) => self.fn_ += 1,
            (Class::NotFatal, Class::NotFatal) => self.tn += 1,
        }
    }

    pub fn from_classes(predicted: &[Class], actual: &[Class]) -> Result<Self, EvalError> {
        if predicted.len() != actual.len() {
            return Err(EvalError::Shape {
                scores: predicted.len(),
                labels: actual.len(),
            });
        }
        let mut cm = Self::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            cm.record(p, a);
        }
        Ok(cm)
    }
}

/// Predict Fatal iff `score >= threshold`; labels are `+1` / `-1`.
pub fn confusion(scores: &[f64], labels: &[f64], threshold: f64) -> Result<ConfusionMatrix, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Shape {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (&s, &y) in scores.iter().zip(labels) {
        let predicted = if s >= threshold { Class::Fatal } else { Class::NotFatal };
        cm.record(predicted, Class::from_sign(y));
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> f64 {
    ratio(cm.tp + cm.tn, cm.total())
}

/// 0 when nothing is predicted positive.
pub fn precision(cm: &ConfusionMatrix) -> f64 {
    ratio(cm.tp, cm.tp + cm.fp)
}

/// 0 when there are no positives.
pub fn recall(cm: &ConfusionMatrix) -> f64 {
    ratio(cm.tp, cm.tp + cm.fn_)
}

pub fn f1(cm: &ConfusionMatrix) -> f64 {
    let (p, r) = (precision(cm), recall(cm));
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub p_o: f64,
    pub p_e: f64,
}

pub fn agreement(cm: &ConfusionMatrix) -> AgreementStats {
    let n = cm.total() as f64;
    let (tp, fp, fn_, tn) = (cm.tp as f64, cm.fp as f64, cm.fn_ as f64, cm.tn as f64);
    AgreementStats {
        p_o: (tp + tn) / n,
        p_e: ((tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn)) / (n * n),
    }
}

/// Cohen's kappa, `(p_o - p_e) / (1 - p_e)`.
///
/// Evaluated as `2 (tp tn - fp fn) / ((tp + fp)(fp + tn) + (tp + fn)(fn + tn))`,
/// the same ratio with both sides scaled by `n²`, so integer inputs give the
/// correctly rounded result.
pub fn kappa(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    if cm.total() == 0 {
        return Err(EvalError::Empty);
    }
    let (tp, fp, fn_, tn) = (cm.tp as i128, cm.fp as i128, cm.fn_ as i128, cm.tn as i128);
    let den = (tp + fp) * (fp + tn) + (tp + fn_) * (fn_ + tn);
    if den == 0 {
        return Err(EvalError::UndefinedKappa);
    }
    Ok((2 * (tp * tn - fp * fn_)) as f64 / den as f64)
}

/// Landis–Koch agreement bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaBand {
    Poor,
    Slight,
    Fair,
    Moderate,
    Substantial,
    AlmostPerfect,
}

impl fmt::Display for KappaBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KappaBand::Poor => "poor",
            KappaBand::Slight => "slight",
            KappaBand::Fair => "fair",
            KappaBand::Moderate => "moderate",
            KappaBand::Substantial => "substantial",
            KappaBand::AlmostPerfect => "almost-perfect",
        })
    }
}

/// Band of `kappa` after rounding to two decimals, so 0.205 and 0.2049 land
/// in a band rather than in the gap between 0.20 and 0.21.
pub fn kappa_band(kappa: f64) -> KappaBand {
    let hundredths = (kappa * 100.0).round() as i64;
    match hundredths {
        i64::MIN..=-1 => KappaBand::Poor,
        0..=20 => KappaBand::Slight,
        21..=40 => KappaBand::Fair,
        41..=60 => KappaBand::Moderate,
        61..=80 => KappaBand::Substantial,
        _ => KappaBand::AlmostPerfect,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub kappa: f64,
    pub kappa_band: KappaBand,
    pub auc_pr: f64,
    pub auc_roc: f64,
    pub pr_baseline: f64,
}

impl MetricsReport {
    /// `scores` are P(Fatal), `labels` are `±1`, and `predicted` are the
    /// classes the model assigns (its own argmax rule).
    pub fn compute(scores: &[f64], labels: &[f64], predicted: &[Class]) -> Result<Self, EvalError> {
        let actual: Vec<Class> = labels.iter().map(|&y| Class::from_sign(y)).collect();
        let cm = ConfusionMatrix::from_classes(predicted, &actual)?;
        Self::from_parts(&cm, scores, labels)
    }

    pub fn from_parts(cm: &ConfusionMatrix, scores: &[f64], labels: &[f64]) -> Result<Self, EvalError> {
        let k = kappa(cm)?;
        Ok(Self {
            accuracy: accuracy(cm),
            precision: precision(cm),
            recall: recall(cm),
            f1: f1(cm),
            kappa: k,
            kappa_band: kappa_band(k),
            auc_pr: auc_pr(&pr_curve(scores, labels)?),
            auc_roc: auc_roc(scores, labels)?,
            pr_baseline: pr_baseline(labels)?,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}
