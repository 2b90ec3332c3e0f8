use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// One point per distinct score, thresholds strictly decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    /// `threshold,recall,precision` with one row per point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,recall,precision\n");
        for p in &self.points {
            writeln!(out, "{},{},{}", p.threshold, p.recall, p.precision).unwrap();
        }
        out
    }
}

fn check(scores: &[f64], labels: &[f64]) -> Result<(), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Shape {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Sweep the threshold down through every distinct score; at threshold `t`
/// every row with `score >= t` is predicted positive.
pub fn pr_curve(scores: &[f64], labels: &[f64]) -> Result<PrCurve, EvalError> {
    check(scores, labels)?;
    let positives = labels.iter().filter(|&&y| y > 0.0).count();
    if positives == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] > 0.0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold: t,
            recall: tp as f64 / positives as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    Ok(PrCurve { points })
}

/// Step-wise area: `Σ (rᵢ - rᵢ₋₁) pᵢ` from recall 0.
pub fn auc_pr(curve: &PrCurve) -> f64 {
    let mut prev = 0.0;
    let mut area = 0.0;
    for p in &curve.points {
        area += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    area
}

/// Precision of a no-skill classifier, `P / (P + N)`.
pub fn pr_baseline(labels: &[f64]) -> Result<f64, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(labels.iter().filter(|&&y| y > 0.0).count() as f64 / labels.len() as f64)
}

/// Mann–Whitney form: rank sum of positives with tied scores sharing the
/// mean rank.
pub fn auc_roc(scores: &[f64], labels: &[f64]) -> Result<f64, EvalError> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y > 0.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum, to keep midranks integral.
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j, mean (i + 1 + j) / 2.
        let mid2 = (i + 1 + j) as u64;
        let pos_here = order[i..j].iter().filter(|&&k| labels[k] > 0.0).count() as u64;
        rank_sum2 += mid2 * pos_here;
        i = j;
    }
    let (p, n) = (n_pos as u64, n_neg as u64);
    // 2U = 2R - P(P+1).
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / 2.0 / (p * n) as f64)
}
