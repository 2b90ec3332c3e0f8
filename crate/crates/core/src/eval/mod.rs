//! Confusion-matrix metrics, precision-recall and ROC areas, and the
//! stratified cross-validation harness.

mod curves;
mod cv;
mod metrics;

use thiserror::Error;

pub use curves::{auc_pr, auc_roc, pr_baseline, pr_curve, PrCurve, PrPoint};
pub use cv::{cross_validate, fold_indices, stratified_folds, CvReport, Learner, NamedMetrics};
pub use metrics::{
    accuracy, agreement, confusion, f1, kappa, kappa_band, precision, recall, AgreementStats,
    ConfusionMatrix, KappaBand, MetricsReport,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{scores} scores but {labels} labels")]
    Shape { scores: usize, labels: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("kappa is undefined when expected agreement is 1")]
    UndefinedKappa,
    #[error("precision-recall curve needs at least one positive label")]
    NoPositives,
    #[error("AUROC needs both classes")]
    SingleClass,
    #[error("stratification: {0}")]
    Stratification(String),
    #[error("resampling a training fold")]
    Resample(#[from] crate::resample::ResampleError),
    #[error("training a fold: {0}")]
    Learner(Box<dyn std::error::Error + Send + Sync>),
}
