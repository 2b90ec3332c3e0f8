//! Fatal-crash classification on categorical road-crash records.
//!
//! The pipeline rebalances the training data with categorical SMOTE and
//! under-sampling, trains an SMO support vector machine and a bag of C4.5
//! trees, and averages their probabilities. Evaluation covers confusion-matrix
//! metrics, precision-recall and ROC areas and stratified cross-validation;
//! attributes are ranked by a fold-averaged chi-squared statistic.
//!
//! All randomness flows from one root seed through [`seed::derive`], so every
//! result is reproducible and independent of thread count.

pub mod dataset;
pub mod dtree;
pub mod ensemble;
pub mod eval;
pub mod exec;
pub mod model;
pub mod pipeline;
pub mod ranking;
pub mod resample;
pub mod seed;
pub mod spatial;
pub mod svm;

pub use dataset::{Class, CrashRecord, Dataset, Schema};
pub use exec::Execution;
pub use model::{ClassDistribution, ProbabilisticClassifier};
