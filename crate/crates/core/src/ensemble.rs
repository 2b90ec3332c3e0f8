//! Bagged decision trees and the probability-averaging vote over an SVM and
//! a bag.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    column_offsets, one_hot_encode, Class, CrashRecord, Dataset, DatasetError, Schema,
};
use crate::dtree::{train_tree_on, tree_predict_proba, DecisionTree, TreeParams};
use crate::exec::Execution;
use crate::model::{ClassDistribution, ProbabilisticClassifier};
use crate::resample::{rebalance, ResampleError, ResamplePlan};
use crate::seed;
use crate::svm::{fit_calibrated, KernelSpec, SmoParams, SvmError, SvmModel};

pub const DEFAULT_BAGS: usize = 100;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("ensemble composition: {0}")]
    Composition(String),
    #[error("bagging needs n_bags >= 1 and a non-empty training set")]
    EmptyBag,
    #[error("invalid tree parameters: {0}")]
    Tree(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Resample(#[from] ResampleError),
}

/// How each bag member picks its training rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    /// `n` draws with replacement.
    #[default]
    Bootstrap,
    /// Every row once, in order. Used to check the degenerate bag.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaggedModel {
    pub schema: Schema,
    pub members: Vec<DecisionTree>,
    pub member_seeds: Vec<u64>,
}

/// Row indices drawn for one bag member.
pub fn bootstrap_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = seed::rng(seed);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

pub fn bag_train(
    train: &Dataset,
    n_bags: usize,
    params: &TreeParams,
    seed: u64,
    exec: Execution,
) -> Result<BaggedModel, EnsembleError> {
    bag_train_with(train, n_bags, params, seed, exec, Sampling::Bootstrap)
}

/// Member `m` trains on rows drawn with sub-seed `derive(seed, "bag-member", m)`.
pub fn bag_train_with(
    train: &Dataset,
    n_bags: usize,
    params: &TreeParams,
    seed: u64,
    exec: Execution,
    sampling: Sampling,
) -> Result<BaggedModel, EnsembleError> {
    if n_bags == 0 || train.is_empty() {
        return Err(EnsembleError::EmptyBag);
    }
    params.validate().map_err(EnsembleError::Tree)?;
    let member_seeds: Vec<u64> = (0..n_bags)
        .map(|m| seed::derive(seed, "bag-member", m as u64))
        .collect();
    let n = train.len();
    let members = exec.map(n_bags, |m| {
        let rows = match sampling {
            Sampling::Bootstrap => bootstrap_indices(n, member_seeds[m]),
            Sampling::Identity => (0..n).collect(),
        };
        train_tree_on(train, &rows, params)
    });
    Ok(BaggedModel {
        schema: train.schema().clone(),
        members,
        member_seeds,
    })
}

pub fn bag_predict_proba(model: &BaggedModel, record: &CrashRecord) -> ClassDistribution {
    let dists: Vec<ClassDistribution> = model
        .members
        .iter()
        .map(|t| tree_predict_proba(t, record))
        .collect();
    ClassDistribution::mean(&dists)
}

impl ProbabilisticClassifier for BaggedModel {
    fn predict_proba(&self, record: &CrashRecord) -> ClassDistribution {
        bag_predict_proba(self, record)
    }
}

/// A calibrated SVM bound to the schema it was encoded with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmMember {
    pub schema: Schema,
    offsets: Vec<usize>,
    pub model: SvmModel,
}

impl SvmMember {
    pub fn new(schema: Schema, model: SvmModel) -> Result<Self, EnsembleError> {
        if model.calibration.is_none() {
            return Err(EnsembleError::Svm(SvmError::Uncalibrated));
        }
        if model.width != schema.one_hot_width() {
            return Err(EnsembleError::Composition(format!(
                "SVM width {} does not match schema width {}",
                model.width,
                schema.one_hot_width()
            )));
        }
        let offsets = column_offsets(&schema);
        Ok(Self {
            schema,
            offsets,
            model,
        })
    }

    pub fn decision_value(&self, record: &CrashRecord) -> f64 {
        self.model.decision_value_active(&self.active(record))
    }

    fn active(&self, record: &CrashRecord) -> Vec<u32> {
        self.offsets
            .iter()
            .zip(&record.values)
            .map(|(&o, &v)| (o + v as usize) as u32)
            .collect()
    }
}

impl ProbabilisticClassifier for SvmMember {
    fn predict_proba(&self, record: &CrashRecord) -> ClassDistribution {
        self.model
            .predict_proba_active(&self.active(record))
            .expect("SvmMember is calibrated by construction")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Member {
    Smo(SvmMember),
    Bag(BaggedModel),
}

impl Member {
    pub fn name(&self) -> &'static str {
        match self {
            Member::Smo(_) => "smo",
            Member::Bag(_) => "bag",
        }
    }

    pub fn schema(&self) -> &Schema {
        match self {
            Member::Smo(m) => &m.schema,
            Member::Bag(b) => &b.schema,
        }
    }

    pub fn predict_proba(&self, record: &CrashRecord) -> ClassDistribution {
        match self {
            Member::Smo(m) => m.predict_proba(record),
            Member::Bag(b) => bag_predict_proba(b, record),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    AverageProbabilities,
}

/// Unweighted mean of member distributions; the argmax tie goes to NotFatal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotingModel {
    pub combiner: Combiner,
    members: Vec<Member>,
}

impl VotingModel {
    pub fn new(members: Vec<Member>) -> Result<Self, EnsembleError> {
        let model = Self {
            combiner: Combiner::AverageProbabilities,
            members,
        };
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<(), EnsembleError> {
        let first = self
            .members
            .first()
            .ok_or_else(|| EnsembleError::Composition("a vote needs at least one member".into()))?;
        for m in &self.members[1..] {
            if m.schema() != first.schema() {
                return Err(EnsembleError::Composition(format!(
                    "member '{}' was trained on a different schema than '{}'",
                    m.name(),
                    first.name()
                )));
            }
        }
        if let Some(Member::Smo(m)) = self.members.iter().find(|m| matches!(m, Member::Smo(_))) {
            if m.model.calibration.is_none() {
                return Err(EnsembleError::Svm(SvmError::Uncalibrated));
            }
        }
        Ok(())
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn schema(&self) -> &Schema {
        self.members[0].schema()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EnsembleError> {
        let model: Self = serde_json::from_str(text)
            .map_err(|e| EnsembleError::Composition(format!("bad model JSON: {e}")))?;
        model.check()?;
        Ok(model)
    }
}

pub fn vote_predict_proba(model: &VotingModel, record: &CrashRecord) -> ClassDistribution {
    let dists: Vec<ClassDistribution> = model
        .members
        .iter()
        .map(|m| m.predict_proba(record))
        .collect();
    ClassDistribution::mean(&dists)
}

impl ProbabilisticClassifier for VotingModel {
    fn predict_proba(&self, record: &CrashRecord) -> ClassDistribution {
        vote_predict_proba(self, record)
    }

    fn member_names(&self) -> Vec<String> {
        self.members.iter().map(|m| m.name().to_string()).collect()
    }

    fn member_probas(&self, record: &CrashRecord) -> Vec<ClassDistribution> {
        self.members.iter().map(|m| m.predict_proba(record)).collect()
    }
}

/// Which learner a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Smo,
    Bag,
    #[default]
    Vote,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Smo => "smo",
            ModelKind::Bag => "bag",
            ModelKind::Vote => "vote",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "smo" => Ok(ModelKind::Smo),
            "bag" => Ok(ModelKind::Bag),
            "vote" => Ok(ModelKind::Vote),
            other => Err(format!("unknown model '{other}' (expected smo, bag or vote)")),
        }
    }
}

/// Everything needed to fit a model on already rebalanced data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub smo: SmoParams,
    pub kernel: KernelSpec,
    pub tree: TreeParams,
    pub n_bags: usize,
    pub exec: Execution,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::Vote,
            smo: SmoParams::default(),
            kernel: KernelSpec::Linear,
            tree: TreeParams::default(),
            n_bags: DEFAULT_BAGS,
            exec: Execution::default(),
        }
    }
}

impl ModelSpec {
    /// Fit the chosen members on `train` as given. SVM randomness comes from
    /// `derive(seed, "smo", 0)`, bagging from `derive(seed, "bag", 0)`.
    pub fn fit(&self, train: &Dataset, seed: u64) -> Result<VotingModel, EnsembleError> {
        let mut members = Vec::with_capacity(2);
        if matches!(self.kind, ModelKind::Smo | ModelKind::Vote) {
            let fm = one_hot_encode(train)?;
            let svm = fit_calibrated(&fm, &self.smo, self.kernel, seed::derive(seed, "smo", 0))?;
            members.push(Member::Smo(SvmMember::new(train.schema().clone(), svm)?));
        }
        if matches!(self.kind, ModelKind::Bag | ModelKind::Vote) {
            let bag = bag_train(
                train,
                self.n_bags,
                &self.tree,
                seed::derive(seed, "bag", 0),
                self.exec,
            )?;
            members.push(Member::Bag(bag));
        }
        VotingModel::new(members)
    }
}

/// Rebalance `train`, then fit the SVM and the bag and join them in a vote.
///
/// The plan's own seed is replaced by `derive(seed, "resample", 0)` so the
/// whole model follows from `seed`.
pub fn train_pipeline(
    train: &Dataset,
    plan: &ResamplePlan,
    spec: &ModelSpec,
    seed: u64,
) -> Result<VotingModel, EnsembleError> {
    let counts = train.class_counts();
    if counts[Class::Fatal.index()] == 0 || counts[Class::NotFatal.index()] == 0 {
        return Err(EnsembleError::Svm(SvmError::SingleClass));
    }
    let plan = plan.with_seed(seed::derive(seed, "resample", 0));
    let balanced = rebalance(train, &plan)?;
    spec.fit(&balanced, seed)
}
