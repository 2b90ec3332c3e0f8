use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{EvalError, MetricsReport};
use crate::dataset::{Class, Dataset};
use crate::ensemble::{EnsembleError, ModelSpec, VotingModel};
use crate::exec::Execution;
use crate::model::{ClassDistribution, ProbabilisticClassifier};
use crate::resample::{rebalance, ResamplePlan};
use crate::seed;

/// A training procedure evaluated by [`cross_validate`].
pub trait Learner: Sync {
    type Model: ProbabilisticClassifier;
    type Error: std::error::Error + Send + Sync + 'static;

    fn fit(&self, train: &Dataset, seed: u64) -> Result<Self::Model, Self::Error>;
}

impl Learner for ModelSpec {
    type Model = VotingModel;
    type Error = EnsembleError;

    fn fit(&self, train: &Dataset, seed: u64) -> Result<VotingModel, EnsembleError> {
        ModelSpec::fit(self, train, seed)
    }
}

/// Fold number of every row. Each class is shuffled with its own derived
/// stream and dealt round-robin, so fold sizes per class differ by at most one.
pub fn stratified_folds(labels: &[Class], folds: usize, seed: u64) -> Result<Vec<usize>, EvalError> {
    if folds < 2 {
        return Err(EvalError::Stratification(format!("need at least 2 folds, got {folds}")));
    }
    let mut fold_of = vec![0; labels.len()];
    for class in Class::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < folds {
            return Err(EvalError::Stratification(format!(
                "class {} has {} records, fewer than {folds} folds",
                class.label(),
                members.len()
            )));
        }
        members.shuffle(&mut seed::derived_rng(seed, "folds", class.index() as u64));
        for (pos, &i) in members.iter().enumerate() {
            fold_of[i] = pos % folds;
        }
    }
    Ok(fold_of)
}

/// Ascending row indices of each fold.
pub fn fold_indices(fold_of: &[usize], folds: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); folds];
    for (i, &f) in fold_of.iter().enumerate() {
        out[f].push(i);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMetrics {
    pub name: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    /// Pooled out-of-fold metrics of the model.
    pub metrics: MetricsReport,
    /// Pooled out-of-fold metrics of each member of a composite model.
    pub members: Vec<NamedMetrics>,
    /// Validation fold of each row.
    pub fold_of: Vec<usize>,
    /// How many times each row received an out-of-fold prediction.
    pub validated: Vec<u32>,
    /// Out-of-fold P(Fatal) of each row.
    pub scores: Vec<f64>,
}

struct FoldOutput {
    rows: Vec<usize>,
    probas: Vec<ClassDistribution>,
    members: Vec<(String, Vec<ClassDistribution>)>,
}

/// Stratified k-fold cross-validation.
///
/// Fold `f` rebalances only its training part, with plan seed
/// `derive(seed, "cv-resample", f)`, and fits with `derive(seed, "cv-fit", f)`.
/// Metrics are computed once on the pooled out-of-fold predictions.
pub fn cross_validate<L: Learner>(
    learner: &L,
    dataset: &Dataset,
    folds: usize,
    plan: &ResamplePlan,
    seed: u64,
    exec: Execution,
) -> Result<CvReport, EvalError> {
    let labels = dataset.labels();
    let fold_of = stratified_folds(&labels, folds, seed)?;
    let parts = fold_indices(&fold_of, folds);

    let outputs = exec.try_map(folds, |f| -> Result<FoldOutput, EvalError> {
        let train_rows: Vec<usize> = (0..dataset.len()).filter(|&i| fold_of[i] != f).collect();
        let train = dataset.select(&train_rows);
        let fold_plan = plan.with_seed(seed::derive(seed, "cv-resample", f as u64));
        let balanced = rebalance(&train, &fold_plan)?;
        let model = learner
            .fit(&balanced, seed::derive(seed, "cv-fit", f as u64))
            .map_err(|e| EvalError::Learner(Box::new(e)))?;
        let rows = parts[f].clone();
        let probas = rows
            .iter()
            .map(|&i| model.predict_proba(&dataset.rows()[i]))
            .collect();
        let members = model
            .member_names()
            .into_iter()
            .enumerate()
            .map(|(m, name)| {
                let d = rows
                    .iter()
                    .map(|&i| model.member_probas(&dataset.rows()[i])[m])
                    .collect();
                (name, d)
            })
            .collect();
        Ok(FoldOutput { rows, probas, members })
    })?;

    let n = dataset.len();
    let mut validated = vec![0u32; n];
    let mut pooled = vec![ClassDistribution::new(0.0, 0.0); n];
    let member_names: Vec<String> = outputs[0].members.iter().map(|m| m.0.clone()).collect();
    let mut member_pooled = vec![vec![ClassDistribution::new(0.0, 0.0); n]; member_names.len()];
    for out in &outputs {
        for (k, &i) in out.rows.iter().enumerate() {
            validated[i] += 1;
            pooled[i] = out.probas[k];
            for (m, (_, d)) in out.members.iter().enumerate() {
                member_pooled[m][i] = d[k];
            }
        }
    }

    let y: Vec<f64> = labels.iter().map(|c| c.sign()).collect();
    let report = |dists: &[ClassDistribution]| {
        let scores: Vec<f64> = dists.iter().map(|d| d.fatal).collect();
        let predicted: Vec<Class> = dists.iter().map(ClassDistribution::predicted).collect();
        MetricsReport::compute(&scores, &y, &predicted)
    };
    let metrics = report(&pooled)?;
    let members = member_names
        .into_iter()
        .zip(&member_pooled)
        .map(|(name, d)| Ok(NamedMetrics { name, metrics: report(d)? }))
        .collect::<Result<_, EvalError>>()?;
    Ok(CvReport {
        folds,
        metrics,
        members,
        fold_of,
        validated,
        scores: pooled.iter().map(|d| d.fatal).collect(),
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;
    use std::convert::Infallible;
    use std::sync::{Arc, Mutex};

    use super::*;
    use crate::dataset::{generate_synthetic, CrashRecord, DependencyPlan, Schema};

    struct Constant;

    struct ConstModel;

    impl ProbabilisticClassifier for ConstModel {
        fn predict_proba(&self, _: &CrashRecord) -> ClassDistribution {
            ClassDistribution::new(0.5, 0.5)
        }
    }

    impl Learner for Constant {
        type Model = ConstModel;
        type Error = Infallible;

        fn fit(&self, _: &Dataset, _: u64) -> Result<ConstModel, Infallible> {
            Ok(ConstModel)
        }
    }

    /// Looks up exact attribute vectors seen in training; unseen rows get the
    /// training majority.
    struct Memorizer;

    struct Lookup {
        table: HashMap<Vec<u16>, ClassDistribution>,
        fallback: ClassDistribution,
    }

    impl ProbabilisticClassifier for Lookup {
        fn predict_proba(&self, r: &CrashRecord) -> ClassDistribution {
            self.table.get(&r.values).copied().unwrap_or(self.fallback)
        }
    }

    impl Learner for Memorizer {
        type Model = Lookup;
        type Error = Infallible;

        fn fit(&self, train: &Dataset, _: u64) -> Result<Lookup, Infallible> {
            let table = train
                .rows()
                .iter()
                .map(|r| (r.values.clone(), ClassDistribution::from_fatal(r.label.sign().max(0.0))))
                .collect();
            let [neg, pos] = train.class_counts();
            let fallback = ClassDistribution::from_fatal(if pos > neg { 1.0 } else { 0.0 });
            Ok(Lookup { table, fallback })
        }
    }

    /// Records every training set it is handed.
    struct Spy(Mutex<Vec<Dataset>>);

    impl Learner for Spy {
        type Model = ConstModel;
        type Error = Infallible;

        fn fit(&self, train: &Dataset, _: u64) -> Result<ConstModel, Infallible> {
            self.0.lock().unwrap().push(train.clone());
            Ok(ConstModel)
        }
    }

    fn data(n: usize, rate: f64, seed: u64) -> Dataset {
        generate_synthetic(n, rate, &DependencyPlan::lrap_like(10), seed).unwrap()
    }

    #[test]
    fn folds_partition_and_stratify() {
        let ds = data(500, 0.1, 1);
        let labels = ds.labels();
        let fold_of = stratified_folds(&labels, 10, 4).unwrap();
        let parts = fold_indices(&fold_of, 10);
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..500).collect::<Vec<_>>());
        for p in &parts {
            let fatal = p.iter().filter(|&&i| labels[i] == Class::Fatal).count();
            assert_eq!(fatal, 5);
            assert_eq!(p.len(), 50);
        }
        assert_eq!(fold_of, stratified_folds(&labels, 10, 4).unwrap());
    }

    #[test]
    fn too_few_records_per_class() {
        let labels = [Class::Fatal, Class::NotFatal, Class::NotFatal];
        assert!(matches!(stratified_folds(&labels, 2, 0), Err(EvalError::Stratification(_))));
        assert!(matches!(stratified_folds(&labels, 1, 0), Err(EvalError::Stratification(_))));
    }

    #[test]
    fn every_record_validated_exactly_once() {
        // The finest partition allowed: as many folds as the smaller class.
        let ds = data(40, 0.5, 2);
        let report = cross_validate(
            &Constant,
            &ds,
            20,
            &ResamplePlan::pass_through(&ds),
            3,
            Execution::Sequential,
        )
        .unwrap();
        assert!(report.validated.iter().all(|&v| v == 1));
        assert_eq!(report.metrics.auc_roc, 0.5);
        assert_eq!(report.metrics.recall, 0.0);
    }

    #[test]
    fn memorizer_scores_worse_out_of_fold() {
        let ds = data(400, 0.3, 3);
        let model = Memorizer.fit(&ds, 0).unwrap();
        let train_acc = ds
            .rows()
            .iter()
            .filter(|r| model.predict(r) == r.label)
            .count() as f64
            / ds.len() as f64;
        let report = cross_validate(
            &Memorizer,
            &ds,
            10,
            &ResamplePlan::pass_through(&ds),
            5,
            Execution::Sequential,
        )
        .unwrap();
        assert!(report.metrics.accuracy < train_acc);
    }

    #[test]
    fn validation_rows_never_reach_training() {
        // Give one fatal record a Day value no other record has, then check
        // that the training side of its fold, SMOTE output included, never
        // carries that value.
        let ds = data(300, 0.2, 4);
        let mut rows = ds.rows().to_vec();
        let day = ds.schema().attribute_index("Day").unwrap();
        let canary_value = 30;
        for r in rows.iter_mut() {
            if r.values[day] == canary_value {
                r.values[day] = 0;
            }
        }
        let canary = rows.iter().position(|r| r.label == Class::Fatal).unwrap();
        rows[canary].values[day] = canary_value;
        let ds = Dataset::new(Arc::new(Schema::lrap()), rows).unwrap();

        let spy = Spy(Mutex::new(Vec::new()));
        let report =
            cross_validate(&spy, &ds, 10, &ResamplePlan::default(), 6, Execution::Sequential)
                .unwrap();
        let canary_fold = report.fold_of[canary];
        let seen = spy.0.into_inner().unwrap();
        assert_eq!(seen.len(), 10);
        let carrying: Vec<usize> = seen
            .iter()
            .enumerate()
            .filter(|(_, t)| t.rows().iter().any(|r| r.values[day] == canary_value))
            .map(|(f, _)| f)
            .collect();
        assert!(!carrying.contains(&canary_fold));
        assert_eq!(carrying.len(), 9);
    }

    #[test]
    fn parallel_folds_match_sequential() {
        let ds = data(300, 0.15, 7);
        let spec = ModelSpec {
            n_bags: 5,
            ..Default::default()
        };
        let plan = ResamplePlan::default();
        let a = cross_validate(&spec, &ds, 5, &plan, 8, Execution::Sequential).unwrap();
        let b = cross_validate(&spec, &ds, 5, &plan, 8, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let names: Vec<&str> = a.members.iter().map(|m| m.name.as_str()).collect();
        assert_eq!(names, ["smo", "bag"]);
    }
}
