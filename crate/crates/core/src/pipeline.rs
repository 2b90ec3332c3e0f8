//! End-to-end run: split, optional re-clustering, cross-validation on the
//! training part, final training, one evaluation on the held-out part, and
//! attribute ranking.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{stratified_split_indices, AttributeSpec, Class, Dataset, Schema, SPATIAL_CLUSTER};
use crate::dtree::TreeParams;
use crate::ensemble::{train_pipeline, ModelKind, ModelSpec, VotingModel, DEFAULT_BAGS};
use crate::eval::{cross_validate, pr_curve, MetricsReport, NamedMetrics, PrCurve};
use crate::exec::Execution;
use crate::model::ProbabilisticClassifier;
use crate::ranking::{rank_attributes, ranking_csv, ranking_json, RankedAttribute, DEFAULT_ALPHA};
use crate::resample::ResamplePlan;
use crate::seed;
use crate::spatial::{kmeans_assign, kmeans_fit, ClusterModel, GeoPoint, KMeansParams};
use crate::svm::{KernelSpec, SmoParams};

pub const DEFAULT_SEED: u64 = 0;
pub const SEED_ENV: &str = "CRASHML_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Input,
    Split,
    Cluster,
    CrossValidation,
    Training,
    Evaluation,
    Ranking,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Input => "input",
            Stage::Split => "split",
            Stage::Cluster => "cluster",
            Stage::CrossValidation => "cross-validation",
            Stage::Training => "training",
            Stage::Evaluation => "evaluation",
            Stage::Ranking => "ranking",
            Stage::Output => "output",
        })
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage failed")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

impl PipelineError {
    pub fn new(stage: Stage, source: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> Self {
        Self {
            stage,
            source: source.into(),
        }
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: std::error::Error + Send + Sync + 'static> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::new(stage, e))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

/// Everything a run needs. Deserializes from TOML with every field optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; `None` falls back to the environment, then [`DEFAULT_SEED`].
    pub seed: Option<u64>,
    pub test_fraction: f64,
    pub folds: usize,
    pub model: ModelKind,
    /// Re-fit the spatial clusters on the training coordinates.
    pub recluster: bool,
    pub k_clusters: usize,
    pub n_bags: usize,
    pub alpha: f64,
    pub threads: Option<usize>,
    pub kernel: KernelSpec,
    pub resample: ResamplePlan,
    pub smo: SmoParams,
    pub tree: TreeParams,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            test_fraction: 0.2,
            folds: 10,
            model: ModelKind::Vote,
            recluster: false,
            k_clusters: 10,
            n_bags: DEFAULT_BAGS,
            alpha: DEFAULT_ALPHA,
            threads: None,
            kernel: KernelSpec::Linear,
            resample: ResamplePlan::default(),
            smo: SmoParams::default(),
            tree: TreeParams::default(),
            paths: Paths::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}")]
    Toml {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|source| ConfigError::Toml {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn root_seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn execution(&self) -> Execution {
        Execution::from_threads(self.threads)
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            kind: self.model,
            smo: self.smo,
            kernel: self.kernel,
            tree: self.tree,
            n_bags: self.n_bags,
            exec: self.execution(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction {} must be in (0, 1)", self.test_fraction));
        }
        if self.folds < 2 {
            return bad(format!("folds {} must be >= 2", self.folds));
        }
        if self.n_bags == 0 {
            return bad("n_bags must be >= 1".into());
        }
        if self.k_clusters == 0 {
            return bad("k_clusters must be >= 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return bad(format!("alpha {} must be in (0, 0.5]", self.alpha));
        }
        if self.threads == Some(0) {
            return bad("threads must be >= 1".into());
        }
        self.resample.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.smo.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.kernel.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.tree.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }
}

/// `schema` with the spatial-cluster attribute's domain set to `1..=k`.
pub fn with_cluster_domain(schema: &Schema, k: usize) -> Result<Schema, crate::dataset::DatasetError> {
    let inputs = schema
        .inputs()
        .iter()
        .map(|spec| {
            if spec.name() == SPATIAL_CLUSTER {
                AttributeSpec::numeric(SPATIAL_CLUSTER, 1, k as u32)
            } else {
                Ok(spec.clone())
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Schema::new(inputs)
}

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("the schema has no {SPATIAL_CLUSTER:?} attribute")]
    NoClusterAttribute,
    #[error("no record has a location")]
    NoLocations,
    #[error(transparent)]
    Spatial(#[from] crate::spatial::SpatialError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
}

/// K-means over the coordinates of the records that have them.
pub fn fit_clusters(dataset: &Dataset, k: usize, seed: u64) -> Result<ClusterModel, ClusterError> {
    let points: Vec<GeoPoint> = dataset.rows().iter().filter_map(|r| r.location).collect();
    if points.is_empty() {
        return Err(ClusterError::NoLocations);
    }
    let params = KMeansParams {
        k,
        ..KMeansParams::default()
    };
    let (model, _) = kmeans_fit(&points, params.k, seed, params.max_iter, params.tol)?;
    Ok(model)
}

/// Replace the Spatial Cluster ID of every located record with its nearest
/// centroid. Records without a location keep the ID they carry, which must
/// lie in `1..=k`.
pub fn apply_clusters(dataset: &Dataset, model: &ClusterModel) -> Result<Dataset, ClusterError> {
    let attr = dataset
        .schema()
        .attribute_index(SPATIAL_CLUSTER)
        .ok_or(ClusterError::NoClusterAttribute)?;
    let schema = Arc::new(with_cluster_domain(dataset.schema(), model.k)?);
    let rows = dataset
        .rows()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if let Some(p) = r.location {
                r.values[attr] = (kmeans_assign(model, p) - 1) as u16;
            }
            r
        })
        .collect();
    Ok(Dataset::new(schema, rows)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub model: ModelKind,
    pub folds: usize,
    pub metrics: MetricsReport,
    pub members: Vec<NamedMetrics>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub validation: ValidationReport,
    pub test_metrics: MetricsReport,
    pub pr_curve: PrCurve,
    pub ranking: Vec<RankedAttribute>,
    pub model: VotingModel,
    pub clusters: Option<ClusterModel>,
}

/// Sub-seeds of a run, one per stage.
fn stage_seed(root: u64, stage: &str) -> u64 {
    seed::derive(root, stage, 0)
}

/// Score a fitted model on `data`.
pub fn evaluate<M: ProbabilisticClassifier + ?Sized>(
    model: &M,
    data: &Dataset,
) -> Result<(MetricsReport, PrCurve), crate::eval::EvalError> {
    let dists: Vec<_> = data.rows().iter().map(|r| model.predict_proba(r)).collect();
    let scores: Vec<f64> = dists.iter().map(|d| d.fatal).collect();
    let predicted: Vec<Class> = dists.iter().map(|d| d.predicted()).collect();
    let labels: Vec<f64> = data.rows().iter().map(|r| r.label.sign()).collect();
    let metrics = MetricsReport::compute(&scores, &labels, &predicted)?;
    Ok((metrics, pr_curve(&scores, &labels)?))
}

/// The full protocol. Only the training part reaches clustering,
/// resampling, cross-validation, training and ranking; the test part is
/// scored once at the end.
pub fn run(config: &RunConfig, data: &Dataset) -> Result<RunOutcome, PipelineError> {
    config.validate().at(Stage::Config)?;
    let root = config.root_seed();
    let exec = config.execution();

    let (train_rows, test_rows) =
        stratified_split_indices(&data.labels(), config.test_fraction, stage_seed(root, "split"))
            .at(Stage::Split)?;
    let mut train = data.select(&train_rows);
    let mut test = data.select(&test_rows);

    let clusters = if config.recluster {
        let model = fit_clusters(&train, config.k_clusters, stage_seed(root, "cluster"))
            .at(Stage::Cluster)?;
        train = apply_clusters(&train, &model).at(Stage::Cluster)?;
        test = apply_clusters(&test, &model).at(Stage::Cluster)?;
        Some(model)
    } else {
        None
    };

    let spec = config.model_spec();
    let cv = cross_validate(
        &spec,
        &train,
        config.folds,
        &config.resample,
        stage_seed(root, "cv"),
        exec,
    )
    .at(Stage::CrossValidation)?;
    let validation = ValidationReport {
        model: config.model,
        folds: cv.folds,
        metrics: cv.metrics,
        members: cv.members,
    };

    let model = train_pipeline(&train, &config.resample, &spec, stage_seed(root, "final"))
        .at(Stage::Training)?;
    let (test_metrics, curve) = evaluate(&model, &test).at(Stage::Evaluation)?;

    let ranking = rank_attributes(
        &train,
        config.folds,
        config.alpha,
        stage_seed(root, "rank"),
        exec,
    )
    .at(Stage::Ranking)?;

    Ok(RunOutcome {
        train_rows,
        test_rows,
        validation,
        test_metrics,
        pr_curve: curve,
        ranking,
        model,
        clusters,
    })
}

pub const METRICS_FILE: &str = "metrics.json";
pub const VALIDATION_FILE: &str = "validation_metrics.json";
pub const PR_CURVE_FILE: &str = "pr_curve.csv";
pub const RANKING_CSV_FILE: &str = "ranking.csv";
pub const RANKING_JSON_FILE: &str = "ranking.json";
pub const MODEL_FILE: &str = "model.json";
pub const CLUSTERS_FILE: &str = "clusters.json";

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, PipelineError> {
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| PipelineError::new(Stage::Output, format!("writing {}: {e}", path.display())))?;
    Ok(path)
}

/// Write the ranking pair; returns the paths written.
pub fn write_ranking(dir: &Path, ranking: &[RankedAttribute]) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(dir).at(Stage::Output)?;
    let mut json_text = ranking_json(ranking);
    json_text.push('\n');
    Ok(vec![
        write(dir, RANKING_CSV_FILE, &ranking_csv(ranking))?,
        write(dir, RANKING_JSON_FILE, &json_text)?,
    ])
}

/// Write every artifact of a run into `dir`; returns the paths written.
pub fn write_artifacts(dir: &Path, outcome: &RunOutcome) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(dir).at(Stage::Output)?;
    let mut model = outcome.model.to_json();
    model.push('\n');
    let mut written = vec![
        write(dir, METRICS_FILE, &json(&outcome.test_metrics))?,
        write(dir, VALIDATION_FILE, &json(&outcome.validation))?,
        write(dir, PR_CURVE_FILE, &outcome.pr_curve.to_csv())?,
        write(dir, MODEL_FILE, &model)?,
    ];
    written.extend(write_ranking(dir, &outcome.ranking)?);
    if let Some(c) = &outcome.clusters {
        written.push(write(dir, CLUSTERS_FILE, &json(c))?);
    }
    Ok(written)
}
