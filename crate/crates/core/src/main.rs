use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crashml::dataset::{
    read_csv_file, write_csv_file, Class, Dataset, DependencyPlan, PlantedEffect, Schema,
    Synthesizer,
};
use crashml::ensemble::{ModelKind, VotingModel};
use crashml::exec::with_threads;
use crashml::pipeline::{
    self, apply_clusters, evaluate, fit_clusters, write_artifacts, write_ranking, RunConfig,
    METRICS_FILE, PR_CURVE_FILE, SEED_ENV,
};
use crashml::ranking::rank_attributes;
use crashml::resample::rebalance;
use crashml::seed;

/// `println!` that ignores a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "crashml", version, about = "Fatal-crash classification on categorical crash records")]
struct Cli {
    /// TOML file with run settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed. Falls back to the config file, then $CRASHML_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 forces the sequential path.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted dependencies.
    Synth(SynthArgs),
    /// Fit k-means on record coordinates and rewrite Spatial Cluster ID.
    Cluster(ClusterArgs),
    /// Apply SMOTE and under-sampling to a CSV.
    Rebalance(RebalanceArgs),
    /// Split, cross-validate, train, test and rank; writes all reports.
    Run(RunArgs),
    /// Chi-squared attribute ranking.
    Rank(RankArgs),
    /// Score a saved model on a CSV.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    /// Fraction of fatal records.
    #[arg(long, default_value_t = 0.05)]
    rate: f64,
    /// Number of location blobs / cluster IDs (default: k_clusters from config).
    #[arg(long)]
    clusters: Option<usize>,
    /// Planted effect `attribute=category:odds`, repeatable; replaces the
    /// default plan.
    #[arg(long = "effect")]
    effects: Vec<PlantedEffect>,
    /// Make every attribute independent of the label.
    #[arg(long, conflicts_with = "effects")]
    no_effects: bool,
    output: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    /// Also write the fitted centroids as JSON.
    #[arg(long)]
    centroids: Option<PathBuf>,
}

#[derive(Args)]
struct RebalanceArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long)]
    smote_percent: Option<f64>,
    /// Neighbourhood size cap.
    #[arg(long = "k", alias = "k-neighbors")]
    k_neighbors: Option<usize>,
    /// Target share of the majority class after resampling.
    #[arg(long = "majority-frac", alias = "majority-fraction")]
    majority_fraction: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    /// Input CSV (default: paths.input from config).
    input: Option<PathBuf>,
    /// Output directory (default: paths.output from config, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    bags: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Re-fit spatial clusters on the training coordinates.
    #[arg(long)]
    recluster: bool,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct RankArgs {
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Model JSON written by `run`.
    #[arg(long = "model")]
    model: PathBuf,
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_toml_file(path).context("config")?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    } else if cfg.seed.is_none() {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            let seed = raw
                .trim()
                .parse()
                .with_context(|| format!("config: {SEED_ENV}={raw:?} is not an unsigned integer"))?;
            cfg.seed = Some(seed);
        }
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    Ok(cfg)
}

fn read_input(path: &Path, cfg: &RunConfig) -> Result<Dataset> {
    let schema = Arc::new(Schema::lrap_with_clusters(cfg.k_clusters));
    read_csv_file(path, schema).with_context(|| format!("input: reading {}", path.display()))
}

fn input_path(arg: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    match arg.or_else(|| cfg.paths.input.clone()) {
        Some(p) => Ok(p),
        None => bail!("input: no input CSV given (argument or paths.input)"),
    }
}

fn out_dir(arg: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    arg.or_else(|| cfg.paths.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn print_counts(what: &str, data: &Dataset) {
    let c = data.class_counts();
    say!(
        "{what}: {} rows, {} fatal, {} not_fatal",
        data.len(),
        c[Class::Fatal.index()],
        c[Class::NotFatal.index()]
    );
}

fn synth(args: SynthArgs, cfg: &RunConfig) -> Result<()> {
    let clusters = args.clusters.unwrap_or(cfg.k_clusters);
    let plan = if args.no_effects {
        DependencyPlan::none()
    } else if args.effects.is_empty() {
        DependencyPlan::lrap_like(clusters)
    } else {
        DependencyPlan {
            effects: args.effects,
        }
    };
    let data = Synthesizer::new(args.n, args.rate, plan)
        .clusters(clusters)
        .generate(cfg.root_seed())
        .context("synth")?;
    write_csv_file(&data, &args.output)
        .with_context(|| format!("output: writing {}", args.output.display()))?;
    print_counts(&args.output.display().to_string(), &data);
    Ok(())
}

fn cluster(args: ClusterArgs, mut cfg: RunConfig) -> Result<()> {
    let data = read_input(&args.input, &cfg)?;
    if let Some(k) = args.k {
        cfg.k_clusters = k;
    }
    let model = fit_clusters(&data, cfg.k_clusters, seed::derive(cfg.root_seed(), "cluster", 0))
        .context("cluster")?;
    let out = apply_clusters(&data, &model).context("cluster")?;
    write_csv_file(&out, &args.output)
        .with_context(|| format!("output: writing {}", args.output.display()))?;
    if let Some(path) = &args.centroids {
        let text = serde_json::to_string_pretty(&model)? + "\n";
        std::fs::write(path, text).with_context(|| format!("output: writing {}", path.display()))?;
    }
    say!(
        "k = {}, inertia = {}, iterations = {}",
        model.k, model.inertia, model.iterations
    );
    Ok(())
}

fn rebalance_cmd(args: RebalanceArgs, cfg: RunConfig) -> Result<()> {
    let data = read_input(&args.input, &cfg)?;
    let mut plan = cfg.resample;
    if let Some(p) = args.smote_percent {
        plan.smote_percent = p;
    }
    if let Some(k) = args.k_neighbors {
        plan.k_neighbors = k;
    }
    if let Some(f) = args.majority_fraction {
        plan.target_majority_fraction = f;
    }
    let plan = plan.with_seed(seed::derive(cfg.root_seed(), "resample", 0));
    let out = rebalance(&data, &plan).context("rebalance")?;
    write_csv_file(&out, &args.output)
        .with_context(|| format!("output: writing {}", args.output.display()))?;
    print_counts("input", &data);
    print_counts("output", &out);
    Ok(())
}

fn run_cmd(args: RunArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(m) = args.model {
        cfg.model = m;
    }
    if let Some(f) = args.folds {
        cfg.folds = f;
    }
    if let Some(t) = args.test_fraction {
        cfg.test_fraction = t;
    }
    if let Some(b) = args.bags {
        cfg.n_bags = b;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(k) = args.k {
        cfg.k_clusters = k;
    }
    cfg.recluster |= args.recluster;
    let input = input_path(args.input, &cfg)?;
    let dir = out_dir(args.out, &cfg);
    let data = read_input(&input, &cfg)?;
    let outcome = pipeline::run(&cfg, &data)?;
    let written = write_artifacts(&dir, &outcome)?;

    let v = &outcome.validation.metrics;
    say!(
        "validation ({}-fold, {}): f1 {:.4}  auc_pr {:.4}  kappa {:.4} ({})",
        outcome.validation.folds, cfg.model, v.f1, v.auc_pr, v.kappa, v.kappa_band
    );
    for m in &outcome.validation.members {
        say!(
            "  member {}: f1 {:.4}  auc_pr {:.4}  kappa {:.4} ({})",
            m.name, m.metrics.f1, m.metrics.auc_pr, m.metrics.kappa, m.metrics.kappa_band
        );
    }
    let t = &outcome.test_metrics;
    say!(
        "test ({} rows): accuracy {:.4}  f1 {:.4}  auc_pr {:.4} (baseline {:.4})  kappa {:.4} ({})",
        outcome.test_rows.len(),
        t.accuracy,
        t.f1,
        t.auc_pr,
        t.pr_baseline,
        t.kappa,
        t.kappa_band
    );
    for p in written {
        say!("wrote {}", p.display());
    }
    Ok(())
}

fn rank_cmd(args: RankArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(f) = args.folds {
        cfg.folds = f;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    cfg.validate().context("config")?;
    let input = input_path(args.input, &cfg)?;
    let data = read_input(&input, &cfg)?;
    let ranking = rank_attributes(
        &data,
        cfg.folds,
        cfg.alpha,
        seed::derive(cfg.root_seed(), "rank", 0),
        cfg.execution(),
    )
    .context("ranking")?;
    for r in &ranking {
        say!(
            "{:>2}  {:<22} chi2 {:>10.3}  df {:>2}  critical {:>7.3}  {}",
            r.rank,
            r.attribute,
            r.chi2,
            r.df,
            r.critical,
            if r.significant { "significant" } else { "-" }
        );
    }
    for p in write_ranking(&out_dir(args.out, &cfg), &ranking)? {
        say!("wrote {}", p.display());
    }
    Ok(())
}

fn eval_cmd(args: EvalArgs, cfg: RunConfig) -> Result<()> {
    let text = std::fs::read_to_string(&args.model)
        .with_context(|| format!("input: reading {}", args.model.display()))?;
    let model = VotingModel::from_json(&text).context("input: model")?;
    let schema = Arc::new(model.schema().clone());
    let data = read_csv_file(&args.input, schema)
        .with_context(|| format!("input: reading {}", args.input.display()))?;
    let (metrics, curve) = evaluate(&model, &data).context("evaluation")?;
    say!(
        "accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}  auc_pr {:.4}  auc_roc {:.4}  kappa {:.4} ({})",
        metrics.accuracy,
        metrics.precision,
        metrics.recall,
        metrics.f1,
        metrics.auc_pr,
        metrics.auc_roc,
        metrics.kappa,
        metrics.kappa_band
    );
    let dir = out_dir(args.out, &cfg);
    std::fs::create_dir_all(&dir).with_context(|| format!("output: {}", dir.display()))?;
    let metrics_path = dir.join(METRICS_FILE);
    std::fs::write(&metrics_path, metrics.to_json() + "\n")
        .with_context(|| format!("output: writing {}", metrics_path.display()))?;
    let curve_path = dir.join(PR_CURVE_FILE);
    std::fs::write(&curve_path, curve.to_csv())
        .with_context(|| format!("output: writing {}", curve_path.display()))?;
    say!("wrote {}\nwrote {}", metrics_path.display(), curve_path.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let threads = cfg.threads;
    with_threads(threads, move || match cli.command {
        Command::Synth(a) => synth(a, &cfg),
        Command::Cluster(a) => cluster(a, cfg),
        Command::Rebalance(a) => rebalance_cmd(a, cfg),
        Command::Run(a) => run_cmd(a, cfg),
        Command::Rank(a) => rank_cmd(a, cfg),
        Command::Eval(a) => eval_cmd(a, cfg),
    })
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
