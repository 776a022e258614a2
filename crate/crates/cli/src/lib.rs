//! Command-line front end. Parsing, config resolution and the run-directory
//! layout live here; `main` only maps [`CliError`] to an exit code.
//!
//! Log-risk convention everywhere: higher `log_risk` means earlier expected
//! recurrence, and `ttr = exp(-log_risk)`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fusesurv_core::config::RunConfig;
use fusesurv_core::experiment::{FoldPlan, MetricsSummary};
use fusesurv_core::io::{
    format_significant, match_labels, read_labels_csv, read_predictions_csv, save_synthetic, write_predictions_csv, Cohort,
};
use fusesurv_core::pipeline::{predict, run_nested_grid, train_kfold, write_curves_csv, FoldModel, TrainedFold, CURVES_FILE, MODEL_FILE};
use fusesurv_core::survival::{binarize_at, concordance_index, roc_auc};
use fusesurv_core::synth::{generate_cohort, SynthConfig};
use fusesurv_core::Error;

pub const SEED_ENV: &str = "PROFUSE_SEED";
pub const CONFIG_ECHO: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.json";
pub const GRID_FILE: &str = "grid.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// 2 for usage and configuration problems, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(Error::Config(_) | Error::Schema(_) | Error::InvalidFoldCount(_)) => 2,
            CliError::Core(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "fusesurv", version, about = "Multimodal Cox survival models: synthetic cohorts, training, nested CV, prediction")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// Run configuration (TOML); built-in defaults otherwise.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Data directory (clinical.csv, labels.csv, pathology/, radiology/).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Output directory, or output file for predict and evaluate.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides PROFUSE_SEED, which overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for fold jobs; defaults to the number of folds.
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    pub parallelism: Option<u32>,
    /// 0 warnings only, 1 one line per epoch, 2 debug.
    #[arg(long, global = true, default_value_t = 0)]
    pub verbosity: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic cohort with known ground truth.
    Synth(SynthArgs),
    /// k-fold training (9 folds by default); one model bundle per fold.
    Train,
    /// Nested cross-validation with the late/intermediate aggregation grid.
    Cv,
    /// Ensemble prediction from a train output directory.
    Predict(PredictArgs),
    /// C-index (and optionally AUC) of a predictions file against labels.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    /// 1024-wide pathology and 65536-wide radiology rows.
    Full,
    /// 32-wide pathology and 48-wide radiology rows.
    Desk,
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, default_value_t = 4.0)]
    pub snr: f64,
    /// Target censored fraction in [0, 1).
    #[arg(long, default_value_t = 0.3)]
    pub censoring: f64,
    /// Weight of the pathology-radiology latent product in the true log-risk.
    #[arg(long, default_value_t = 0.0)]
    pub interaction: f64,
    #[arg(long, value_enum, default_value_t = Scale::Full)]
    pub scale: Scale,
    /// Independent subjects under the same signal directions.
    #[arg(long, default_value_t = 0)]
    pub subject_stream: u64,
    #[arg(long, default_value = "case_")]
    pub id_prefix: String,
    /// Shuffle labels across subjects with this seed (null cohort).
    #[arg(long)]
    pub permute_labels: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct PredictArgs {
    /// Output directory of a train run.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Also report AUC for recurrence within this many months.
    #[arg(long)]
    pub binarize_months: Option<f64>,
}

/// Flag beats environment beats config.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: u64) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) => v.trim().parse().map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        None => Ok(config),
    }
}

fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

/// Config with the seed and data path resolved, plus the directory that
/// relative config paths refer to.
fn resolve_config(global: &GlobalArgs) -> CliResult<(RunConfig, PathBuf)> {
    let (mut run, base) = match &global.config {
        Some(p) => (RunConfig::load(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
        None => (RunConfig::default(), PathBuf::new()),
    };
    run.training.seed = resolve_seed(global.seed, env_seed().as_deref(), run.training.seed)?;
    if let Some(d) = &global.data {
        run.data.path = Some(d.clone());
    } else if let Some(d) = &run.data.path {
        run.data.path = Some(base.join(d));
    }
    Ok((run, base))
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a PathBuf> {
    value.as_ref().ok_or_else(|| CliError::Usage(format!("missing --{flag}")))
}

fn data_dir(run: &RunConfig) -> CliResult<PathBuf> {
    run.data.path.clone().ok_or_else(|| CliError::Usage("no data directory: pass --data or set data.path".into()))
}

fn load_cohort(dir: &Path) -> CliResult<Cohort> {
    let cohort = Cohort::load(dir)?;
    if cohort.is_empty() {
        return Err(CliError::Usage(format!("{} holds no subjects", dir.display())));
    }
    Ok(cohort)
}

fn in_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Core(Error::Config(format!("thread pool: {e}"))))?;
    Ok(pool.install(job))
}

#[derive(Serialize)]
struct RunMetrics<'a> {
    c_index_mean: f64,
    c_index_sigma: f64,
    per_fold: &'a [f64],
    fold_ids: Vec<&'a str>,
    model: &'a str,
    seed: u64,
    config: &'a RunConfig,
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn write_run(out: &Path, run: &RunConfig, plan: &FoldPlan, folds: &[TrainedFold], summary: &MetricsSummary, model: &str) -> CliResult<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_ECHO), run.to_toml_string())?;
    for fold in folds {
        let dir = out.join(&fold.model.id);
        fold.model.save(&dir)?;
        write_curves_csv(&dir.join(CURVES_FILE), &fold.curves.fusion)?;
        write_curves_csv(&dir.join("pathology_curves.csv"), &fold.curves.pathology)?;
        write_curves_csv(&dir.join("radiology_curves.csv"), &fold.curves.radiology)?;
        if !fold.curves.fusion_without_radiology.is_empty() {
            write_curves_csv(&dir.join("fusion_without_radiology_curves.csv"), &fold.curves.fusion_without_radiology)?;
        }
    }
    let fold_ids = if summary.per_fold.len() == plan.splits.len() {
        plan.splits.iter().map(|s| s.id.as_str()).collect()
    } else {
        Vec::new()
    };
    let metrics = RunMetrics {
        c_index_mean: summary.mean,
        c_index_sigma: summary.sigma,
        per_fold: &summary.per_fold,
        fold_ids,
        model,
        seed: run.training.seed,
        config: run,
    };
    write_json(&out.join(METRICS_FILE), &metrics)
}

pub fn cmd_synth(global: &GlobalArgs, args: &SynthArgs) -> CliResult<()> {
    let out = require(&global.out, "out")?;
    let config_seed = match &global.config {
        Some(p) => RunConfig::load(p)?.training.seed,
        None => 0,
    };
    let seed = resolve_seed(global.seed, env_seed().as_deref(), config_seed)?;
    let n = args.n as usize;
    let base = match args.scale {
        Scale::Full => SynthConfig { n_subjects: n, seed, ..SynthConfig::default() },
        Scale::Desk => SynthConfig::desk(n, seed),
    };
    let config = SynthConfig {
        signal_to_noise: args.snr,
        censoring_rate_target: args.censoring,
        interaction_weight: args.interaction,
        subject_stream: args.subject_stream,
        id_prefix: args.id_prefix.clone(),
        ..base
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut cohort = generate_cohort(&config)?;
    if let Some(s) = args.permute_labels {
        cohort = cohort.with_permuted_labels(s);
    }
    save_synthetic(out, &cohort)?;
    log::info!("wrote {} subjects to {} (censored fraction {:.3})", cohort.len(), out.display(), cohort.censored_fraction());
    Ok(())
}

pub fn cmd_train(global: &GlobalArgs) -> CliResult<()> {
    let (run, base) = resolve_config(global)?;
    let out = require(&global.out, "out")?;
    let cohort = load_cohort(&data_dir(&run)?)?;
    let schema = run.schema(&base)?;
    let threads = global.parallelism.map_or(run.cv.k, |p| p as usize);
    let result = in_pool(threads, || train_kfold(&cohort, &schema, &run))??;
    let label = format!("{:?}", run.fusion.kind).to_lowercase();
    write_run(out, &run, &result.plan, &result.folds, &result.summary, &label)?;
    log::info!("{}-fold C-index {:.4} ± {:.4}", run.cv.k, result.summary.mean, result.summary.sigma);
    Ok(())
}

pub fn cmd_cv(global: &GlobalArgs) -> CliResult<()> {
    let (run, base) = resolve_config(global)?;
    let out = require(&global.out, "out")?;
    let cohort = load_cohort(&data_dir(&run)?)?;
    let schema = run.schema(&base)?;
    let threads = global.parallelism.map_or(run.cv.outer_k * run.cv.inner_k, |p| p as usize);
    let result = in_pool(threads, || run_nested_grid(&cohort, &schema, &run))??;
    write_run(out, &run, &result.plan, &result.folds, &result.headline, &result.headline_label)?;
    let mut grid = Vec::new();
    result.write_grid_csv(&mut grid)?;
    fs::write(out.join(GRID_FILE), grid)?;
    log::info!("{}: C-index {:.4} ± {:.4}", result.headline_label, result.headline.mean, result.headline.sigma);
    Ok(())
}

/// Fold directories of a train run, in fold order.
pub fn fold_dirs(model_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(model_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MODEL_FILE).is_file())
        .collect();
    // fold2 before fold10
    dirs.sort_by_key(|p| {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        (name.len(), name)
    });
    if dirs.is_empty() {
        return Err(CliError::Core(Error::Format(format!("no fold checkpoints under {}", model_dir.display()))));
    }
    Ok(dirs)
}

pub fn cmd_predict(global: &GlobalArgs, args: &PredictArgs) -> CliResult<()> {
    let out = require(&global.out, "out")?;
    let run = match &global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::load(&args.model.join(CONFIG_ECHO))?,
    };
    let data = require(&global.data, "data")?;
    let cohort = load_cohort(data)?;
    let models: Vec<FoldModel> = fold_dirs(&args.model)?.iter().map(|d| FoldModel::load(d)).collect::<Result<_, _>>()?;
    let refs: Vec<&FoldModel> = models.iter().collect();
    let threads = global.parallelism.map_or(models.len(), |p| p as usize);
    let predictions = in_pool(threads, || predict(&refs, &cohort, &run.fusion))??;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_predictions_csv(out, &predictions)?;
    Ok(())
}

#[derive(Serialize)]
struct EvaluationMetrics {
    c_index: f64,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    binarize_months: Option<f64>,
    /// Subjects with a defined binary label at the threshold.
    #[serde(skip_serializing_if = "Option::is_none")]
    auc_n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    auc: Option<f64>,
}

pub fn cmd_evaluate(global: &GlobalArgs, args: &EvaluateArgs) -> CliResult<()> {
    let out = require(&global.out, "out")?;
    let predictions = read_predictions_csv(&args.predictions)?;
    let ids: Vec<String> = predictions.iter().map(|p| p.case_id.clone()).collect();
    let labels = match_labels(&ids, read_labels_csv(&args.labels)?)?;
    let log_risks: Vec<f64> = predictions.iter().map(|p| p.log_risk).collect();
    let c_index = concordance_index(&log_risks, &labels)?;
    let (auc_n, auc) = match args.binarize_months {
        Some(m) => {
            let (scores, binary): (Vec<f64>, Vec<bool>) =
                binarize_at(&labels, m).iter().zip(&log_risks).filter_map(|(b, &s)| b.map(|b| (s, b))).unzip();
            match roc_auc(&scores, &binary) {
                Ok(auc) => (Some(scores.len()), Some(auc)),
                Err(Error::DegenerateLabels) => {
                    log::warn!("AUC undefined at {m} months: only one class among {} subjects", scores.len());
                    (Some(scores.len()), None)
                }
                Err(e) => return Err(e.into()),
            }
        }
        None => (None, None),
    };
    let metrics = EvaluationMetrics { c_index, n: labels.len(), binarize_months: args.binarize_months, auc_n, auc };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_json(out, &metrics)?;
    log::info!("c_index {}", format_significant(c_index, 6));
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(&cli.global, a),
        Command::Train => cmd_train(&cli.global),
        Command::Cv => cmd_cv(&cli.global),
        Command::Predict(a) => cmd_predict(&cli.global, a),
        Command::Evaluate(a) => cmd_evaluate(&cli.global, a),
    }
}
