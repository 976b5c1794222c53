//! Command-line workflows: corpus generation, training, conditional
//! synthesis, augmentation, and evaluation.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime/numerical error.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{Duration, NaiveDate};
use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use loadsynth::checkpoint::{Checkpoint, CheckpointError, CustomerState};
use loadsynth::config::{ConfigError, RunConfig};
use loadsynth::data::{self, DataError};
use loadsynth::diffusion::{self, DiffusionError, TrainOptions};
use loadsynth::metrics::{self, AugmentationMetrics, ForecasterConfig, MetricsError};
use loadsynth::seed;
use loadsynth::tensor::TensorError;
use loadsynth::{Condition, DailyProfile};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(e) => CliError::Runtime(format!("config: {e}")),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(e) => CliError::Runtime(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<DiffusionError> for CliError {
    fn from(e: DiffusionError) -> Self {
        match &e {
            DiffusionError::NonFiniteLoss { .. } | DiffusionError::Tensor(_) => {
                CliError::Runtime(e.to_string())
            }
            DiffusionError::Data(inner) => match inner {
                DataError::Io(_) => CliError::Runtime(e.to_string()),
                _ => CliError::Validation(e.to_string()),
            },
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Divergence(_) | MetricsError::Tensor(_) | MetricsError::Io(_) => {
                CliError::Runtime(e.to_string())
            }
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(e) => CliError::Runtime(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "loadsynth",
    version,
    about = "Synthesize per-customer daily electricity load profiles with a conditional denoising-diffusion model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run-configuration file; command-line flags override its values
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; all randomness derives from it through named sub-streams
    #[arg(long, default_value_t = 0, value_name = "N")]
    seed: u64,
    /// Output directory (created if missing)
    #[arg(long, default_value = ".", value_name = "DIR")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a parametric synthetic smart-meter corpus CSV
    GenCorpus {
        #[command(flatten)]
        common: Common,
        /// Number of synthetic customers
        #[arg(long, default_value_t = 10)]
        customers: usize,
        /// Days of history per customer
        #[arg(long, default_value_t = 365)]
        days: usize,
    },
    /// Train a conditional diffusion model and write a checkpoint
    Train {
        #[command(flatten)]
        common: Common,
        /// Input readings CSV (customer_id,timestamp,kwh)
        #[arg(long, value_name = "FILE", conflicts_with = "synthetic")]
        data: Option<PathBuf>,
        /// Train on a generated synthetic corpus instead of a CSV
        #[arg(long)]
        synthetic: bool,
        /// Synthetic corpus: number of customers
        #[arg(long, default_value_t = 4, requires = "synthetic")]
        customers: usize,
        /// Synthetic corpus: days per customer
        #[arg(long, default_value_t = 120, requires = "synthetic")]
        days: usize,
        /// Restrict training to these customers (repeatable)
        #[arg(long = "customer", value_name = "ID")]
        customer_filter: Vec<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        t_max: Option<usize>,
        #[arg(long)]
        d_model: Option<usize>,
        #[arg(long)]
        n_layers: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Ablation: replace self-attention with a recurrent block
        #[arg(long)]
        no_attention: bool,
        /// Ablation: read the output head from the last layer only
        #[arg(long)]
        no_skip: bool,
    },
    /// Synthesize profiles for one customer over a date range
    Synthesize {
        #[command(flatten)]
        common: Common,
        /// Trained checkpoint file
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, value_name = "ID")]
        customer: String,
        #[arg(long, value_name = "YYYY-MM-DD")]
        start_date: NaiveDate,
        /// Number of consecutive days to synthesize
        #[arg(long, default_value_t = 1)]
        days: usize,
        /// JSON condition for a customer unknown to the checkpoint
        /// (normalization stats + typical load)
        #[arg(long, value_name = "FILE")]
        condition_file: Option<PathBuf>,
    },
    /// Synthesize `factor` replicas of every profile in one split
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Original readings CSV to draw (customer, date) keys from
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Replicas per (customer, date)
        #[arg(long, default_value_t = 50)]
        factor: usize,
        /// Which chronological split to augment
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
    },
    /// Score synthetic or augmented data against real data
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Generation mode: real profiles CSV
        #[arg(long, value_name = "FILE")]
        real: Option<PathBuf>,
        /// Generation mode: synthesized profiles CSV (paired by customer and date)
        #[arg(long, value_name = "FILE")]
        synthetic: Option<PathBuf>,
        /// Augmentation mode: original readings CSV (split internally)
        #[arg(long, value_name = "FILE")]
        data: Option<PathBuf>,
        /// Augmentation mode: augmented training-split CSV
        #[arg(long, value_name = "FILE")]
        augmented: Option<PathBuf>,
        /// Augmentation mode: augmented validation-split CSV
        #[arg(long, value_name = "FILE")]
        augmented_val: Option<PathBuf>,
        /// Augmentation mode: training epochs for the baseline forecaster
        #[arg(long, default_value_t = 100)]
        forecaster_epochs: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Generation,
    Augmentation,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenCorpus {
            common,
            customers,
            days,
        } => cmd_gen_corpus(&common, customers, days),
        Command::Train {
            common,
            data,
            synthetic,
            customers,
            days,
            customer_filter,
            epochs,
            batch_size,
            t_max,
            d_model,
            n_layers,
            learning_rate,
            no_attention,
            no_skip,
        } => {
            let mut config = load_config(&common)?;
            if let Some(v) = epochs {
                config.epochs = v;
            }
            if let Some(v) = batch_size {
                config.batch_size = v;
            }
            if let Some(v) = t_max {
                config.t_max = v;
            }
            if let Some(v) = d_model {
                config.estimator.d_model = v;
            }
            if let Some(v) = n_layers {
                config.estimator.n_layers = v;
            }
            if let Some(v) = learning_rate {
                config.learning_rate = v;
            }
            if no_attention {
                config.estimator.use_attention = false;
            }
            if no_skip {
                config.estimator.use_skip_connections = false;
            }
            config.validate()?;
            cmd_train(
                &common,
                config,
                data.as_deref(),
                synthetic.then_some((customers, days)),
                &customer_filter,
            )
        }
        Command::Synthesize {
            common,
            model,
            customer,
            start_date,
            days,
            condition_file,
        } => cmd_synthesize(
            &common,
            &model,
            &customer,
            start_date,
            days,
            condition_file.as_deref(),
        ),
        Command::Augment {
            common,
            model,
            data,
            factor,
            split,
        } => cmd_augment(&common, &model, &data, factor, split),
        Command::Evaluate {
            common,
            mode,
            real,
            synthetic,
            data,
            augmented,
            augmented_val,
            forecaster_epochs,
        } => match mode {
            Mode::Generation => {
                let real = require(real, "--real is required in generation mode")?;
                let synthetic =
                    require(synthetic, "--synthetic is required in generation mode")?;
                cmd_evaluate_generation(&common, &real, &synthetic)
            }
            Mode::Augmentation => {
                let data = require(data, "--data is required in augmentation mode")?;
                let augmented =
                    require(augmented, "--augmented is required in augmentation mode")?;
                let augmented_val = require(
                    augmented_val,
                    "--augmented-val is required in augmentation mode",
                )?;
                cmd_evaluate_augmentation(
                    &common,
                    &data,
                    &augmented,
                    &augmented_val,
                    forecaster_epochs,
                )
            }
        },
    }
}

fn require(value: Option<PathBuf>, message: &str) -> Result<PathBuf, CliError> {
    value.ok_or_else(|| CliError::Validation(message.to_string()))
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    match &common.config {
        Some(path) => Ok(RunConfig::from_file(path)?),
        None => Ok(RunConfig::default()),
    }
}

fn out_file(common: &Common, name: &str) -> Result<BufWriter<File>, CliError> {
    std::fs::create_dir_all(&common.out)?;
    Ok(BufWriter::new(File::create(common.out.join(name))?))
}

fn cmd_gen_corpus(common: &Common, customers: usize, days: usize) -> Result<(), CliError> {
    let profiles = data::generate_synthetic_corpus(customers, days, common.seed)?;
    let mut writer = out_file(common, "corpus.csv")?;
    data::write_profiles_csv(&mut writer, &profiles)?;
    writer.flush()?;
    println!(
        "wrote {} ({} customers x {} days)",
        common.out.join("corpus.csv").display(),
        customers,
        days
    );
    Ok(())
}

fn load_profiles(path: &Path) -> Result<Vec<DailyProfile>, CliError> {
    let report = data::ingest_csv(path)?;
    Ok(report.all_profiles())
}

fn cmd_train(
    common: &Common,
    config: RunConfig,
    data_path: Option<&Path>,
    synthetic: Option<(usize, usize)>,
    customer_filter: &[String],
) -> Result<(), CliError> {
    let (mut profiles, dropped) = match (data_path, synthetic) {
        (Some(path), None) => {
            let report = data::ingest_csv(path)?;
            (report.all_profiles(), report.dropped)
        }
        (None, Some((customers, days))) => (
            data::generate_synthetic_corpus(customers, days, common.seed)?,
            Vec::new(),
        ),
        _ => {
            return Err(CliError::Validation(
                "provide exactly one of --data FILE or --synthetic".into(),
            ))
        }
    };
    if !customer_filter.is_empty() {
        profiles.retain(|p| customer_filter.iter().any(|c| c == &p.customer_id));
        if profiles.is_empty() {
            return Err(CliError::Validation(
                "customer filter matched no profiles".into(),
            ));
        }
    }

    let grouped = data::group_by_customer(&profiles);
    let split = data::split_dataset(&grouped, config.split())?;
    let (stats, _floored) = data::compute_stats(&split.train);
    let normalized_train = data::normalize_profiles(&split.train, &stats)?;
    let typical = data::typical_loads(&normalized_train);

    let schedule = config.schedule()?;
    let opts = TrainOptions {
        epochs: config.epochs,
        batch_size: config.batch_size,
        adam: config.adam(),
        master_seed: common.seed,
    };
    let trained = diffusion::train(
        &config.estimator,
        &schedule,
        &normalized_train,
        &typical,
        &opts,
    )?;

    let customers: BTreeMap<String, CustomerState> = stats
        .iter()
        .map(|(id, s)| {
            (
                id.clone(),
                CustomerState {
                    stats: *s,
                    typical_load: typical[id].clone(),
                },
            )
        })
        .collect();
    let checkpoint = Checkpoint {
        config,
        customers,
        params: trained.params,
    };
    std::fs::create_dir_all(&common.out)?;
    checkpoint.save_file(&common.out.join("model.ckpt"))?;

    let mut log = out_file(common, "training_log.csv")?;
    diffusion::write_training_log(&mut log, &trained.epoch_losses)?;
    log.flush()?;

    if !dropped.is_empty() {
        let mut report = out_file(common, "drop_report.csv")?;
        data::write_drop_report(&mut report, &dropped)?;
        report.flush()?;
    }
    println!(
        "trained on {} profiles from {} customers; checkpoint at {}",
        normalized_train.len(),
        checkpoint.customers.len(),
        common.out.join("model.ckpt").display()
    );
    Ok(())
}

fn load_condition_state(
    checkpoint: &Checkpoint,
    customer: &str,
    condition_file: Option<&Path>,
) -> Result<CustomerState, CliError> {
    if let Some(path) = condition_file {
        let file = File::open(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let state: CustomerState = serde_json::from_reader(file)
            .map_err(|e| CliError::Validation(format!("bad condition file: {e}")))?;
        if state.typical_load.len() != loadsynth::SLOTS_PER_DAY {
            return Err(CliError::Validation(format!(
                "condition file typical_load must have {} values",
                loadsynth::SLOTS_PER_DAY
            )));
        }
        return Ok(state);
    }
    checkpoint.customers.get(customer).cloned().ok_or_else(|| {
        CliError::Validation(format!(
            "customer {customer} is unknown to this checkpoint; supply --condition-file with \
             its normalization stats and typical load"
        ))
    })
}

/// All synthesis randomness derives from (master seed, customer, date,
/// replica), so outputs are order-independent and reproducible per task.
fn sample_rng(master: u64, customer: &str, date: NaiveDate, replica: usize) -> seed::ChaCha12Rng {
    let s = seed::derive(master, seed::stream::SAMPLE);
    let s = seed::derive(s, customer);
    let s = seed::derive(s, &date.to_string());
    seed::stream_rng(s, &replica.to_string())
}

fn synthesize_profile(
    checkpoint: &Checkpoint,
    state: &CustomerState,
    customer_id: &str,
    date: NaiveDate,
    rng: &mut seed::ChaCha12Rng,
) -> Result<DailyProfile, CliError> {
    let schedule = checkpoint.config.schedule()?;
    let condition = Condition {
        typical_load: state.typical_load.clone(),
        date,
    };
    let normalized = diffusion::synthesize(
        &checkpoint.config.estimator,
        &checkpoint.params,
        &schedule,
        &condition,
        rng,
    )?;
    // Denormalized readings are physical kW, so negative dips are clipped.
    let values = normalized
        .iter()
        .map(|v| state.stats.denormalize(*v).max(0.0))
        .collect();
    Ok(DailyProfile {
        customer_id: customer_id.to_string(),
        date,
        values,
    })
}

fn cmd_synthesize(
    common: &Common,
    model: &Path,
    customer: &str,
    start_date: NaiveDate,
    days: usize,
    condition_file: Option<&Path>,
) -> Result<(), CliError> {
    if days == 0 {
        return Err(CliError::Validation("--days must be at least 1".into()));
    }
    let checkpoint = Checkpoint::load_file(model)?;
    let state = load_condition_state(&checkpoint, customer, condition_file)?;
    let mut profiles = Vec::with_capacity(days);
    for i in 0..days {
        let date = start_date + Duration::days(i as i64);
        let mut rng = sample_rng(common.seed, customer, date, 0);
        profiles.push(synthesize_profile(&checkpoint, &state, customer, date, &mut rng)?);
    }
    let mut writer = out_file(common, "synthetic.csv")?;
    data::write_profiles_csv(&mut writer, &profiles)?;
    writer.flush()?;
    println!(
        "wrote {} ({} days for {})",
        common.out.join("synthetic.csv").display(),
        days,
        customer
    );
    Ok(())
}

fn cmd_augment(
    common: &Common,
    model: &Path,
    data_path: &Path,
    factor: usize,
    split: SplitArg,
) -> Result<(), CliError> {
    if factor == 0 {
        return Err(CliError::Validation("--factor must be at least 1".into()));
    }
    let checkpoint = Checkpoint::load_file(model)?;
    let profiles = load_profiles(data_path)?;
    let grouped = data::group_by_customer(&profiles);
    let split_set = data::split_dataset(&grouped, checkpoint.config.split())?;
    let source = match split {
        SplitArg::Train => &split_set.train,
        SplitArg::Val => &split_set.validation,
        SplitArg::Test => &split_set.test,
    };
    if source.is_empty() {
        return Err(CliError::Validation("selected split is empty".into()));
    }

    let mut augmented = Vec::with_capacity(source.len() * factor);
    let mut centroids = Vec::with_capacity(source.len());
    for p in source {
        let state = checkpoint.customers.get(&p.customer_id).ok_or_else(|| {
            CliError::Validation(format!(
                "customer {} is unknown to this checkpoint",
                p.customer_id
            ))
        })?;
        let mut centroid = vec![0.0; loadsynth::SLOTS_PER_DAY];
        for k in 0..factor {
            let mut rng = sample_rng(common.seed, &p.customer_id, p.date, k);
            let mut replica =
                synthesize_profile(&checkpoint, state, &p.customer_id, p.date, &mut rng)?;
            for (c, v) in centroid.iter_mut().zip(&replica.values) {
                *c += v / factor as f64;
            }
            // Replica ids keep augmented rows distinct under the
            // (customer, timestamp) uniqueness rule of the ingestion schema.
            replica.customer_id = format!("{}~{k}", p.customer_id);
            augmented.push(replica);
        }
        centroids.push(DailyProfile {
            customer_id: p.customer_id.clone(),
            date: p.date,
            values: centroid,
        });
    }

    let mut writer = out_file(common, "augmented.csv")?;
    data::write_profiles_csv(&mut writer, &augmented)?;
    writer.flush()?;
    let mut writer = out_file(common, "centroids.csv")?;
    data::write_profiles_csv(&mut writer, &centroids)?;
    writer.flush()?;
    println!(
        "wrote {} augmented profiles and {} centroids to {}",
        augmented.len(),
        centroids.len(),
        common.out.display()
    );
    Ok(())
}

fn cmd_evaluate_generation(
    common: &Common,
    real_path: &Path,
    synthetic_path: &Path,
) -> Result<(), CliError> {
    let real = load_profiles(real_path)?;
    let synthetic = load_profiles(synthetic_path)?;
    let report = metrics::generation_report(&real, &synthetic, common.seed)?;

    let mut csv_out = out_file(common, "report.csv")?;
    report.write_csv(&mut csv_out)?;
    csv_out.flush()?;
    let mut json_out = out_file(common, "report.json")?;
    serde_json::to_writer_pretty(&mut json_out, &report)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    json_out.flush()?;
    let mut reduction = out_file(common, "reduction.csv")?;
    metrics::export_reduction_csv(&mut reduction, &real, &synthetic)?;
    reduction.flush()?;

    let mean = &report.aggregate_mean;
    println!(
        "generation metrics over {} customers: rmse {:.6} mae {:.6} mmd {:.6} wd {:.6}",
        report.per_customer.len(),
        mean.rmse,
        mean.mae,
        mean.mmd,
        mean.wd
    );
    Ok(())
}

fn cmd_evaluate_augmentation(
    common: &Common,
    data_path: &Path,
    augmented_path: &Path,
    augmented_val_path: &Path,
    forecaster_epochs: usize,
) -> Result<(), CliError> {
    let profiles = load_profiles(data_path)?;
    let grouped = data::group_by_customer(&profiles);
    let config = load_config(common)?;
    let split = data::split_dataset(&grouped, config.split())?;
    let augmented_train = load_profiles(augmented_path)?;
    let augmented_val = load_profiles(augmented_val_path)?;

    let fc = |label: &str| ForecasterConfig {
        epochs: forecaster_epochs,
        seed: seed::derive(common.seed, label),
        ..ForecasterConfig::default()
    };
    let baseline = metrics::train_forecaster(&split.train, &fc("forecaster-baseline"))?;

    let mut val_prime = split.validation.clone();
    val_prime.extend(augmented_val);
    let affinity = metrics::affinity(&baseline, &split.validation, &val_prime)?;

    let mut train_prime = split.train.clone();
    train_prime.extend(augmented_train);
    let augmented_model = metrics::train_forecaster(&train_prime, &fc("forecaster-augmented"))?;
    let diversity = augmented_model.final_train_loss;

    let baseline_rmse = metrics::forecast_rmse(&baseline, &split.test)?;
    let augmented_rmse = metrics::forecast_rmse(&augmented_model, &split.test)?;
    let report = AugmentationMetrics {
        affinity,
        diversity,
        improvement_percent: metrics::improvement_percent(baseline_rmse, augmented_rmse),
    };

    let mut json_out = out_file(common, "augmentation.json")?;
    serde_json::to_writer_pretty(&mut json_out, &report)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    json_out.flush()?;
    println!(
        "augmentation metrics: affinity {:.6} diversity {:.6} improvement {:.4}%",
        report.affinity, report.diversity, report.improvement_percent
    );
    Ok(())
}
