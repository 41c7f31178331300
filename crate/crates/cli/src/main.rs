mod config;

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mimhd::bundle::{load_bundle, save_bundle};
use mimhd::datasets::{CsvOptions, DatasetRef, DatasetSource, LabelColumn, SplitSource};
use mimhd::experiments::{
    compare_metrics, prepare, run_robustness, run_sweep, write_csv_rows, CompareConfig, EncodingParams,
    ExperimentConfig, RobustnessConfig,
};
use mimhd::hardware::{tile, NoiseTargets};
use mimhd::trainer::{evaluate, evaluate_full_precision, hwart_train, EncodedSet};
use mimhd::{HwartConfig, Metric, Precision, RngSeed};

/// Multi-bit hyperdimensional classification with an in-memory hardware model.
#[derive(Parser, Debug)]
#[command(name = "mimhd", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encode the training split and bundle it into a model file.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Hardware-aware retraining of an existing model file.
    #[command(args_override_self = true)]
    Retrain(RetrainArgs),
    /// Test accuracy of a model file.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Accuracy over every (dataset, D, P, metric) combination.
    #[command(args_override_self = true)]
    Sweep(SweepArgs),
    /// Cosine baseline vs MCAM deployment vs retrained MCAM deployment.
    #[command(args_override_self = true)]
    CompareMetrics(CompareArgs),
    /// Accuracy loss under random bit flips.
    #[command(args_override_self = true)]
    Robustness(RobustnessArgs),
    /// Number of 64x64 arrays needed for a configuration.
    #[command(args_override_self = true)]
    Tile(TileArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Registered dataset: isolet, ucihar, mnist or synthetic.
    #[arg(long, default_value = "synthetic")]
    dataset: String,
    /// Directory holding the registered datasets.
    #[arg(long, env = "MIMHD_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    /// Training split as a delimited file (overrides the registered layout).
    #[arg(long, requires = "test")]
    train: Option<PathBuf>,
    /// Test split as a delimited file.
    #[arg(long, requires = "train")]
    test: Option<PathBuf>,
    /// Zero-based label column of --train/--test files; defaults to the last column.
    #[arg(long)]
    label_column: Option<usize>,
}

impl DataArgs {
    fn dataset_ref(&self) -> Result<DatasetRef> {
        dataset_ref(&self.dataset, &self.data_dir, self.train.as_deref(), self.test.as_deref(), self.label_column)
    }
}

fn dataset_ref(
    name: &str,
    data_dir: &Path,
    train: Option<&Path>,
    test: Option<&Path>,
    label_column: Option<usize>,
) -> Result<DatasetRef> {
    match (train, test) {
        (Some(train), Some(test)) => {
            let options = CsvOptions {
                label_column: label_column.map_or(LabelColumn::Last, LabelColumn::Index),
                ..CsvOptions::default()
            };
            Ok(DatasetRef {
                name: name.to_string(),
                source: DatasetSource::Files {
                    train: SplitSource::Csv {
                        path: train.to_path_buf(),
                        options,
                    },
                    test: SplitSource::Csv {
                        path: test.to_path_buf(),
                        options,
                    },
                },
            })
        }
        _ => Ok(DatasetRef::registered(name, data_dir)?),
    }
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    let bits: u8 = s.trim().parse().map_err(|_| format!("'{s}' is not an integer"))?;
    Precision::new(bits).map_err(|e| e.to_string())
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: mimhd::HdcError| e.to_string())
}

#[derive(Args, Debug, Clone)]
struct EncodingArgs {
    /// Number of level hypervectors.
    #[arg(long, default_value_t = 64)]
    levels: usize,
    /// Precision of the base hypervectors; defaults to the HV precision.
    #[arg(long, value_parser = parse_precision)]
    base_precision: Option<Precision>,
    /// Exponential rate of the MCAM conductance curve.
    #[arg(long, default_value_t = 1.0)]
    mcam_beta: f64,
    /// Saturated MCAM cell conductance.
    #[arg(long, default_value_t = 1.0)]
    mcam_gmax: f64,
}

impl EncodingArgs {
    fn params(&self) -> EncodingParams {
        EncodingParams {
            levels: self.levels,
            base_precision: self.base_precision,
            mcam_beta: self.mcam_beta,
            mcam_gmax: self.mcam_gmax,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct HwartArgs {
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 50)]
    max_epochs: usize,
    /// Consecutive stable epochs before stopping.
    #[arg(long, default_value_t = 3)]
    patience: usize,
    /// Epoch-to-epoch accuracy change treated as stable.
    #[arg(long, default_value_t = 0.001)]
    stability_epsilon: f64,
}

impl HwartArgs {
    fn config(&self, seed: u64) -> HwartConfig {
        HwartConfig {
            eta: self.eta,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            stability_epsilon: self.stability_epsilon,
            seed: RngSeed(seed),
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    encoding: EncodingArgs,
    #[arg(long, default_value_t = 4000)]
    dim: usize,
    #[arg(long, default_value = "3", value_parser = parse_precision)]
    precision: Precision,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model file.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args, Debug)]
struct RetrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hwart: HwartArgs,
    /// Model file to retrain.
    #[arg(long)]
    model: PathBuf,
    /// Where to write the retrained model; defaults to overwriting --model.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "mcam", value_parser = parse_metric)]
    metric: Metric,
    #[arg(long, default_value_t = 1.0)]
    mcam_beta: f64,
    #[arg(long, default_value_t = 1.0)]
    mcam_gmax: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "mcam", value_parser = parse_metric)]
    metric: Metric,
    #[arg(long, default_value_t = 1.0)]
    mcam_beta: f64,
    #[arg(long, default_value_t = 1.0)]
    mcam_gmax: f64,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Registered datasets, comma separated.
    #[arg(long = "dataset", value_delimiter = ',', default_value = "synthetic")]
    datasets: Vec<String>,
    #[arg(long, env = "MIMHD_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    /// Training split file; only valid with a single dataset.
    #[arg(long, requires = "test")]
    train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    test: Option<PathBuf>,
    #[arg(long)]
    label_column: Option<usize>,
    #[command(flatten)]
    encoding: EncodingArgs,
    #[command(flatten)]
    hwart: HwartArgs,
    #[arg(long = "dim", value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    #[arg(long = "precision", value_delimiter = ',', value_parser = parse_precision, default_value = "1,2,3")]
    precisions: Vec<Precision>,
    #[arg(long = "metric", value_delimiter = ',', value_parser = parse_metric, default_value = "mcam")]
    metrics: Vec<Metric>,
    /// Retrain every model with HWART before evaluation.
    #[arg(long)]
    retrain: bool,
    #[arg(long)]
    seed: u64,
    /// Result CSV; `<stem>.meta.json` and `<stem>.timing.csv` are written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    encoding: EncodingArgs,
    #[command(flatten)]
    hwart: HwartArgs,
    #[arg(long, default_value_t = 4000)]
    dim: usize,
    #[arg(long, default_value = "3", value_parser = parse_precision)]
    precision: Precision,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Targets {
    Both,
    Query,
    Class,
}

impl From<Targets> for NoiseTargets {
    fn from(t: Targets) -> Self {
        NoiseTargets {
            encoded_query: matches!(t, Targets::Both | Targets::Query),
            class_hvs: matches!(t, Targets::Both | Targets::Class),
        }
    }
}

#[derive(Args, Debug)]
struct RobustnessArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    encoding: EncodingArgs,
    #[command(flatten)]
    hwart: HwartArgs,
    #[arg(long, default_value_t = 4000)]
    dim: usize,
    #[arg(long, default_value = "3", value_parser = parse_precision)]
    precision: Precision,
    #[arg(long, default_value = "mcam", value_parser = parse_metric)]
    metric: Metric,
    #[arg(long)]
    retrain: bool,
    /// Bit-flip probabilities, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.05,0.1")]
    rates: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, value_enum, default_value_t = Targets::Both)]
    targets: Targets,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Result CSV; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TileArgs {
    /// Number of input features (n).
    #[arg(long)]
    features: usize,
    #[arg(long)]
    dim: usize,
    /// Number of classes (k).
    #[arg(long)]
    classes: usize,
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Serialize)]
struct AccuracyReport {
    dataset: String,
    metric: Metric,
    train_accuracy: f64,
    test_accuracy: f64,
    full_precision_test_accuracy: f64,
}

fn encode_splits(encoder: &mimhd::Encoder, data: &DataArgs) -> Result<(String, EncodedSet, EncodedSet)> {
    let ds = data.dataset_ref()?;
    let (train, test) = ds.load()?;
    let enc = |d: &mimhd::datasets::Dataset| -> Result<EncodedSet> {
        Ok(EncodedSet::new(encoder.encode_batch(d.row_refs())?, d.labels().to_vec())?)
    };
    Ok((ds.name.clone(), enc(&train)?, enc(&test)?))
}

fn cmd_train(args: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let ds = args.data.dataset_ref()?;
    let (train, test) = ds.load()?;
    let params = args.encoding.params();
    let prepared = prepare(&train, &test, args.dim, args.precision, &params, RngSeed(args.seed))?;
    let model = prepared.single_pass()?;
    save_bundle(&args.model, &prepared.encoder, &model)
        .with_context(|| format!("writing {}", args.model.display()))?;
    let kernel = params.kernel(args.precision)?;
    print_json(out, &AccuracyReport {
        dataset: ds.name,
        metric: Metric::Mcam,
        train_accuracy: evaluate(&model, &prepared.train, Metric::Mcam, Some(&kernel))?,
        test_accuracy: evaluate(&model, &prepared.test, Metric::Mcam, Some(&kernel))?,
        full_precision_test_accuracy: evaluate_full_precision(&model, &prepared.test)?,
    })
}

fn cmd_retrain(args: RetrainArgs, out: &mut dyn Write) -> Result<()> {
    let (encoder, mut model) = load_bundle(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let (name, train, test) = encode_splits(&encoder, &args.data)?;
    let kernel = mimhd::McamKernel::for_precision(model.precision(), args.mcam_gmax, args.mcam_beta)?;
    let before = evaluate(&model, &test, args.metric, Some(&kernel))?;
    let report = hwart_train(&mut model, &train, &args.hwart.config(args.seed), args.metric, Some(&kernel))?;
    let after = evaluate(&model, &test, args.metric, Some(&kernel))?;
    let path = args.out.as_ref().unwrap_or(&args.model);
    save_bundle(path, &encoder, &model).with_context(|| format!("writing {}", path.display()))?;

    #[derive(Serialize)]
    struct Report {
        dataset: String,
        metric: Metric,
        test_accuracy_before: f64,
        test_accuracy_after: f64,
        training: mimhd::trainer::TrainReport,
    }
    print_json(out, &Report {
        dataset: name,
        metric: args.metric,
        test_accuracy_before: before,
        test_accuracy_after: after,
        training: report,
    })
}

fn cmd_eval(args: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (encoder, model) = load_bundle(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let (name, train, test) = encode_splits(&encoder, &args.data)?;
    let kernel = mimhd::McamKernel::for_precision(model.precision(), args.mcam_gmax, args.mcam_beta)?;
    print_json(out, &AccuracyReport {
        dataset: name,
        metric: args.metric,
        train_accuracy: evaluate(&model, &train, args.metric, Some(&kernel))?,
        test_accuracy: evaluate(&model, &test, args.metric, Some(&kernel))?,
        full_precision_test_accuracy: evaluate_full_precision(&model, &test)?,
    })
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    if args.train.is_some() && args.datasets.len() != 1 {
        bail!("--train/--test can only be combined with a single --dataset");
    }
    let datasets = args
        .datasets
        .iter()
        .map(|name| {
            dataset_ref(
                name,
                &args.data_dir,
                args.train.as_deref(),
                args.test.as_deref(),
                args.label_column,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = ExperimentConfig {
        datasets,
        dims: args.dims,
        precisions: args.precisions,
        metrics: args.metrics,
        seed: RngSeed(args.seed),
        retrain: args.retrain,
        hwart: args.hwart.config(args.seed),
        encoding: args.encoding.params(),
    };
    let rows = run_sweep(&cfg, Some(&args.out))?;
    log::info!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(())
}

fn cmd_compare(args: CompareArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = CompareConfig {
        dataset: args.data.dataset_ref()?,
        dim: args.dim,
        precision: args.precision,
        seed: RngSeed(args.seed),
        hwart: args.hwart.config(args.seed),
        encoding: args.encoding.params(),
    };
    let report = compare_metrics(&cfg)?;
    if let Some(path) = &args.out {
        let mut f = File::create(path).with_context(|| format!("writing {}", path.display()))?;
        serde_json::to_writer_pretty(&mut f, &report)?;
        writeln!(f)?;
    }
    print_json(out, &report)
}

fn cmd_robustness(args: RobustnessArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = RobustnessConfig {
        dataset: args.data.dataset_ref()?,
        dim: args.dim,
        precision: args.precision,
        metric: args.metric,
        retrain: args.retrain,
        rates: args.rates,
        trials: args.trials,
        targets: args.targets.into(),
        seed: RngSeed(args.seed),
        hwart: args.hwart.config(args.seed),
        encoding: args.encoding.params(),
    };
    let rows = run_robustness(&cfg)?;
    match &args.out {
        Some(path) => write_csv_rows(path, &rows)?,
        None => {
            let mut w = csv::Writer::from_writer(out);
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn run(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(a, out),
        Command::Retrain(a) => cmd_retrain(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Sweep(a) => cmd_sweep(a),
        Command::CompareMetrics(a) => cmd_compare(a, out),
        Command::Robustness(a) => cmd_robustness(a, out),
        Command::Tile(a) => print_json(out, &tile(a.features, a.dim, a.classes)?),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = config::expand_args(std::env::args_os().collect())?;
    let cli = Cli::parse_from(args);
    let stdout = io::stdout();
    run(cli.command, &mut stdout.lock())
}
