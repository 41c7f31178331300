//! Experiment drivers: encode/train/evaluate pipelines, parameter sweeps,
//! metric comparisons and robustness runs, with CSV result files.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::datasets::{normalize, Dataset, DatasetRef};
use crate::encoder::{Encoder, EncoderConfig, DEFAULT_LEVELS};
use crate::error::{HdcError, Result};
use crate::hardware::{robustness_experiment, tile, NoiseTargets, RobustnessRow};
use crate::hv::{Precision, RngSeed};
use crate::similarity::{McamKernel, Metric, DEFAULT_MCAM_BETA, DEFAULT_MCAM_GMAX};
use crate::trainer::{
    evaluate, evaluate_full_precision, hwart_train, train_single_pass_with_classes, EncodedSet, HwartConfig, Model,
    TrainReport,
};

const HWART_STREAM: u64 = 0x4857;
const NOISE_STREAM: u64 = 0x4e4f;

/// Encoder settings shared by every experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingParams {
    pub levels: usize,
    /// Overrides the base-HV precision; `None` uses the HV precision.
    pub base_precision: Option<Precision>,
    pub mcam_beta: f64,
    pub mcam_gmax: f64,
}

impl Default for EncodingParams {
    fn default() -> Self {
        EncodingParams {
            levels: DEFAULT_LEVELS,
            base_precision: None,
            mcam_beta: DEFAULT_MCAM_BETA,
            mcam_gmax: DEFAULT_MCAM_GMAX,
        }
    }
}

impl EncodingParams {
    pub fn kernel(&self, precision: Precision) -> Result<McamKernel> {
        McamKernel::for_precision(precision, self.mcam_gmax, self.mcam_beta)
    }
}

/// An encoder fitted to a training split, with both splits encoded.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub encoder: Encoder,
    pub train: EncodedSet,
    pub test: EncodedSet,
    pub classes: Vec<u32>,
}

/// Fits the feature quantizer on `train`, generates tables, calibrates the
/// ADC on `train` and encodes both splits.
pub fn prepare(
    train: &Dataset,
    test: &Dataset,
    dim: usize,
    precision: Precision,
    params: &EncodingParams,
    seed: RngSeed,
) -> Result<Prepared> {
    let (_, quantizer) = normalize(train, params.levels)?;
    let mut cfg = EncoderConfig::new(dim, precision, train.n_features(), seed);
    cfg.levels = params.levels;
    cfg.base_precision = params.base_precision.unwrap_or(precision);
    let mut encoder = Encoder::generate(cfg, quantizer)?;
    encoder.calibrate_adc(&train.row_refs())?;
    let train_set = EncodedSet::new(encoder.encode_batch(train.row_refs())?, train.labels().to_vec())?;
    let test_set = EncodedSet::new(encoder.encode_batch(test.row_refs())?, test.labels().to_vec())?;
    let mut classes = train.classes();
    classes.extend(test.classes());
    classes.sort_unstable();
    classes.dedup();
    Ok(Prepared {
        encoder,
        train: train_set,
        test: test_set,
        classes,
    })
}

impl Prepared {
    pub fn single_pass(&self) -> Result<Model> {
        train_single_pass_with_classes(&self.train, &self.classes, self.encoder.config().precision)
    }
}

/// One sweep configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetRef>,
    pub dims: Vec<usize>,
    pub precisions: Vec<Precision>,
    pub metrics: Vec<Metric>,
    pub seed: RngSeed,
    pub retrain: bool,
    pub hwart: HwartConfig,
    pub encoding: EncodingParams,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() || self.dims.is_empty() || self.precisions.is_empty() || self.metrics.is_empty() {
            return Err(HdcError::InvalidConfig(
                "datasets, dimensions, precisions and metrics must all be non-empty".into(),
            ));
        }
        if let Some(&d) = self.dims.iter().find(|&&d| d < self.encoding.levels) {
            return Err(HdcError::InvalidConfig(format!(
                "dimension {d} is smaller than the level count {}",
                self.encoding.levels
            )));
        }
        self.hwart.validate()?;
        self.encoding.kernel(Precision::ONE)?;
        Ok(())
    }

    fn hwart_for(&self) -> HwartConfig {
        HwartConfig {
            seed: self.seed.derive(HWART_STREAM),
            ..self.hwart.clone()
        }
    }
}

/// One line of a sweep result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub dim: usize,
    pub precision: u8,
    pub metric: Metric,
    pub retrained: bool,
    pub seed: u64,
    pub levels: usize,
    pub accuracy: f64,
    pub epochs: usize,
    pub crossbar_arrays: usize,
    pub mcam_arrays: usize,
    pub adc_conversions: usize,
}

/// Appends rows to a CSV file as they are produced. Wall times go to a
/// separate `<stem>.timing.csv` so the result rows stay reproducible.
pub struct ResultWriter {
    rows: csv::Writer<File>,
    timing: File,
}

impl ResultWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let rows = csv::Writer::from_writer(File::create(path)?);
        let mut timing = File::create(sidecar(path, "timing.csv"))?;
        writeln!(timing, "dataset,dim,precision,metric,wall_time_ms")?;
        Ok(ResultWriter { rows, timing })
    }

    pub fn append(&mut self, row: &ResultRow, wall: Duration) -> Result<()> {
        self.rows.serialize(row)?;
        self.rows.flush()?;
        writeln!(
            self.timing,
            "{},{},{},{},{}",
            row.dataset,
            row.dim,
            row.precision,
            row.metric,
            wall.as_millis()
        )?;
        Ok(())
    }
}

/// `results.csv` -> `results.<suffix>`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(HdcError::from)).collect()
}

fn write_metadata<T: Serialize>(out: &Path, cfg: &T) -> Result<()> {
    let mut f = File::create(sidecar(out, "meta.json"))?;
    serde_json::to_writer_pretty(&mut f, cfg)?;
    writeln!(f)?;
    Ok(())
}

/// Runs every (dataset, D, P, metric) combination in lexicographic order.
///
/// All dataset files are checked before any training starts. When `out` is
/// given, rows are flushed as each combination finishes and the full
/// configuration is written to `<stem>.meta.json`.
pub fn run_sweep(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    for ds in &cfg.datasets {
        ds.ensure_present()?;
    }
    let mut datasets = cfg.datasets.clone();
    datasets.sort_by(|a, b| a.name.cmp(&b.name));
    let mut dims = cfg.dims.clone();
    dims.sort_unstable();
    dims.dedup();
    let mut precisions = cfg.precisions.clone();
    precisions.sort_unstable();
    precisions.dedup();
    let mut metrics = cfg.metrics.clone();
    metrics.sort_unstable();
    metrics.dedup();

    let mut writer = match out {
        Some(path) => {
            let w = ResultWriter::create(path)?;
            write_metadata(path, cfg)?;
            Some(w)
        }
        None => None,
    };
    let hwart = cfg.hwart_for();
    let mut rows = Vec::new();
    for ds in &datasets {
        let (train, test) = ds.load()?;
        for &dim in &dims {
            for &p in &precisions {
                let started = Instant::now();
                let prepared = prepare(&train, &test, dim, p, &cfg.encoding, cfg.seed)?;
                let base = prepared.single_pass()?;
                let kernel = cfg.encoding.kernel(p)?;
                let tiling = tile(train.n_features(), dim, prepared.classes.len())?;
                let prep_time = started.elapsed();
                for &metric in &metrics {
                    let t0 = Instant::now();
                    let mut model = base.clone();
                    let mut epochs = 0;
                    if cfg.retrain {
                        epochs = hwart_train(&mut model, &prepared.train, &hwart, metric, Some(&kernel))?.epochs;
                    }
                    let accuracy = evaluate(&model, &prepared.test, metric, Some(&kernel))?;
                    let row = ResultRow {
                        dataset: ds.name.clone(),
                        dim,
                        precision: p.bits(),
                        metric,
                        retrained: cfg.retrain,
                        seed: cfg.seed.0,
                        levels: cfg.encoding.levels,
                        accuracy,
                        epochs,
                        crossbar_arrays: tiling.crossbar_arrays,
                        mcam_arrays: tiling.mcam_arrays,
                        adc_conversions: tiling.adc_conversions_per_encode,
                    };
                    log::info!(
                        "{} D={dim} P={p} {metric}{}: accuracy {accuracy:.4}",
                        ds.name,
                        if cfg.retrain { " +hwart" } else { "" }
                    );
                    if let Some(w) = writer.as_mut() {
                        w.append(&row, prep_time + t0.elapsed())?;
                    }
                    rows.push(row);
                }
            }
        }
    }
    Ok(rows)
}

/// Accuracy of a cosine-trained model under cosine and MCAM search, and of
/// the retrained model under MCAM search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub dataset: String,
    pub dim: usize,
    pub precision: u8,
    pub seed: u64,
    /// Non-quantized model, cosine search.
    pub cosine_baseline: f64,
    /// Single-pass model quantized to `P` bits, MCAM search.
    pub mcam_single_pass: f64,
    /// Retrained model, MCAM search.
    pub mcam_retrained: f64,
    pub loss_without_retraining: f64,
    pub loss_with_retraining: f64,
    pub retrain_report: TrainReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub dataset: DatasetRef,
    pub dim: usize,
    pub precision: Precision,
    pub seed: RngSeed,
    pub hwart: HwartConfig,
    pub encoding: EncodingParams,
}

pub fn compare_metrics(cfg: &CompareConfig) -> Result<MetricComparison> {
    cfg.dataset.ensure_present()?;
    cfg.hwart.validate()?;
    let (train, test) = cfg.dataset.load()?;
    let prepared = prepare(&train, &test, cfg.dim, cfg.precision, &cfg.encoding, cfg.seed)?;
    compare_prepared(&cfg.dataset.name, &prepared, cfg)
}

pub fn compare_prepared(name: &str, prepared: &Prepared, cfg: &CompareConfig) -> Result<MetricComparison> {
    let kernel = cfg.encoding.kernel(cfg.precision)?;
    let base = prepared.single_pass()?;
    let cosine_baseline = evaluate_full_precision(&base, &prepared.test)?;
    let mcam_single_pass = evaluate(&base, &prepared.test, Metric::Mcam, Some(&kernel))?;
    let mut retrained = base;
    let hwart = HwartConfig {
        seed: cfg.seed.derive(HWART_STREAM),
        ..cfg.hwart.clone()
    };
    let retrain_report = hwart_train(&mut retrained, &prepared.train, &hwart, Metric::Mcam, Some(&kernel))?;
    let mcam_retrained = evaluate(&retrained, &prepared.test, Metric::Mcam, Some(&kernel))?;
    Ok(MetricComparison {
        dataset: name.to_string(),
        dim: cfg.dim,
        precision: cfg.precision.bits(),
        seed: cfg.seed.0,
        cosine_baseline,
        mcam_single_pass,
        mcam_retrained,
        loss_without_retraining: cosine_baseline - mcam_single_pass,
        loss_with_retraining: cosine_baseline - mcam_retrained,
        retrain_report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessConfig {
    pub dataset: DatasetRef,
    pub dim: usize,
    pub precision: Precision,
    pub metric: Metric,
    pub retrain: bool,
    pub rates: Vec<f64>,
    pub trials: usize,
    pub targets: NoiseTargets,
    pub seed: RngSeed,
    pub hwart: HwartConfig,
    pub encoding: EncodingParams,
}

pub fn run_robustness(cfg: &RobustnessConfig) -> Result<Vec<RobustnessRow>> {
    cfg.dataset.ensure_present()?;
    let (train, test) = cfg.dataset.load()?;
    let prepared = prepare(&train, &test, cfg.dim, cfg.precision, &cfg.encoding, cfg.seed)?;
    robustness_prepared(&prepared, cfg)
}

pub fn robustness_prepared(prepared: &Prepared, cfg: &RobustnessConfig) -> Result<Vec<RobustnessRow>> {
    let kernel = cfg.encoding.kernel(cfg.precision)?;
    let mut model = prepared.single_pass()?;
    if cfg.retrain {
        let hwart = HwartConfig {
            seed: cfg.seed.derive(HWART_STREAM),
            ..cfg.hwart.clone()
        };
        hwart_train(&mut model, &prepared.train, &hwart, cfg.metric, Some(&kernel))?;
    }
    robustness_experiment(
        &model,
        &prepared.test,
        cfg.metric,
        Some(&kernel),
        &cfg.rates,
        cfg.trials,
        cfg.targets,
        cfg.seed.derive(NOISE_STREAM),
    )
}

/// Writes any serializable rows as CSV with a header line.
pub fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(OpenOptions::new().create(true).write(true).truncate(true).open(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{DatasetSource, SyntheticSpec};

    fn synthetic_ref() -> DatasetRef {
        DatasetRef {
            name: "synthetic".into(),
            source: DatasetSource::Synthetic(SyntheticSpec {
                features: 16,
                classes: 4,
                train: 200,
                test: 80,
                ..SyntheticSpec::default()
            }),
        }
    }

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            datasets: vec![synthetic_ref()],
            dims: vec![256],
            precisions: vec![Precision::TWO],
            metrics: vec![Metric::Mcam],
            seed: RngSeed(5),
            retrain: true,
            hwart: HwartConfig {
                max_epochs: 3,
                ..HwartConfig::default()
            },
            encoding: EncodingParams::default(),
        }
    }

    #[test]
    fn one_combination_one_row() {
        let rows = run_sweep(&small_cfg(), None).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((0.0..=1.0).contains(&rows[0].accuracy));
    }

    #[test]
    fn sweep_rows_are_lexicographic_and_persisted() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("r.csv");
        let cfg = ExperimentConfig {
            dims: vec![256, 128],
            metrics: vec![Metric::Mcam, Metric::Cosine],
            retrain: false,
            ..small_cfg()
        };
        let rows = run_sweep(&cfg, Some(&out)).unwrap();
        let keys: Vec<_> = rows.iter().map(|r| (r.dim, r.metric)).collect();
        assert_eq!(
            keys,
            vec![(128, Metric::Cosine), (128, Metric::Mcam), (256, Metric::Cosine), (256, Metric::Mcam)]
        );
        assert_eq!(read_results(&out).unwrap(), rows);
        assert!(sidecar(&out, "meta.json").is_file());
        assert!(sidecar(&out, "timing.csv").is_file());
    }

    #[test]
    fn missing_dataset_fails_before_training() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            datasets: vec![synthetic_ref(), DatasetRef::registered("isolet", dir.path()).unwrap()],
            ..small_cfg()
        };
        let out = dir.path().join("r.csv");
        assert!(run_sweep(&cfg, Some(&out)).is_err());
        assert!(!out.exists());
    }

    #[test]
    fn invalid_sweeps_are_rejected() {
        let cfg = ExperimentConfig {
            dims: vec![],
            ..small_cfg()
        };
        assert!(run_sweep(&cfg, None).is_err());
        let cfg = ExperimentConfig {
            dims: vec![32],
            ..small_cfg()
        };
        assert!(run_sweep(&cfg, None).is_err());
    }
}
