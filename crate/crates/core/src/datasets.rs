//! Dataset loading (IDX, delimited text), min/max normalization, and a
//! seeded synthetic generator for smoke tests and demos.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoder::FeatureQuantizer;
use crate::error::{HdcError, Location, Result};
use crate::hv::RngSeed;

/// A dense `samples x features` table with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    features: Vec<f64>,
    n_features: usize,
    labels: Vec<u32>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Vec<f64>, n_features: usize, labels: Vec<u32>) -> Result<Self> {
        if n_features == 0 {
            return Err(HdcError::InvalidInput("datasets need at least one feature".into()));
        }
        if features.len() != n_features * labels.len() {
            return Err(HdcError::ShapeMismatch {
                what: "feature matrix",
                expected: n_features * labels.len(),
                got: features.len(),
            });
        }
        Ok(Dataset {
            name: name.into(),
            features,
            n_features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.n_features)
    }

    pub fn row_refs(&self) -> Vec<&[f64]> {
        self.rows().collect()
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<u32> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }
}

fn parse_err(path: &Path, at: Location, message: impl Into<String>) -> HdcError {
    HdcError::Parse {
        path: path.to_path_buf(),
        at,
        message: message.into(),
    }
}

/// Reads an IDX file: `00 00 <type> <ndims>`, big-endian `u32` sizes, data.
fn read_idx(path: &Path, expected_dims: u8) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 4 {
        return Err(parse_err(path, Location::Byte(bytes.len() as u64), "file too short for an IDX header"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(parse_err(path, Location::Byte(0), "bad IDX magic"));
    }
    if bytes[2] != 0x08 {
        return Err(parse_err(
            path,
            Location::Byte(2),
            format!("unsupported IDX element type 0x{:02x} (only unsigned bytes)", bytes[2]),
        ));
    }
    if bytes[3] != expected_dims {
        return Err(parse_err(
            path,
            Location::Byte(3),
            format!("expected {expected_dims} dimensions, found {}", bytes[3]),
        ));
    }
    let mut dims = Vec::with_capacity(expected_dims as usize);
    for i in 0..expected_dims as usize {
        let off = 4 + 4 * i;
        let raw = bytes
            .get(off..off + 4)
            .ok_or_else(|| parse_err(path, Location::Byte(bytes.len() as u64), "truncated IDX header"))?;
        dims.push(u32::from_be_bytes(raw.try_into().expect("4 bytes")) as usize);
    }
    let header = 4 + 4 * expected_dims as usize;
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(parse_err(
            path,
            Location::Byte((header + payload.len().min(expected)) as u64),
            format!("expected {expected} data bytes, found {}", payload.len()),
        ));
    }
    Ok((dims, payload.to_vec()))
}

/// Loads an IDX image/label pair (MNIST layout); images are flattened.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let (idims, pixels) = read_idx(images, 3)?;
    let (ldims, label_bytes) = read_idx(labels, 1)?;
    if idims[0] != ldims[0] {
        return Err(parse_err(
            labels,
            Location::Byte(4),
            format!("{} labels for {} images", ldims[0], idims[0]),
        ));
    }
    let n = idims[1] * idims[2];
    let name = images
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(
        name,
        pixels.into_iter().map(f64::from).collect(),
        n,
        label_bytes.into_iter().map(u32::from).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Delimiter {
    Char(char),
    /// Any run of whitespace.
    Whitespace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelColumn {
    Index(usize),
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub label_column: LabelColumn,
    pub delimiter: Delimiter,
    /// `None` auto-detects: a first row with any non-numeric field is a header.
    pub header: Option<bool>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            label_column: LabelColumn::Last,
            delimiter: Delimiter::Char(','),
            header: None,
        }
    }
}

fn split_fields(line: &str, delimiter: Delimiter) -> Vec<&str> {
    match delimiter {
        Delimiter::Char(c) => line.split(c).map(str::trim).collect(),
        Delimiter::Whitespace => line.split_whitespace().collect(),
    }
}

fn parse_label(field: &str) -> Option<u32> {
    let v: f64 = field.trim().trim_matches('"').parse().ok()?;
    (v >= 0.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX)).then_some(v as u32)
}

fn parse_feature(field: &str) -> Option<f64> {
    field
        .trim()
        .trim_matches('"')
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
}

/// Reads a rectangular delimited table with a numeric label column.
pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();

    let header = match opts.header {
        Some(h) => h,
        None => lines
            .peek()
            .map(|(_, l)| split_fields(l, opts.delimiter).iter().any(|f| parse_feature(f).is_none()))
            .unwrap_or(false),
    };
    if header {
        lines.next();
    }

    let mut width = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in lines {
        let fields = split_fields(line, opts.delimiter);
        let w = *width.get_or_insert(fields.len());
        if fields.len() != w {
            return Err(parse_err(
                path,
                Location::Line(lineno),
                format!("expected {w} fields, found {}", fields.len()),
            ));
        }
        if w < 2 {
            return Err(parse_err(path, Location::Line(lineno), "need a label and at least one feature"));
        }
        let label_idx = match opts.label_column {
            LabelColumn::Index(i) if i < w => i,
            LabelColumn::Index(i) => {
                return Err(parse_err(path, Location::Line(lineno), format!("label column {i} out of range")))
            }
            LabelColumn::Last => w - 1,
        };
        for (j, field) in fields.iter().enumerate() {
            if j == label_idx {
                let label = parse_label(field).ok_or_else(|| {
                    parse_err(path, Location::Line(lineno), format!("label '{field}' is not a non-negative integer"))
                })?;
                labels.push(label);
            } else {
                let v = parse_feature(field).ok_or_else(|| {
                    parse_err(path, Location::Line(lineno), format!("field {} ('{field}') is not numeric", j + 1))
                })?;
                features.push(v);
            }
        }
    }
    let n = width.map(|w| w - 1).unwrap_or(0);
    if labels.is_empty() {
        return Err(parse_err(path, Location::Line(1), "no data rows"));
    }
    Dataset::new(file_stem(path), features, n, labels)
}

/// Features and labels in two parallel files (the UCI HAR layout).
pub fn load_feature_label_files(features: &Path, labels: &Path, delimiter: Delimiter) -> Result<Dataset> {
    let ftext = fs::read_to_string(features)?;
    let ltext = fs::read_to_string(labels)?;
    let mut width = None;
    let mut values = Vec::new();
    let mut rows = 0usize;
    for (i, line) in ftext.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields = split_fields(line, delimiter);
        let w = *width.get_or_insert(fields.len());
        if fields.len() != w {
            return Err(parse_err(
                features,
                Location::Line(i + 1),
                format!("expected {w} fields, found {}", fields.len()),
            ));
        }
        for f in fields {
            values.push(
                parse_feature(f)
                    .ok_or_else(|| parse_err(features, Location::Line(i + 1), format!("'{f}' is not numeric")))?,
            );
        }
        rows += 1;
    }
    let mut ys = Vec::with_capacity(rows);
    for (i, line) in ltext.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        ys.push(
            parse_label(line)
                .ok_or_else(|| parse_err(labels, Location::Line(i + 1), format!("bad label '{}'", line.trim())))?,
        );
    }
    if ys.len() != rows {
        return Err(parse_err(
            labels,
            Location::Line(ys.len()),
            format!("{} labels for {rows} feature rows", ys.len()),
        ));
    }
    if rows == 0 {
        return Err(parse_err(features, Location::Line(1), "no data rows"));
    }
    Dataset::new(file_stem(features), values, width.unwrap_or(0), ys)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Writes a dataset as comma-separated text, label last, no header.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for (row, label) in ds.rows().zip(ds.labels()) {
        for v in row {
            write!(out, "{v},")?;
        }
        writeln!(out, "{label}")?;
    }
    out.flush()?;
    Ok(())
}

/// Fits per-feature min/max on the training split only. Returns the dataset
/// rescaled to `[0, 1]` (constant features become 0) and the quantizer for raw
/// feature values.
pub fn normalize(train: &Dataset, levels: usize) -> Result<(Dataset, FeatureQuantizer)> {
    if train.is_empty() {
        return Err(HdcError::InvalidInput("cannot normalize an empty training split".into()));
    }
    let fq = FeatureQuantizer::fit(train.rows(), train.n_features(), levels)?;
    let scaled = train
        .rows()
        .flat_map(|row| {
            row.iter().zip(fq.bounds()).map(|(&v, &(lo, hi))| {
                if hi > lo {
                    ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
        })
        .collect();
    let ds = Dataset::new(train.name.clone(), scaled, train.n_features(), train.labels.clone())?;
    Ok((ds, fq))
}

/// Gaussian clusters around random class prototypes in `[0, 1]^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub features: usize,
    pub classes: usize,
    pub train: usize,
    pub test: usize,
    /// Weight of the class-specific part of each prototype; the rest is a
    /// pattern shared by all classes.
    pub separation: f64,
    pub noise: f64,
    pub seed: RngSeed,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            features: 64,
            classes: 8,
            train: 800,
            test: 200,
            separation: 0.8,
            noise: 0.1,
            seed: RngSeed(0),
        }
    }
}

/// Returns `(train, test)`.
pub fn synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    if spec.features == 0 || spec.classes == 0 || spec.train == 0 || spec.test == 0 {
        return Err(HdcError::InvalidConfig("synthetic dataset sizes must be >= 1".into()));
    }
    let mut rng = spec.seed.derive(0).rng();
    let shared: Vec<f64> = (0..spec.features).map(|_| rng.gen()).collect();
    let prototypes: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            shared
                .iter()
                .map(|s| (1.0 - spec.separation) * s + spec.separation * rng.gen::<f64>())
                .collect()
        })
        .collect();
    let draw = |count: usize, stream: u64| {
        let mut rng = spec.seed.derive(stream).rng();
        let mut features = Vec::with_capacity(count * spec.features);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let class = i % spec.classes;
            for &p in &prototypes[class] {
                let z: f64 = rng.sample(StandardNormal);
                features.push(p + spec.noise * z);
            }
            labels.push(class as u32);
        }
        Dataset::new("synthetic", features, spec.features, labels)
    };
    Ok((draw(spec.train, 1)?, draw(spec.test, 2)?))
}

/// How one split of a dataset is stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitSource {
    Csv { path: PathBuf, options: CsvOptions },
    Idx { images: PathBuf, labels: PathBuf },
    FeatureLabelFiles { features: PathBuf, labels: PathBuf, delimiter: Delimiter },
}

impl SplitSource {
    pub fn paths(&self) -> Vec<&Path> {
        match self {
            SplitSource::Csv { path, .. } => vec![path],
            SplitSource::Idx { images, labels } => vec![images, labels],
            SplitSource::FeatureLabelFiles { features, labels, .. } => vec![features, labels],
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        match self {
            SplitSource::Csv { path, options } => load_csv(path, options),
            SplitSource::Idx { images, labels } => load_idx(images, labels),
            SplitSource::FeatureLabelFiles {
                features,
                labels,
                delimiter,
            } => load_feature_label_files(features, labels, *delimiter),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetSource {
    Files { train: SplitSource, test: SplitSource },
    Synthetic(SyntheticSpec),
}

/// A named dataset with its train/test locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub name: String,
    pub source: DatasetSource,
}

pub const REGISTERED: &[&str] = &["isolet", "ucihar", "mnist", "synthetic"];

impl DatasetRef {
    /// Standard on-disk layout of a registered dataset under `data_dir`:
    ///
    /// - `isolet/isolet1+2+3+4.data`, `isolet/isolet5.data` (comma separated, label last)
    /// - `ucihar/train/X_train.txt` + `y_train.txt`, `ucihar/test/X_test.txt` + `y_test.txt`
    /// - `mnist/train-images-idx3-ubyte` + `train-labels-idx1-ubyte`, `t10k-*` for test
    pub fn registered(name: &str, data_dir: &Path) -> Result<Self> {
        let source = match name {
            "isolet" => {
                let opts = CsvOptions {
                    header: Some(false),
                    ..CsvOptions::default()
                };
                DatasetSource::Files {
                    train: SplitSource::Csv {
                        path: data_dir.join("isolet/isolet1+2+3+4.data"),
                        options: opts,
                    },
                    test: SplitSource::Csv {
                        path: data_dir.join("isolet/isolet5.data"),
                        options: opts,
                    },
                }
            }
            "ucihar" => {
                let split = |s: &str| SplitSource::FeatureLabelFiles {
                    features: data_dir.join(format!("ucihar/{s}/X_{s}.txt")),
                    labels: data_dir.join(format!("ucihar/{s}/y_{s}.txt")),
                    delimiter: Delimiter::Whitespace,
                };
                DatasetSource::Files {
                    train: split("train"),
                    test: split("test"),
                }
            }
            "mnist" => DatasetSource::Files {
                train: SplitSource::Idx {
                    images: data_dir.join("mnist/train-images-idx3-ubyte"),
                    labels: data_dir.join("mnist/train-labels-idx1-ubyte"),
                },
                test: SplitSource::Idx {
                    images: data_dir.join("mnist/t10k-images-idx3-ubyte"),
                    labels: data_dir.join("mnist/t10k-labels-idx1-ubyte"),
                },
            },
            "synthetic" => DatasetSource::Synthetic(SyntheticSpec::default()),
            other => {
                return Err(HdcError::InvalidConfig(format!(
                    "unknown dataset '{other}' (registered: {})",
                    REGISTERED.join(", ")
                )))
            }
        };
        Ok(DatasetRef {
            name: name.to_string(),
            source,
        })
    }

    /// Paths that must exist before anything is trained.
    pub fn missing_files(&self) -> Vec<PathBuf> {
        match &self.source {
            DatasetSource::Files { train, test } => train
                .paths()
                .into_iter()
                .chain(test.paths())
                .filter(|p| !p.is_file())
                .map(Path::to_path_buf)
                .collect(),
            DatasetSource::Synthetic(_) => Vec::new(),
        }
    }

    pub fn ensure_present(&self) -> Result<()> {
        let missing = self.missing_files();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(HdcError::InvalidInput(format!(
                "dataset '{}' is missing files: {}",
                self.name,
                missing.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
            )))
        }
    }

    /// Loads `(train, test)`.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        self.ensure_present()?;
        let (mut train, mut test) = match &self.source {
            DatasetSource::Files { train, test } => (train.load()?, test.load()?),
            DatasetSource::Synthetic(spec) => synthetic(spec)?,
        };
        if train.n_features() != test.n_features() {
            return Err(HdcError::ShapeMismatch {
                what: "train vs test feature count",
                expected: train.n_features(),
                got: test.n_features(),
            });
        }
        train.name = self.name.clone();
        test.name = self.name.clone();
        Ok((train, test))
    }
}
