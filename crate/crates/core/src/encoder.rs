//! Record-based encoding: `H = sum_k L(f_k) * B_k`, followed by an ADC stage
//! that requantizes each accumulated dimension to `P` bits.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HdcError, Result};
use crate::hv::{check_range, quantize_value, random_code, random_hv_with, Hypervector, Precision, RngSeed};

pub const DEFAULT_LEVELS: usize = 64;

/// Number of training rows sampled when calibrating the ADC range.
pub const CALIBRATION_SAMPLES: usize = 512;

const LEVEL_STREAM: u64 = 1;
const BASE_STREAM: u64 = 2;

/// Requantization window of the ADC stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdcRange {
    pub lo: f64,
    pub hi: f64,
}

impl AdcRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        check_range(lo, hi)?;
        Ok(AdcRange { lo, hi })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dim: usize,
    pub precision: Precision,
    /// Precision of the base hypervectors; defaults to `precision`.
    pub base_precision: Precision,
    pub levels: usize,
    pub features: usize,
    /// `None` until calibrated.
    pub adc: Option<AdcRange>,
    pub seed: RngSeed,
}

impl EncoderConfig {
    pub fn new(dim: usize, precision: Precision, features: usize, seed: RngSeed) -> Self {
        EncoderConfig {
            dim,
            precision,
            base_precision: precision,
            levels: DEFAULT_LEVELS,
            features,
            adc: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(HdcError::InvalidDimension(0));
        }
        if self.features == 0 {
            return Err(HdcError::InvalidConfig("feature count must be >= 1".into()));
        }
        if self.levels < 2 {
            return Err(HdcError::InvalidConfig(format!(
                "level count must be >= 2, got {}",
                self.levels
            )));
        }
        if self.dim < self.levels {
            return Err(HdcError::InvalidConfig(format!(
                "dimension {} is smaller than the level count {}",
                self.dim, self.levels
            )));
        }
        if !self.dim.is_multiple_of(64) {
            log::warn!("dimension {} is not a multiple of the 64-wide array size", self.dim);
        }
        Ok(())
    }

    fn adc_range(&self) -> Result<AdcRange> {
        match self.adc {
            Some(r) if r.lo < r.hi => Ok(r),
            Some(r) => Err(HdcError::InvalidConfig(format!(
                "ADC range [{}, {}] is empty",
                r.lo, r.hi
            ))),
            None => Err(HdcError::InvalidConfig("ADC range has not been calibrated".into())),
        }
    }
}

/// Per-feature linear binning into `levels` level indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureQuantizer {
    bounds: Vec<(f64, f64)>,
    levels: usize,
}

impl FeatureQuantizer {
    /// `lo == hi` marks a constant feature, which always maps to level 0.
    pub fn new(bounds: Vec<(f64, f64)>, levels: usize) -> Result<Self> {
        if levels < 2 {
            return Err(HdcError::InvalidConfig(format!("level count must be >= 2, got {levels}")));
        }
        if bounds.is_empty() {
            return Err(HdcError::InvalidConfig("feature quantizer needs >= 1 feature".into()));
        }
        for &(lo, hi) in &bounds {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(HdcError::InvalidRange { lo, hi });
            }
        }
        Ok(FeatureQuantizer { bounds, levels })
    }

    /// Per-feature min/max over the given rows.
    pub fn fit<'a, I>(rows: I, features: usize, levels: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); features];
        let mut seen = 0usize;
        for row in rows {
            check_row(row, features)?;
            for (b, &v) in bounds.iter_mut().zip(row) {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
            seen += 1;
        }
        if seen == 0 {
            return Err(HdcError::InvalidInput("cannot fit a quantizer on zero rows".into()));
        }
        FeatureQuantizer::new(bounds, levels)
    }

    pub fn features(&self) -> usize {
        self.bounds.len()
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// `floor(m * (v - lo) / (hi - lo))` clamped to `[0, m - 1]`.
    #[inline]
    pub fn level_index(&self, feature: usize, value: f64) -> usize {
        let (lo, hi) = self.bounds[feature];
        if hi <= lo {
            return 0;
        }
        let m = self.levels as f64;
        let idx = ((value - lo) / (hi - lo) * m).floor();
        idx.clamp(0.0, m - 1.0) as usize
    }

    pub fn quantize(&self, row: &[f64]) -> Result<Vec<usize>> {
        check_row(row, self.features())?;
        Ok(row
            .iter()
            .enumerate()
            .map(|(k, &v)| self.level_index(k, v))
            .collect())
    }
}

fn check_row(row: &[f64], features: usize) -> Result<()> {
    if row.len() != features {
        return Err(HdcError::ShapeMismatch {
            what: "feature vector",
            expected: features,
            got: row.len(),
        });
    }
    if let Some(index) = row.iter().position(|v| !v.is_finite()) {
        return Err(HdcError::NonFinite { index });
    }
    Ok(())
}

/// The `m` level hypervectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTable {
    levels: Vec<Hypervector>,
}

impl LevelTable {
    pub fn new(levels: Vec<Hypervector>) -> Result<Self> {
        check_rows(&levels, "level table")?;
        Ok(LevelTable { levels })
    }

    pub fn rows(&self) -> &[Hypervector] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.levels[0].dim()
    }
}

/// The `n` base hypervectors, one per feature position.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseMatrix {
    bases: Vec<Hypervector>,
}

impl BaseMatrix {
    pub fn new(bases: Vec<Hypervector>) -> Result<Self> {
        check_rows(&bases, "base matrix")?;
        Ok(BaseMatrix { bases })
    }

    pub fn rows(&self) -> &[Hypervector] {
        &self.bases
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.bases[0].dim()
    }
}

fn check_rows(rows: &[Hypervector], what: &'static str) -> Result<()> {
    let first = rows
        .first()
        .ok_or_else(|| HdcError::InvalidInput(format!("{what} has no rows")))?;
    for row in rows {
        if row.dim() != first.dim() {
            return Err(HdcError::ShapeMismatch {
                what,
                expected: first.dim(),
                got: row.dim(),
            });
        }
        if row.precision() != first.precision() {
            return Err(HdcError::InvalidInput(format!("{what} mixes precisions")));
        }
    }
    Ok(())
}

/// Level 1 is uniformly random. Each following level copies its predecessor
/// and redraws `floor(D/m)` dimensions. The redrawn dimension sets are
/// disjoint chunks of one random permutation, so `L_1` and `L_m` differ on
/// about `(m-1)/m` of the dimensions before accounting for equal redraws.
pub fn generate_level_table(cfg: &EncoderConfig) -> Result<LevelTable> {
    cfg.validate()?;
    let mut rng = cfg.seed.derive(LEVEL_STREAM).rng();
    let first = random_hv_with(&mut rng, cfg.dim, cfg.precision);

    let mut order: Vec<usize> = (0..cfg.dim).collect();
    order.shuffle(&mut rng);
    let step = cfg.dim / cfg.levels;

    let mut levels = Vec::with_capacity(cfg.levels);
    let mut current = first.into_codes();
    levels.push(Hypervector::from_codes_unchecked(current.clone(), cfg.precision));
    for chunk in order.chunks_exact(step).take(cfg.levels - 1) {
        for &d in chunk {
            current[d] = random_code(&mut rng, cfg.precision);
        }
        levels.push(Hypervector::from_codes_unchecked(current.clone(), cfg.precision));
    }
    LevelTable::new(levels)
}

pub fn generate_base_matrix(cfg: &EncoderConfig) -> Result<BaseMatrix> {
    cfg.validate()?;
    let mut rng = cfg.seed.derive(BASE_STREAM).rng();
    let bases = (0..cfg.features)
        .map(|_| random_hv_with(&mut rng, cfg.dim, cfg.base_precision))
        .collect();
    BaseMatrix::new(bases)
}

/// Exact per-dimension sums `S_d = sum_k L[idx_k][d] * B_k[d]`.
pub fn raw_sums(level_indices: &[usize], levels: &LevelTable, bases: &BaseMatrix) -> Result<Vec<u32>> {
    if level_indices.len() != bases.len() {
        return Err(HdcError::ShapeMismatch {
            what: "level indices vs base matrix",
            expected: bases.len(),
            got: level_indices.len(),
        });
    }
    if levels.dim() != bases.dim() {
        return Err(HdcError::ShapeMismatch {
            what: "level table vs base matrix",
            expected: bases.dim(),
            got: levels.dim(),
        });
    }
    let mut acc = vec![0u32; bases.dim()];
    for (&idx, base) in level_indices.iter().zip(bases.rows()) {
        let level = levels.rows().get(idx).ok_or_else(|| {
            HdcError::InvalidInput(format!("level index {idx} outside table of {}", levels.len()))
        })?;
        for ((a, &l), &b) in acc.iter_mut().zip(level.codes()).zip(base.codes()) {
            *a += u32::from(l) * u32::from(b);
        }
    }
    Ok(acc)
}

/// ADC stage: requantize accumulated sums to `P` bits over `range`.
pub fn adc_convert(sums: &[u32], precision: Precision, range: AdcRange) -> Hypervector {
    let codes = sums
        .iter()
        .map(|&s| quantize_value(f64::from(s), precision, range.lo, range.hi))
        .collect();
    Hypervector::from_codes_unchecked(codes, precision)
}

/// 1st and 99th percentiles (linear interpolation between order statistics).
pub fn percentile_range(values: &mut [f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(HdcError::InvalidInput("no values to take percentiles of".into()));
    }
    values.sort_by(f64::total_cmp);
    Ok((percentile_sorted(values, 0.01), percentile_sorted(values, 0.99)))
}

fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let below = pos.floor() as usize;
    let above = pos.ceil() as usize;
    let frac = pos - below as f64;
    sorted[below] + (sorted[above] - sorted[below]) * frac
}

/// A complete encoder: configuration, generated tables and feature binning.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    quantizer: FeatureQuantizer,
    levels: LevelTable,
    bases: BaseMatrix,
}

impl Encoder {
    /// Generates level and base tables from `config`.
    pub fn generate(config: EncoderConfig, quantizer: FeatureQuantizer) -> Result<Self> {
        let levels = generate_level_table(&config)?;
        let bases = generate_base_matrix(&config)?;
        Encoder::from_parts(config, quantizer, levels, bases)
    }

    pub fn from_parts(
        config: EncoderConfig,
        quantizer: FeatureQuantizer,
        levels: LevelTable,
        bases: BaseMatrix,
    ) -> Result<Self> {
        config.validate()?;
        let shape = |what, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(HdcError::ShapeMismatch { what, expected, got })
            }
        };
        shape("quantizer features", config.features, quantizer.features())?;
        shape("quantizer levels", config.levels, quantizer.levels())?;
        shape("level table rows", config.levels, levels.len())?;
        shape("level table dimension", config.dim, levels.dim())?;
        shape("base matrix rows", config.features, bases.len())?;
        shape("base matrix dimension", config.dim, bases.dim())?;
        if levels.rows()[0].precision() != config.precision
            || bases.rows()[0].precision() != config.base_precision
        {
            return Err(HdcError::InvalidConfig("table precision does not match configuration".into()));
        }
        Ok(Encoder {
            config,
            quantizer,
            levels,
            bases,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn quantizer(&self) -> &FeatureQuantizer {
        &self.quantizer
    }

    pub fn level_table(&self) -> &LevelTable {
        &self.levels
    }

    pub fn base_matrix(&self) -> &BaseMatrix {
        &self.bases
    }

    pub fn raw_sums(&self, row: &[f64]) -> Result<Vec<u32>> {
        let idx = self.quantizer.quantize(row)?;
        raw_sums(&idx, &self.levels, &self.bases)
    }

    pub fn encode(&self, row: &[f64]) -> Result<Hypervector> {
        let range = self.config.adc_range()?;
        Ok(adc_convert(&self.raw_sums(row)?, self.config.precision, range))
    }

    pub fn encode_batch<'a, I>(&self, rows: I) -> Result<Vec<Hypervector>>
    where
        I: IntoParallelIterator<Item = &'a [f64]>,
        I::Iter: IndexedParallelIterator,
    {
        rows.into_par_iter().map(|row| self.encode(row)).collect()
    }

    /// Sets the ADC window to the 1st/99th percentile of raw sums over an
    /// evenly strided sample of at most [`CALIBRATION_SAMPLES`] rows.
    pub fn calibrate_adc(&mut self, rows: &[&[f64]]) -> Result<AdcRange> {
        if rows.is_empty() {
            return Err(HdcError::InvalidInput("ADC calibration needs at least one row".into()));
        }
        let stride = rows.len().div_ceil(CALIBRATION_SAMPLES);
        let sampled: Vec<&[f64]> = rows.iter().step_by(stride).copied().collect();
        let sums: Vec<Vec<u32>> = sampled
            .par_iter()
            .map(|row| self.raw_sums(row))
            .collect::<Result<_>>()?;
        let mut values: Vec<f64> = sums.into_iter().flatten().map(f64::from).collect();
        let (lo, mut hi) = percentile_range(&mut values)?;
        if hi <= lo {
            hi = lo + 1.0;
        }
        let range = AdcRange { lo, hi };
        self.config.adc = Some(range);
        Ok(range)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn hv(codes: &[u8], bits: u8) -> Hypervector {
        Hypervector::new(codes.to_vec(), Precision::new(bits).unwrap()).unwrap()
    }

    #[test]
    fn feature_binning_examples() {
        let fq = FeatureQuantizer::new(vec![(0.0, 1.0)], 64).unwrap();
        assert_eq!(fq.level_index(0, 0.0), 0);
        assert_eq!(fq.level_index(0, 1.0), 63);
        assert_eq!(fq.level_index(0, 0.5), 32);
        let fq = FeatureQuantizer::new(vec![(0.0, 8.0)], 4).unwrap();
        // floor(4 * 5.9 / 8) = floor(2.95)
        assert_eq!(fq.level_index(0, 5.9), 2);
    }

    #[test]
    fn feature_binning_clamps_and_handles_constant() {
        let fq = FeatureQuantizer::new(vec![(0.0, 1.0), (3.0, 3.0)], 8).unwrap();
        assert_eq!(fq.quantize(&[2.0, 3.0]).unwrap(), vec![7, 0]);
        assert_eq!(fq.quantize(&[-1.0, 100.0]).unwrap(), vec![0, 0]);
        assert!(matches!(fq.quantize(&[0.5]), Err(HdcError::ShapeMismatch { .. })));
    }

    #[test]
    fn quantizer_validation() {
        assert!(FeatureQuantizer::new(vec![(1.0, 0.0)], 4).is_err());
        assert!(FeatureQuantizer::new(vec![(0.0, 1.0)], 1).is_err());
    }

    #[test]
    fn raw_sum_hand_example() {
        let levels = LevelTable::new(vec![hv(&[1, 2, 0, 3], 2), hv(&[2, 0, 1, 1], 2)]).unwrap();
        let bases = BaseMatrix::new(vec![hv(&[3, 1, 2, 0], 2), hv(&[1, 2, 3, 2], 2)]).unwrap();
        // [1*3 + 2*1, 2*1 + 0*2, 0*2 + 1*3, 3*0 + 1*2]
        assert_eq!(raw_sums(&[0, 1], &levels, &bases).unwrap(), vec![5, 2, 3, 2]);
    }

    #[test]
    fn all_zero_level_encodes_to_quantized_zero() {
        let cfg = EncoderConfig {
            adc: Some(AdcRange { lo: -2.0, hi: 10.0 }),
            levels: 2,
            ..EncoderConfig::new(4, Precision::TWO, 1, RngSeed(1))
        };
        let levels = LevelTable::new(vec![hv(&[0, 0, 0, 0], 2), hv(&[3, 3, 3, 3], 2)]).unwrap();
        let bases = BaseMatrix::new(vec![hv(&[3, 1, 2, 3], 2)]).unwrap();
        let fq = FeatureQuantizer::new(vec![(0.0, 1.0)], 2).unwrap();
        let enc = Encoder::from_parts(cfg, fq, levels, bases).unwrap();
        let expected = quantize_value(0.0, Precision::TWO, -2.0, 10.0);
        assert_eq!(enc.encode(&[0.1]).unwrap().codes(), &[expected; 4]);
    }

    #[test]
    fn encode_requires_calibrated_adc() {
        let cfg = EncoderConfig::new(64, Precision::ONE, 2, RngSeed(3));
        let fq = FeatureQuantizer::new(vec![(0.0, 1.0); 2], 64).unwrap();
        let mut enc = Encoder::generate(cfg, fq).unwrap();
        assert!(matches!(enc.encode(&[0.1, 0.2]), Err(HdcError::InvalidConfig(_))));
        enc.config.adc = Some(AdcRange { lo: 1.0, hi: 1.0 });
        assert!(matches!(enc.encode(&[0.1, 0.2]), Err(HdcError::InvalidConfig(_))));
    }

    #[test]
    fn config_rejects_dim_below_levels() {
        let cfg = EncoderConfig::new(32, Precision::ONE, 1, RngSeed(0));
        assert!(matches!(generate_level_table(&cfg), Err(HdcError::InvalidConfig(_))));
    }

    fn diff_count(a: &Hypervector, b: &Hypervector) -> usize {
        a.codes().iter().zip(b.codes()).filter(|(x, y)| x != y).count()
    }

    #[test]
    fn single_dimension_steps_when_dim_equals_levels() {
        for bits in 1..=3 {
            let cfg = EncoderConfig::new(64, Precision::new(bits).unwrap(), 1, RngSeed(bits as u64));
            let lt = generate_level_table(&cfg).unwrap();
            assert_eq!(lt.len(), 64);
            for w in lt.rows().windows(2) {
                assert!(diff_count(&w[0], &w[1]) <= 1);
            }
        }
    }

    #[test]
    fn consecutive_levels_differ_in_at_most_step() {
        let cfg = EncoderConfig {
            levels: 7,
            ..EncoderConfig::new(1000, Precision::THREE, 1, RngSeed(5))
        };
        let lt = generate_level_table(&cfg).unwrap();
        for w in lt.rows().windows(2) {
            assert!(diff_count(&w[0], &w[1]) <= 1000usize.div_ceil(7));
        }
    }

    #[test]
    fn extreme_levels_are_quasi_orthogonal() {
        for s in 0..20 {
            let cfg = EncoderConfig::new(4000, Precision::ONE, 1, RngSeed(s));
            let lt = generate_level_table(&cfg).unwrap();
            let d = diff_count(&lt.rows()[0], &lt.rows()[63]) as f64 / 4000.0;
            assert!((0.4..=0.6).contains(&d), "seed {s}: {d}");
        }
    }

    #[test]
    fn percentile_range_on_uniform_samples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut values: Vec<f64> = (0..2000).map(|_| rng.gen_range(0.0..=100.0)).collect();
        let (lo, hi) = percentile_range(&mut values).unwrap();
        assert!(lo >= 0.0 && hi <= 100.0);
        assert!(hi - lo >= 90.0, "{lo} {hi}");
        assert!(percentile_range(&mut []).is_err());
    }

    #[test]
    fn calibration_of_constant_input_brackets_it() {
        let cfg = EncoderConfig::new(256, Precision::TWO, 3, RngSeed(2));
        let fq = FeatureQuantizer::new(vec![(0.0, 1.0); 3], 64).unwrap();
        let mut enc = Encoder::generate(cfg, fq).unwrap();
        let row = [0.3, 0.6, 0.9];
        let range = enc.calibrate_adc(&[&row, &row, &row]).unwrap();
        let sums = enc.raw_sums(&row).unwrap();
        // With a single distinct row the percentiles still come from its own sums.
        let below = sums.iter().filter(|&&s| f64::from(s) < range.lo).count();
        let above = sums.iter().filter(|&&s| f64::from(s) > range.hi).count();
        assert!(below <= 3 && above <= 3);
        assert!(enc.calibrate_adc(&[]).is_err());
    }

    #[test]
    fn calibration_clips_under_two_percent() {
        let n = 20;
        let cfg = EncoderConfig::new(1024, Precision::THREE, n, RngSeed(4));
        let fq = FeatureQuantizer::new(vec![(0.0, 1.0); n], 64).unwrap();
        let mut enc = Encoder::generate(cfg, fq).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..n).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let range = enc.calibrate_adc(&refs).unwrap();
        let mut clipped = 0usize;
        for row in &refs {
            let sums = enc.raw_sums(row).unwrap();
            clipped += sums
                .iter()
                .filter(|&&s| f64::from(s) < range.lo || f64::from(s) > range.hi)
                .count();
        }
        let frac = clipped as f64 / (refs.len() * 1024) as f64;
        assert!(frac < 0.02, "clipped fraction {frac}");
    }

    #[test]
    fn deterministic_generation() {
        let cfg = EncoderConfig::new(128, Precision::TWO, 4, RngSeed(10));
        assert_eq!(generate_level_table(&cfg).unwrap(), generate_level_table(&cfg).unwrap());
        assert_eq!(generate_base_matrix(&cfg).unwrap(), generate_base_matrix(&cfg).unwrap());
        let other = EncoderConfig { seed: RngSeed(11), ..cfg.clone() };
        assert_ne!(generate_base_matrix(&cfg).unwrap(), generate_base_matrix(&other).unwrap());
    }

    #[test]
    fn base_precision_override() {
        let cfg = EncoderConfig {
            base_precision: Precision::ONE,
            ..EncoderConfig::new(128, Precision::THREE, 2, RngSeed(1))
        };
        let bm = generate_base_matrix(&cfg).unwrap();
        assert!(bm.rows().iter().all(|b| b.precision() == Precision::ONE));
        let lt = generate_level_table(&cfg).unwrap();
        assert!(lt.rows().iter().all(|l| l.precision() == Precision::THREE));
    }

    #[test]
    fn adc_saturates() {
        let range = AdcRange::new(0.0, 10.0).unwrap();
        let out = adc_convert(&[0, 5, 10, 1_000_000], Precision::TWO, range);
        assert_eq!(out.codes(), &[0, 2, 3, 3]);
    }
}
