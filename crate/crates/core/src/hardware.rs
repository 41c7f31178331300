//! Array tiling counts and bit-flip noise injection.
//!
//! Encoding uses `n` groups of `ceil(D/64)` crossbars (one group per
//! feature); associative search stores the `k` class rows across
//! `ceil(D/64) * ceil(k/64)` MCAM arrays. Partial arrays count as whole ones.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{HdcError, Result};
use crate::hv::{Hypervector, RngSeed};
use crate::similarity::{McamKernel, Metric};
use crate::trainer::{evaluate, EncodedSet, Model};

pub const ARRAY_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilingReport {
    pub features: usize,
    pub dim: usize,
    pub classes: usize,
    pub array_rows: usize,
    pub array_cols: usize,
    pub crossbar_arrays: usize,
    pub mcam_arrays: usize,
    pub adc_conversions_per_encode: usize,
    /// Class rows written across all MCAM arrays, `k * ceil(D/64)`.
    pub mcam_rows_used: usize,
    pub partial_tiles: bool,
}

pub fn tile(features: usize, dim: usize, classes: usize) -> Result<TilingReport> {
    if features == 0 || dim == 0 || classes == 0 {
        return Err(HdcError::InvalidInput(format!(
            "tiling needs n, D, k >= 1 (got n={features}, D={dim}, k={classes})"
        )));
    }
    let column_tiles = dim.div_ceil(ARRAY_SIZE);
    let partial = !dim.is_multiple_of(ARRAY_SIZE);
    if partial {
        log::warn!("D={dim} is not a multiple of {ARRAY_SIZE}; the last column tile is partially used");
    }
    Ok(TilingReport {
        features,
        dim,
        classes,
        array_rows: ARRAY_SIZE,
        array_cols: ARRAY_SIZE,
        crossbar_arrays: features * column_tiles,
        mcam_arrays: column_tiles * classes.div_ceil(ARRAY_SIZE),
        adc_conversions_per_encode: dim,
        mcam_rows_used: classes * column_tiles,
        partial_tiles: partial,
    })
}

pub fn tile_config(cfg: &EncoderConfig, classes: usize) -> Result<TilingReport> {
    tile(cfg.features, cfg.dim, classes)
}

/// Which stored structures receive bit flips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseTargets {
    pub encoded_query: bool,
    pub class_hvs: bool,
}

impl NoiseTargets {
    pub const BOTH: NoiseTargets = NoiseTargets {
        encoded_query: true,
        class_hvs: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub flip_rate: f64,
    pub targets: NoiseTargets,
    pub seed: RngSeed,
}

impl NoiseSpec {
    pub fn new(flip_rate: f64, targets: NoiseTargets, seed: RngSeed) -> Result<Self> {
        if !(0.0..=1.0).contains(&flip_rate) {
            return Err(HdcError::InvalidConfig(format!("flip rate {flip_rate} outside [0, 1]")));
        }
        if !targets.encoded_query && !targets.class_hvs {
            return Err(HdcError::InvalidConfig("noise needs at least one target".into()));
        }
        Ok(NoiseSpec {
            flip_rate,
            targets,
            seed,
        })
    }
}

/// Flips each of the `D * P` stored bits independently with `flip_rate`.
pub fn inject_noise(hv: &Hypervector, flip_rate: f64, seed: RngSeed) -> Hypervector {
    if flip_rate <= 0.0 {
        return hv.clone();
    }
    let mut rng = seed.rng();
    let bits = hv.precision().bits();
    let codes = hv
        .codes()
        .iter()
        .map(|&c| {
            let mut mask = 0u8;
            for b in 0..bits {
                if rng.gen::<f64>() < flip_rate {
                    mask |= 1 << b;
                }
            }
            c ^ mask
        })
        .collect();
    Hypervector::from_codes_unchecked(codes, hv.precision())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub rate: f64,
    pub clean_accuracy: f64,
    pub mean_noisy_accuracy: f64,
    /// `clean - noisy`, averaged over trials, as a fraction.
    pub mean_quality_loss: f64,
}

/// Mean accuracy drop under bit-flip noise for each rate.
///
/// Each `(rate, trial)` pair gets its own derived seed; class HVs and every
/// query are perturbed independently. The model is never modified.
#[allow(clippy::too_many_arguments)]
pub fn robustness_experiment(
    model: &Model,
    test: &EncodedSet,
    metric: Metric,
    kernel: Option<&McamKernel>,
    rates: &[f64],
    trials: usize,
    targets: NoiseTargets,
    seed: RngSeed,
) -> Result<Vec<RobustnessRow>> {
    if rates.is_empty() {
        return Err(HdcError::InvalidInput("no noise rates given".into()));
    }
    if trials == 0 {
        return Err(HdcError::InvalidInput("trials must be >= 1".into()));
    }
    for &rate in rates {
        NoiseSpec::new(rate, targets, seed)?;
    }
    let clean = evaluate(model, test, metric, kernel)?;
    rates
        .iter()
        .enumerate()
        .map(|(ri, &rate)| {
            let accs = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let trial_seed = seed.derive(ri as u64).derive(t as u64);
                    noisy_accuracy(model, test, metric, kernel, rate, targets, trial_seed)
                })
                .collect::<Result<Vec<f64>>>()?;
            let noisy = accs.iter().sum::<f64>() / trials as f64;
            let loss = accs.iter().map(|a| clean - a).sum::<f64>() / trials as f64;
            Ok(RobustnessRow {
                rate,
                clean_accuracy: clean,
                mean_noisy_accuracy: noisy,
                mean_quality_loss: loss,
            })
        })
        .collect()
}

fn noisy_accuracy(
    model: &Model,
    test: &EncodedSet,
    metric: Metric,
    kernel: Option<&McamKernel>,
    rate: f64,
    targets: NoiseTargets,
    seed: RngSeed,
) -> Result<f64> {
    let class_seed = seed.derive(0);
    let query_seed = seed.derive(1);
    let classes: Vec<Hypervector> = model
        .quant_classes()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if targets.class_hvs {
                inject_noise(c, rate, class_seed.derive(i as u64))
            } else {
                c.clone()
            }
        })
        .collect();
    let correct = test
        .samples
        .par_iter()
        .zip(test.labels.par_iter())
        .enumerate()
        .map(|(i, (q, &label))| {
            let noisy;
            let query = if targets.encoded_query {
                noisy = inject_noise(q, rate, query_seed.derive(i as u64));
                &noisy
            } else {
                q
            };
            let pred = crate::similarity::classify(query, &classes, metric, kernel)?;
            Ok(usize::from(model.labels()[pred.label] == label))
        })
        .try_reduce(|| 0usize, |a, b| Ok::<_, HdcError>(a + b))?;
    Ok(correct as f64 / test.len() as f64)
}
