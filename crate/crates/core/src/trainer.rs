//! Single-pass class bundling and hardware-aware retraining (HWART).
//!
//! The model keeps two copies of every class hypervector: a real-valued one
//! that accumulates updates, and a `P`-bit one that is what the associative
//! search hardware would store. Retraining predicts with the quantized copy
//! under the deployment metric and, on a miss, moves the real copies:
//!
//! ```text
//! C_true += eta * (s_pred - s_true) * H
//! C_pred -= eta * (s_pred - s_true) * H
//! ```
//!
//! The quantized copy is refreshed from the real one after every batch.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HdcError, Result};
use crate::hv::{quantize_hv, Hypervector, Precision, RealHypervector, RngSeed};
use crate::similarity::{classify, cosine_similarity_real, argmax, McamKernel, Metric, Prediction, SimilarityScore};

/// Encoded samples with their class labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncodedSet {
    pub samples: Vec<Hypervector>,
    pub labels: Vec<u32>,
}

impl EncodedSet {
    pub fn new(samples: Vec<Hypervector>, labels: Vec<u32>) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(HdcError::ShapeMismatch {
                what: "encoded samples vs labels",
                expected: samples.len(),
                got: labels.len(),
            });
        }
        if let Some(first) = samples.first() {
            if let Some(bad) = samples
                .iter()
                .find(|s| s.dim() != first.dim() || s.precision() != first.precision())
            {
                return Err(HdcError::ShapeMismatch {
                    what: "encoded sample dimension",
                    expected: first.dim(),
                    got: bad.dim(),
                });
            }
        }
        Ok(EncodedSet { samples, labels })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Hypervector, u32)> {
        self.samples.iter().zip(self.labels.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    labels: Vec<u32>,
    real: Vec<RealHypervector>,
    quant: Vec<Hypervector>,
    precision: Precision,
    range: (f64, f64),
}

impl Model {
    /// Builds a model from real class vectors and quantizes it.
    pub fn new(labels: Vec<u32>, real: Vec<RealHypervector>, precision: Precision) -> Result<Self> {
        if labels.is_empty() {
            return Err(HdcError::InvalidModel("a model needs at least one class".into()));
        }
        if labels.len() != real.len() {
            return Err(HdcError::ShapeMismatch {
                what: "model labels vs class vectors",
                expected: labels.len(),
                got: real.len(),
            });
        }
        if labels.iter().collect::<BTreeSet<_>>().len() != labels.len() {
            return Err(HdcError::InvalidModel("duplicate class labels".into()));
        }
        let dim = real[0].dim();
        if let Some(bad) = real.iter().find(|r| r.dim() != dim) {
            return Err(HdcError::ShapeMismatch {
                what: "class vector dimension",
                expected: dim,
                got: bad.dim(),
            });
        }
        let mut model = Model {
            labels,
            real,
            quant: Vec::new(),
            precision,
            range: (0.0, 1.0),
        };
        model.sync()?;
        Ok(model)
    }

    /// Rebuilds a stored model, checking that the quantized copy is in sync.
    pub fn from_parts(
        labels: Vec<u32>,
        real: Vec<RealHypervector>,
        quant: Vec<Hypervector>,
        precision: Precision,
    ) -> Result<Self> {
        let model = Model::new(labels, real, precision)?;
        if model.quant != quant {
            return Err(HdcError::InvalidModel(
                "quantized classes do not match the real classes".into(),
            ));
        }
        Ok(model)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn real_classes(&self) -> &[RealHypervector] {
        &self.real
    }

    pub fn quant_classes(&self) -> &[Hypervector] {
        &self.quant
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn dim(&self) -> usize {
        self.real[0].dim()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    /// Global (min, max) over all real components used at the last sync.
    pub fn quantization_range(&self) -> (f64, f64) {
        self.range
    }

    pub fn class_index(&self, label: u32) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    /// Requantizes every class from the real copy over the global min/max.
    pub fn sync(&mut self) -> Result<()> {
        let (lo, hi) = self
            .real
            .iter()
            .map(RealHypervector::min_max)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (c, d)| (a.min(c), b.max(d)));
        let hi = if hi > lo { hi } else { lo + 1.0 };
        self.quant = self
            .real
            .iter()
            .map(|r| quantize_hv(r, self.precision, lo, hi))
            .collect::<Result<_>>()?;
        self.range = (lo, hi);
        Ok(())
    }

    /// Associative search over the quantized classes.
    pub fn predict(&self, q: &Hypervector, metric: Metric, kernel: Option<&McamKernel>) -> Result<Prediction> {
        classify(q, &self.quant, metric, kernel)
    }

    /// Cosine search over the non-quantized classes (full-precision baseline).
    pub fn predict_full_precision(&self, q: &Hypervector) -> Result<Prediction> {
        let query = q.to_real();
        let scores = self
            .real
            .iter()
            .map(|c| match cosine_similarity_real(query.values(), c.values()) {
                Err(HdcError::UndefinedSimilarity) => Ok(SimilarityScore {
                    value: 0.0,
                    metric: Metric::Cosine,
                }),
                other => other,
            })
            .collect::<Result<Vec<_>>>()?;
        let label = argmax(&scores).expect("model has classes");
        Ok(Prediction { label, scores })
    }
}

/// Bundles encoded samples per class; the class set is the labels present.
pub fn train_single_pass(encoded: &EncodedSet, precision: Precision) -> Result<Model> {
    let classes: Vec<u32> = encoded.labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    train_single_pass_with_classes(encoded, &classes, precision)
}

/// Bundles encoded samples into the given classes. Classes without samples
/// stay all-zero and are logged.
pub fn train_single_pass_with_classes(encoded: &EncodedSet, classes: &[u32], precision: Precision) -> Result<Model> {
    let first = encoded
        .samples
        .first()
        .ok_or_else(|| HdcError::InvalidInput("cannot train on an empty set".into()))?;
    let dim = first.dim();
    let mut sums = vec![vec![0.0f64; dim]; classes.len()];
    let mut counts = vec![0usize; classes.len()];
    for (hv, label) in encoded.iter() {
        let idx = classes
            .iter()
            .position(|&c| c == label)
            .ok_or(HdcError::InvalidLabel(label))?;
        if hv.dim() != dim {
            return Err(HdcError::ShapeMismatch {
                what: "encoded sample dimension",
                expected: dim,
                got: hv.dim(),
            });
        }
        for (s, &c) in sums[idx].iter_mut().zip(hv.codes()) {
            *s += f64::from(c);
        }
        counts[idx] += 1;
    }
    for (label, _) in classes.iter().zip(&counts).filter(|(_, &n)| n == 0) {
        log::warn!("class {label} has no training samples; its class hypervector is all zeros");
    }
    let real = sums
        .into_iter()
        .map(RealHypervector::new)
        .collect::<Result<Vec<_>>>()?;
    Model::new(classes.to_vec(), real, precision)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HwartConfig {
    pub eta: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub stability_epsilon: f64,
    pub seed: RngSeed,
}

impl Default for HwartConfig {
    fn default() -> Self {
        HwartConfig {
            eta: 0.05,
            batch_size: 64,
            max_epochs: 50,
            patience: 3,
            stability_epsilon: 0.001,
            seed: RngSeed(0),
        }
    }
}

impl HwartConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(HdcError::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        if self.batch_size == 0 {
            return Err(HdcError::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(HdcError::InvalidConfig("patience must be >= 1".into()));
        }
        if !(self.stability_epsilon >= 0.0) {
            return Err(HdcError::InvalidConfig("stability epsilon must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Stabilized,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Fraction of samples predicted correctly while each epoch ran.
    pub epoch_accuracy: Vec<f64>,
    pub epochs: usize,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub predicted: usize,
    pub correct: bool,
    /// `s_pred - s_true`; zero when correct.
    pub gap: f64,
}

/// One retraining step. The quantized copy is not refreshed here.
pub fn hwart_step(
    model: &mut Model,
    q: &Hypervector,
    true_label: u32,
    eta: f64,
    metric: Metric,
    kernel: Option<&McamKernel>,
) -> Result<StepOutcome> {
    let truth = model.class_index(true_label).ok_or(HdcError::InvalidLabel(true_label))?;
    let pred = model.predict(q, metric, kernel)?;
    if pred.label == truth {
        return Ok(StepOutcome {
            predicted: truth,
            correct: true,
            gap: 0.0,
        });
    }
    let gap = pred.scores[pred.label].value - pred.scores[truth].value;
    apply_update(model, q, truth, pred.label, eta * gap)?;
    Ok(StepOutcome {
        predicted: pred.label,
        correct: false,
        gap,
    })
}

/// `C_truth += scale * q`, `C_wrong -= scale * q`.
pub fn apply_update(model: &mut Model, q: &Hypervector, truth: usize, wrong: usize, scale: f64) -> Result<()> {
    model.real[truth].add_scaled(q, scale)?;
    model.real[wrong].add_scaled(q, -scale)
}

/// Epochs of seeded shuffling and per-sample steps, resyncing the quantized
/// copy every `batch_size` samples, until the epoch accuracy changes by less
/// than `stability_epsilon` for `patience` consecutive epochs.
pub fn hwart_train(
    model: &mut Model,
    train: &EncodedSet,
    cfg: &HwartConfig,
    metric: Metric,
    kernel: Option<&McamKernel>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(HdcError::InvalidInput("cannot retrain on an empty set".into()));
    }
    let mut report = TrainReport {
        epoch_accuracy: Vec::new(),
        epochs: 0,
        stop_reason: StopReason::MaxEpochs,
    };
    if cfg.max_epochs == 0 {
        return Ok(report);
    }
    model.sync()?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stable = 0usize;
    for epoch in 0..cfg.max_epochs {
        let mut rng = cfg.seed.derive(epoch as u64).rng();
        order.shuffle(&mut rng);
        let mut correct = 0usize;
        for (i, &idx) in order.iter().enumerate() {
            let outcome = hwart_step(model, &train.samples[idx], train.labels[idx], cfg.eta, metric, kernel)?;
            correct += usize::from(outcome.correct);
            if (i + 1) % cfg.batch_size == 0 {
                model.sync()?;
            }
        }
        if !order.len().is_multiple_of(cfg.batch_size) {
            model.sync()?;
        }
        let acc = correct as f64 / train.len() as f64;
        if let Some(&prev) = report.epoch_accuracy.last() {
            if (acc - prev).abs() < cfg.stability_epsilon {
                stable += 1;
            } else {
                stable = 0;
            }
        }
        report.epoch_accuracy.push(acc);
        report.epochs = epoch + 1;
        log::debug!("hwart epoch {}: accuracy {acc:.4}", epoch + 1);
        if stable >= cfg.patience {
            report.stop_reason = StopReason::Stabilized;
            break;
        }
    }
    Ok(report)
}

/// Fraction of samples whose quantized-model prediction matches the label.
pub fn evaluate(model: &Model, test: &EncodedSet, metric: Metric, kernel: Option<&McamKernel>) -> Result<f64> {
    evaluate_with(model, test, |q| model.predict(q, metric, kernel))
}

/// Accuracy of cosine search over the non-quantized classes.
pub fn evaluate_full_precision(model: &Model, test: &EncodedSet) -> Result<f64> {
    evaluate_with(model, test, |q| model.predict_full_precision(q))
}

fn evaluate_with<F>(model: &Model, test: &EncodedSet, predict: F) -> Result<f64>
where
    F: Fn(&Hypervector) -> Result<Prediction> + Sync,
{
    if test.is_empty() {
        return Err(HdcError::InvalidInput("cannot evaluate on an empty set".into()));
    }
    let correct = test
        .samples
        .par_iter()
        .zip(test.labels.par_iter())
        .map(|(q, &label)| {
            let pred = predict(q)?;
            Ok(usize::from(model.labels[pred.label] == label))
        })
        .try_reduce(|| 0usize, |a, b| Ok::<_, HdcError>(a + b))?;
    Ok(correct as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hv::random_hv;

    fn hv(codes: &[u8], bits: u8) -> Hypervector {
        Hypervector::new(codes.to_vec(), Precision::new(bits).unwrap()).unwrap()
    }

    fn kernel(p: Precision) -> McamKernel {
        McamKernel::for_precision(p, 1.0, 1.0).unwrap()
    }

    #[test]
    fn single_pass_one_sample_per_class() {
        let a = hv(&[1, 2, 3, 0], 2);
        let b = hv(&[0, 0, 1, 3], 2);
        let set = EncodedSet::new(vec![a.clone(), b.clone()], vec![4, 9]).unwrap();
        let m = train_single_pass(&set, Precision::TWO).unwrap();
        assert_eq!(m.labels(), &[4, 9]);
        assert_eq!(m.real_classes()[0].values(), &[1.0, 2.0, 3.0, 0.0]);
        assert_eq!(m.real_classes()[1].values(), &[0.0, 0.0, 1.0, 3.0]);
    }

    #[test]
    fn single_pass_is_linear() {
        let a = hv(&[1, 2, 3, 0], 2);
        let set = EncodedSet::new(vec![a.clone(), a], vec![0, 0]).unwrap();
        let m = train_single_pass(&set, Precision::TWO).unwrap();
        assert_eq!(m.real_classes()[0].values(), &[2.0, 4.0, 6.0, 0.0]);
    }

    #[test]
    fn single_pass_hand_sums() {
        let set = EncodedSet::new(
            vec![hv(&[1, 0, 2, 3], 2), hv(&[3, 3, 0, 1], 2), hv(&[0, 1, 1, 1], 2)],
            vec![0, 1, 0],
        )
        .unwrap();
        let m = train_single_pass(&set, Precision::TWO).unwrap();
        assert_eq!(m.real_classes()[0].values(), &[1.0, 1.0, 3.0, 4.0]);
        assert_eq!(m.real_classes()[1].values(), &[3.0, 3.0, 0.0, 1.0]);
        // Global range [0, 4]: 1 -> round(0.75)=1, 3 -> round(2.25)=2, 4 -> 3.
        assert_eq!(m.quantization_range(), (0.0, 4.0));
        assert_eq!(m.quant_classes()[0].codes(), &[1, 1, 2, 3]);
        assert_eq!(m.quant_classes()[1].codes(), &[2, 2, 0, 1]);
    }

    #[test]
    fn single_pass_empty_class_is_zero() {
        let set = EncodedSet::new(vec![hv(&[1, 1], 1)], vec![0]).unwrap();
        let m = train_single_pass_with_classes(&set, &[0, 1], Precision::ONE).unwrap();
        assert_eq!(m.real_classes()[1].values(), &[0.0, 0.0]);
        assert!(train_single_pass(&EncodedSet::default(), Precision::ONE).is_err());
        assert!(matches!(
            train_single_pass_with_classes(&set, &[5], Precision::ONE),
            Err(HdcError::InvalidLabel(0))
        ));
    }

    fn two_class_model() -> Model {
        let real = vec![
            RealHypervector::new(vec![4.0, 0.0, 4.0, 0.0]).unwrap(),
            RealHypervector::new(vec![0.0, 4.0, 0.0, 4.0]).unwrap(),
        ];
        Model::new(vec![0, 1], real, Precision::TWO).unwrap()
    }

    #[test]
    fn correct_prediction_leaves_model_untouched() {
        let mut m = two_class_model();
        let before = m.clone();
        let out = hwart_step(&mut m, &hv(&[3, 0, 3, 0], 2), 0, 0.5, Metric::Mcam, Some(&kernel(Precision::TWO))).unwrap();
        assert!(out.correct);
        assert_eq!(m, before);
    }

    #[test]
    fn tied_misprediction_is_a_zero_update() {
        let mut m = two_class_model();
        let before = m.clone();
        // Equidistant from both classes; the tie resolves to class 0.
        let q = hv(&[3, 3, 3, 3], 2);
        let out = hwart_step(&mut m, &q, 1, 0.5, Metric::Mcam, Some(&kernel(Precision::TWO))).unwrap();
        assert!(!out.correct);
        assert_eq!(out.gap, 0.0);
        assert_eq!(m.real_classes(), before.real_classes());
    }

    #[test]
    fn update_hand_example() {
        let mut m = two_class_model();
        let q = hv(&[1, 2, 3, 0], 2);
        // eta 0.5, s_pred 0.9, s_true 0.4 -> +-0.25 q
        apply_update(&mut m, &q, 1, 0, 0.5 * (0.9 - 0.4)).unwrap();
        assert_eq!(m.real_classes()[1].values(), &[0.25, 4.5, 0.75, 4.0]);
        assert_eq!(m.real_classes()[0].values(), &[3.75, -0.5, 3.25, 0.0]);
    }

    #[test]
    fn unknown_label_is_rejected() {
        let mut m = two_class_model();
        assert!(matches!(
            hwart_step(&mut m, &hv(&[0, 0, 0, 0], 2), 7, 0.1, Metric::Hamming, None),
            Err(HdcError::InvalidLabel(7))
        ));
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let mut m = two_class_model();
        let before = m.clone();
        let set = EncodedSet::new(vec![hv(&[0, 3, 0, 3], 2)], vec![0]).unwrap();
        let cfg = HwartConfig {
            max_epochs: 0,
            ..HwartConfig::default()
        };
        let report = hwart_train(&mut m, &set, &cfg, Metric::Mcam, Some(&kernel(Precision::TWO))).unwrap();
        assert_eq!(report.epochs, 0);
        assert!(report.epoch_accuracy.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn config_validation() {
        let bad = [
            HwartConfig { eta: 0.0, ..HwartConfig::default() },
            HwartConfig { batch_size: 0, ..HwartConfig::default() },
            HwartConfig { patience: 0, ..HwartConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn evaluate_class_vectors_themselves() {
        let m = two_class_model();
        let set = EncodedSet::new(m.quant_classes().to_vec(), vec![0, 1]).unwrap();
        for metric in [Metric::Cosine, Metric::Hamming, Metric::Mcam] {
            assert_eq!(evaluate(&m, &set, metric, Some(&kernel(Precision::TWO))).unwrap(), 1.0);
        }
        assert!(evaluate(&m, &EncodedSet::default(), Metric::Hamming, None).is_err());
    }

    #[test]
    fn single_class_accuracy_is_label_fraction() {
        let real = vec![RealHypervector::new(vec![1.0, 2.0, 3.0]).unwrap()];
        let m = Model::new(vec![3], real, Precision::ONE).unwrap();
        let samples: Vec<_> = (0..10).map(|s| random_hv(3, Precision::ONE, RngSeed(s)).unwrap()).collect();
        let labels = vec![3, 3, 3, 1, 1, 3, 3, 2, 3, 3];
        let set = EncodedSet::new(samples, labels).unwrap();
        assert_eq!(evaluate(&m, &set, Metric::Hamming, None).unwrap(), 0.7);
    }

    #[test]
    fn from_parts_detects_stale_quantized_copy() {
        let m = two_class_model();
        let mut quant = m.quant_classes().to_vec();
        quant.swap(0, 1);
        assert!(Model::from_parts(m.labels().to_vec(), m.real_classes().to_vec(), quant, Precision::TWO).is_err());
        assert!(Model::from_parts(
            m.labels().to_vec(),
            m.real_classes().to_vec(),
            m.quant_classes().to_vec(),
            Precision::TWO
        )
        .is_ok());
    }
}
