//! Cosine, Hamming and MCAM-conductance similarity, and argmax classification.
//!
//! The MCAM metric models a multi-bit CAM row: each cell contributes a
//! conductance that rises with the mismatch between the stored and searched
//! code and saturates at `g_max`. The row sum is a distance (lower is a better
//! match); it is turned into a similarity in `[0, 1]` via
//! `1 - distance / (D * g_max)` so every metric ranks "higher = more similar".

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{HdcError, Result};
use crate::hv::{Hypervector, Precision};

pub const DEFAULT_MCAM_BETA: f64 = 1.0;
pub const DEFAULT_MCAM_GMAX: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Hamming,
    Mcam,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::Hamming => "hamming",
            Metric::Mcam => "mcam",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = HdcError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cosine" => Ok(Metric::Cosine),
            "hamming" => Ok(Metric::Hamming),
            "mcam" => Ok(Metric::Mcam),
            other => Err(HdcError::InvalidConfig(format!("unknown metric '{other}'"))),
        }
    }
}

/// Saturating per-cell conductance curve
/// `g(d) = g_max * (1 - exp(-beta d)) / (1 - exp(-beta d_max))`.
#[derive(Debug, Clone, PartialEq)]
pub struct McamKernel {
    g_max: f64,
    beta: f64,
    d_max: u8,
    table: Vec<f64>,
}

impl McamKernel {
    pub fn new(g_max: f64, beta: f64, d_max: u8) -> Result<Self> {
        if !(g_max > 0.0) || !g_max.is_finite() {
            return Err(HdcError::InvalidConfig(format!("g_max must be positive, got {g_max}")));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(HdcError::InvalidConfig(format!("beta must be positive, got {beta}")));
        }
        if d_max == 0 {
            return Err(HdcError::InvalidConfig("d_max must be >= 1".into()));
        }
        let norm = -(-beta * f64::from(d_max)).exp_m1();
        let mut table: Vec<f64> = (0..=d_max)
            .map(|d| g_max * (-(-beta * f64::from(d)).exp_m1() / norm))
            .collect();
        table[usize::from(d_max)] = g_max;
        Ok(McamKernel {
            g_max,
            beta,
            d_max,
            table,
        })
    }

    /// Kernel whose `d_max` is the largest code of `precision`.
    pub fn for_precision(precision: Precision, g_max: f64, beta: f64) -> Result<Self> {
        McamKernel::new(g_max, beta, precision.max_code())
    }

    pub fn g_max(&self) -> f64 {
        self.g_max
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn d_max(&self) -> u8 {
        self.d_max
    }

    pub fn cell(&self, mismatch: u32) -> Result<f64> {
        if mismatch > u32::from(self.d_max) {
            return Err(HdcError::InvalidMismatch {
                mismatch,
                max: self.d_max,
            });
        }
        Ok(self.table[mismatch as usize])
    }

    #[inline]
    fn cell_unchecked(&self, mismatch: u8) -> f64 {
        self.table[mismatch as usize]
    }
}

/// A similarity value tagged with the metric that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub value: f64,
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Index of the winning class HV.
    pub label: usize,
    pub scores: Vec<SimilarityScore>,
}

fn check_shapes(q: &Hypervector, c: &Hypervector) -> Result<()> {
    if q.dim() != c.dim() {
        return Err(HdcError::ShapeMismatch {
            what: "hypervector pair",
            expected: q.dim(),
            got: c.dim(),
        });
    }
    if q.precision() != c.precision() {
        return Err(HdcError::InvalidInput(format!(
            "precision mismatch: {} vs {} bits",
            q.precision(),
            c.precision()
        )));
    }
    Ok(())
}

pub fn mcam_cell(mismatch: u32, kernel: &McamKernel) -> Result<f64> {
    kernel.cell(mismatch)
}

/// Row conductance: sum of per-cell conductances over all dimensions.
pub fn mcam_distance(q: &Hypervector, c: &Hypervector, kernel: &McamKernel) -> Result<f64> {
    check_shapes(q, c)?;
    if q.precision().max_code() > kernel.d_max {
        return Err(HdcError::InvalidConfig(format!(
            "kernel d_max {} is below the {}-bit code range",
            kernel.d_max,
            q.precision()
        )));
    }
    Ok(q.codes()
        .iter()
        .zip(c.codes())
        .map(|(&a, &b)| kernel.cell_unchecked(a.abs_diff(b)))
        .sum())
}

pub fn mcam_similarity(q: &Hypervector, c: &Hypervector, kernel: &McamKernel) -> Result<SimilarityScore> {
    let distance = mcam_distance(q, c, kernel)?;
    Ok(SimilarityScore {
        value: (1.0 - distance / (q.dim() as f64 * kernel.g_max)).clamp(0.0, 1.0),
        metric: Metric::Mcam,
    })
}

/// Fraction of exactly matching components.
pub fn hamming_similarity(q: &Hypervector, c: &Hypervector) -> Result<SimilarityScore> {
    if q.dim() != c.dim() {
        return Err(HdcError::ShapeMismatch {
            what: "hypervector pair",
            expected: q.dim(),
            got: c.dim(),
        });
    }
    let matches = q.codes().iter().zip(c.codes()).filter(|(a, b)| a == b).count();
    Ok(SimilarityScore {
        value: matches as f64 / q.dim() as f64,
        metric: Metric::Hamming,
    })
}

pub fn cosine_similarity(q: &Hypervector, c: &Hypervector) -> Result<SimilarityScore> {
    if q.dim() != c.dim() {
        return Err(HdcError::ShapeMismatch {
            what: "hypervector pair",
            expected: q.dim(),
            got: c.dim(),
        });
    }
    cosine(
        q.codes().iter().map(|&v| f64::from(v)),
        c.codes().iter().map(|&v| f64::from(v)),
    )
}

/// Cosine over real slices (used for the non-quantized class copies).
pub fn cosine_similarity_real(q: &[f64], c: &[f64]) -> Result<SimilarityScore> {
    if q.len() != c.len() {
        return Err(HdcError::ShapeMismatch {
            what: "vector pair",
            expected: q.len(),
            got: c.len(),
        });
    }
    cosine(q.iter().copied(), c.iter().copied())
}

fn cosine<A, B>(a: A, b: B) -> Result<SimilarityScore>
where
    A: Iterator<Item = f64>,
    B: Iterator<Item = f64>,
{
    let (dot, na, nb) = a
        .zip(b)
        .fold((0.0, 0.0, 0.0), |(d, x, y), (u, v)| (d + u * v, x + u * u, y + v * v));
    if na == 0.0 || nb == 0.0 {
        return Err(HdcError::UndefinedSimilarity);
    }
    Ok(SimilarityScore {
        value: (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0),
        metric: Metric::Cosine,
    })
}

/// Similarity of `q` against one class HV under `metric`.
///
/// A zero class or query vector has no defined cosine; during classification
/// it scores 0 so it never beats a defined match.
pub fn score(q: &Hypervector, c: &Hypervector, metric: Metric, kernel: Option<&McamKernel>) -> Result<SimilarityScore> {
    match metric {
        Metric::Cosine => match cosine_similarity(q, c) {
            Err(HdcError::UndefinedSimilarity) => Ok(SimilarityScore {
                value: 0.0,
                metric,
            }),
            other => other,
        },
        Metric::Hamming => hamming_similarity(q, c),
        Metric::Mcam => {
            let kernel = kernel.ok_or_else(|| {
                HdcError::InvalidConfig("the mcam metric needs a kernel".into())
            })?;
            mcam_similarity(q, c, kernel)
        }
    }
}

/// Index of the highest score; ties go to the lowest index.
pub fn argmax(scores: &[SimilarityScore]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        match best {
            Some((_, v)) if s.value <= v => {}
            _ => best = Some((i, s.value)),
        }
    }
    best.map(|(i, _)| i)
}

pub fn classify(
    q: &Hypervector,
    classes: &[Hypervector],
    metric: Metric,
    kernel: Option<&McamKernel>,
) -> Result<Prediction> {
    if classes.is_empty() {
        return Err(HdcError::InvalidModel("no class hypervectors".into()));
    }
    if metric == Metric::Mcam && kernel.is_none() {
        return Err(HdcError::InvalidConfig("the mcam metric needs a kernel".into()));
    }
    let scores = classes
        .iter()
        .map(|c| score(q, c, metric, kernel))
        .collect::<Result<Vec<_>>>()?;
    let label = argmax(&scores).expect("non-empty scores");
    Ok(Prediction { label, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hv::{random_hv, RngSeed};
    use proptest::prelude::*;

    fn hv(codes: &[u8], bits: u8) -> Hypervector {
        Hypervector::new(codes.to_vec(), Precision::new(bits).unwrap()).unwrap()
    }

    fn closed_form(d: f64, g_max: f64, beta: f64, d_max: f64) -> f64 {
        g_max * (1.0 - (-beta * d).exp()) / (1.0 - (-beta * d_max).exp())
    }

    #[test]
    fn kernel_endpoints() {
        let k = McamKernel::new(2.5, 0.7, 7).unwrap();
        assert_eq!(k.cell(0).unwrap(), 0.0);
        assert!((k.cell(7).unwrap() - 2.5).abs() < 1e-12);
        assert!(matches!(k.cell(8), Err(HdcError::InvalidMismatch { .. })));
    }

    #[test]
    fn kernel_saturates_early_for_large_beta() {
        let k = McamKernel::new(1.0, 20.0, 7).unwrap();
        assert!((k.cell(1).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn kernel_rejects_bad_parameters() {
        assert!(McamKernel::new(0.0, 1.0, 3).is_err());
        assert!(McamKernel::new(1.0, -1.0, 3).is_err());
        assert!(McamKernel::new(1.0, f64::NAN, 3).is_err());
        assert!(McamKernel::new(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn mcam_distance_hand_example() {
        let k = McamKernel::new(1.0, 1.0, 3).unwrap();
        let q = hv(&[0, 1, 3], 2);
        let c = hv(&[3, 1, 1], 2);
        let expected = closed_form(3.0, 1.0, 1.0, 3.0) + 0.0 + closed_form(2.0, 1.0, 1.0, 3.0);
        assert!((mcam_distance(&q, &c, &k).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn mcam_identity_and_full_mismatch() {
        let k = McamKernel::for_precision(Precision::THREE, 1.0, 1.0).unwrap();
        let q = hv(&[0, 7, 3, 5], 3);
        assert_eq!(mcam_distance(&q, &q, &k).unwrap(), 0.0);
        assert_eq!(mcam_similarity(&q, &q, &k).unwrap().value, 1.0);
        let a = hv(&[0, 7, 0, 7], 3);
        let b = hv(&[7, 0, 7, 0], 3);
        assert!(mcam_similarity(&a, &b, &k).unwrap().value.abs() < 1e-12);
        assert!(mcam_distance(&a, &hv(&[1, 2, 3], 3), &k).is_err());
    }

    #[test]
    fn hamming_examples() {
        let q = hv(&[0, 1, 0, 1], 1);
        assert_eq!(hamming_similarity(&q, &q).unwrap().value, 1.0);
        assert_eq!(hamming_similarity(&q, &hv(&[1, 1, 0, 0], 1)).unwrap().value, 0.5);
        for s in 0..20 {
            let a = random_hv(4000, Precision::ONE, RngSeed(100 + s)).unwrap();
            let b = random_hv(4000, Precision::ONE, RngSeed(200 + s)).unwrap();
            let v = hamming_similarity(&a, &b).unwrap().value;
            assert!((v - 0.5).abs() <= 0.03, "{v}");
        }
    }

    #[test]
    fn cosine_examples() {
        let a = cosine_similarity_real(&[1.0, 2.0, 2.0], &[1.0, 2.0, 2.0]).unwrap();
        assert!((a.value - 1.0).abs() < 1e-12);
        let b = cosine_similarity_real(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(b.value, 0.0);
        let c = cosine_similarity_real(&[1.0, 2.0, 2.0], &[2.0, 4.0, 4.0]).unwrap();
        assert!((c.value - 1.0).abs() < 1e-12);
        assert!(matches!(
            cosine_similarity_real(&[0.0, 0.0], &[1.0, 1.0]),
            Err(HdcError::UndefinedSimilarity)
        ));
        assert!(matches!(
            cosine_similarity(&hv(&[0, 0], 1), &hv(&[1, 0], 1)),
            Err(HdcError::UndefinedSimilarity)
        ));
    }

    #[test]
    fn classify_exact_match_and_single_class() {
        let k = McamKernel::for_precision(Precision::TWO, 1.0, 1.0).unwrap();
        let classes = vec![hv(&[0, 0, 1, 1], 2), hv(&[3, 2, 1, 0], 2), hv(&[1, 3, 3, 2], 2)];
        for metric in [Metric::Cosine, Metric::Hamming, Metric::Mcam] {
            let p = classify(&classes[2], &classes, metric, Some(&k)).unwrap();
            assert_eq!(p.label, 2, "{metric}");
            let p = classify(&classes[0], &classes[1..2], metric, Some(&k)).unwrap();
            assert_eq!(p.label, 0);
        }
    }

    #[test]
    fn classify_errors() {
        let q = hv(&[1, 0], 1);
        assert!(matches!(classify(&q, &[], Metric::Hamming, None), Err(HdcError::InvalidModel(_))));
        assert!(matches!(
            classify(&q, &[q.clone()], Metric::Mcam, None),
            Err(HdcError::InvalidConfig(_))
        ));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let c = hv(&[1, 1, 0, 0], 1);
        let classes = vec![hv(&[1, 0, 0, 0], 1), c.clone(), c.clone()];
        let p = classify(&c, &classes[1..], Metric::Hamming, None).unwrap();
        assert_eq!(p.label, 0);
        let q = hv(&[1, 1, 1, 1], 1);
        let p = classify(&q, &[hv(&[1, 1, 0, 0], 1), hv(&[0, 0, 1, 1], 1)], Metric::Hamming, None).unwrap();
        assert_eq!(p.label, 0);
    }

    #[test]
    fn classify_matches_brute_force_scores() {
        let k = McamKernel::for_precision(Precision::THREE, 1.0, 0.8).unwrap();
        for s in 0..50u64 {
            let classes: Vec<_> = (0..3)
                .map(|i| random_hv(8, Precision::THREE, RngSeed(s * 10 + i)).unwrap())
                .collect();
            let q = random_hv(8, Precision::THREE, RngSeed(s * 10 + 9)).unwrap();
            // Oracle: lowest summed closed-form conductance, first index on ties.
            let dists: Vec<f64> = classes
                .iter()
                .map(|c| {
                    q.codes()
                        .iter()
                        .zip(c.codes())
                        .map(|(&a, &b)| closed_form((a as f64 - b as f64).abs(), 1.0, 0.8, 7.0))
                        .sum()
                })
                .collect();
            let mut best = 0;
            for i in 1..3 {
                if dists[i] < dists[best] - 1e-12 {
                    best = i;
                }
            }
            let p = classify(&q, &classes, Metric::Mcam, Some(&k)).unwrap();
            assert_eq!(p.label, best, "seed {s}: {dists:?}");
        }
    }

    proptest! {
        #[test]
        fn kernel_is_monotone_and_concave(beta in 0.01f64..10.0, g_max in 0.1f64..10.0, d_max in 1u8..=7) {
            let k = McamKernel::new(g_max, beta, d_max).unwrap();
            let g: Vec<f64> = (0..=d_max as u32).map(|d| k.cell(d).unwrap()).collect();
            prop_assert_eq!(g[0], 0.0);
            prop_assert!((g[d_max as usize] - g_max).abs() <= 1e-12 * g_max);
            for w in g.windows(2) {
                prop_assert!(w[0] <= w[1]);
                prop_assert!(w[1] <= g_max * (1.0 + 1e-12));
            }
            for w in g.windows(3) {
                prop_assert!(w[2] - 2.0 * w[1] + w[0] <= 1e-12 * g_max);
            }
        }

        #[test]
        fn metrics_are_symmetric(seed in any::<u64>(), bits in 1u8..=3, beta in 0.1f64..5.0) {
            let p = Precision::new(bits).unwrap();
            let k = McamKernel::for_precision(p, 1.0, beta).unwrap();
            let a = random_hv(64, p, RngSeed(seed)).unwrap();
            let b = random_hv(64, p, RngSeed(seed.wrapping_add(1))).unwrap();
            prop_assert_eq!(mcam_distance(&a, &b, &k).unwrap(), mcam_distance(&b, &a, &k).unwrap());
            prop_assert_eq!(hamming_similarity(&a, &b).unwrap(), hamming_similarity(&b, &a).unwrap());
        }
    }
}
