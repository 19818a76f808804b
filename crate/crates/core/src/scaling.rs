//! Score unification and binarization.

use serde::{Deserialize, Serialize};
use libm::erf;

use crate::error::{CareError, Result};

/// Per-point outlier probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbScores(pub Vec<f64>);

impl ProbScores {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryLabels {
    pub values: Vec<u8>,
    /// `+inf` when the scores have zero spread.
    pub threshold: f64,
}

impl BinaryLabels {
    pub fn flagged(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `p(s) = max(0, erf((s - mean) / (std * sqrt 2)))`; all zero when the
/// scores have no spread.
pub fn gaussian_scale(raw: &[f64]) -> ProbScores {
    let (mean, std) = mean_std(raw);
    if !(std > 0.0) {
        return ProbScores(vec![0.0; raw.len()]);
    }
    let denom = std * std::f64::consts::SQRT_2;
    ProbScores(raw.iter().map(|&s| erf((s - mean) / denom).max(0.0)).collect())
}

/// One-sided Chebyshev cutoff `mean + lambda * std` with
/// `lambda = sqrt(1/confidence - 1)`, so at most a `confidence` fraction of
/// any distribution lies at or beyond it. Scores at or above the cutoff are
/// labeled 1.
pub fn cantelli_threshold(scores: &[f64], confidence: f64) -> Result<BinaryLabels> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(CareError::param(format!(
            "confidence {confidence} outside (0, 1)"
        )));
    }
    if scores.len() < 2 {
        return Err(CareError::param("thresholding needs at least 2 scores"));
    }
    let (mean, std) = mean_std(scores);
    if !(std > 0.0) {
        return Ok(BinaryLabels {
            values: vec![0; scores.len()],
            threshold: f64::INFINITY,
        });
    }
    let lambda = (1.0 / confidence - 1.0).sqrt();
    let threshold = mean + lambda * std;
    Ok(BinaryLabels {
        values: scores.iter().map(|&s| u8::from(s >= threshold)).collect(),
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mean_maps_to_zero() {
        let p = gaussian_scale(&[1.0, 2.0, 3.0]);
        assert_eq!(p.values()[1], 0.0);
        assert_eq!(p.values()[0], 0.0);
    }

    #[test]
    fn one_sqrt2_sigma_maps_to_erf_one() {
        // For (0, 0, v): mean v/3, population std v*sqrt(2)/3, so v sits
        // exactly sqrt(2) standard deviations above the mean.
        let p = gaussian_scale(&[0.0, 0.0, 3.0]);
        assert!((p.values()[2] - 0.842_700_792_949_714_9).abs() < 1e-12, "{}", p.values()[2]);
        assert_eq!(&p.values()[..2], &[0.0, 0.0]);
    }

    #[test]
    fn constant_scores_scale_to_zero() {
        assert_eq!(gaussian_scale(&[4.0; 5]).0, vec![0.0; 5]);
    }

    #[test]
    fn cantelli_worked_example() {
        let l = cantelli_threshold(&[0.0, 0.0, 0.0, 0.0, 10.0], 0.2).unwrap();
        assert_eq!(l.threshold, 10.0);
        assert_eq!(l.values, vec![0, 0, 0, 0, 1]);
    }

    #[test]
    fn cantelli_constant_and_bad_confidence() {
        let l = cantelli_threshold(&[2.0; 4], 0.2).unwrap();
        assert_eq!(l.flagged(), 0);
        assert!(l.threshold.is_infinite());
        assert!(cantelli_threshold(&[1.0, 2.0], 0.0).is_err());
        assert!(cantelli_threshold(&[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn cantelli_half_confidence_is_one_sigma() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (m, sd) = mean_std(&s);
        let l = cantelli_threshold(&s, 0.5).unwrap();
        assert!((l.threshold - (m + sd)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn scaling_is_monotone_and_bounded(raw in prop::collection::vec(-1e3f64..1e3, 2..60)) {
            let p = gaussian_scale(&raw);
            for i in 0..raw.len() {
                prop_assert!((0.0..=1.0).contains(&p.0[i]));
                for j in 0..raw.len() {
                    if raw[i] >= raw[j] {
                        prop_assert!(p.0[i] >= p.0[j]);
                    }
                }
            }
        }

        #[test]
        fn cantelli_respects_bound(raw in prop::collection::vec(-1e3f64..1e3, 2..200)) {
            let l = cantelli_threshold(&raw, 0.2).unwrap();
            // Cantelli holds exactly for the empirical distribution.
            prop_assert!(l.flagged() as f64 / raw.len() as f64 <= 0.2 + 1e-12);
        }

        #[test]
        fn cantelli_affine_invariant(
            raw in prop::collection::vec(-100f64..100.0, 2..80),
            scale in 0.5f64..4.0,
            shift in -10f64..10.0,
        ) {
            // Exact boundary hits can flip under rounding, so compare away
            // from the threshold only.
            let a = cantelli_threshold(&raw, 0.2).unwrap();
            let moved: Vec<f64> = raw.iter().map(|v| v * scale + shift).collect();
            let b = cantelli_threshold(&moved, 0.2).unwrap();
            for i in 0..raw.len() {
                if (raw[i] - a.threshold).abs() > 1e-9 * a.threshold.abs().max(1.0) {
                    prop_assert_eq!(a.values[i], b.values[i]);
                }
            }
        }
    }
}
