//! Detector weighting, pruning and weighted score aggregation.

use serde::Serialize;

use crate::error::{CareError, Result};

/// Lower clamp on estimated errors before weighting; `w(0)` diverges.
pub const MIN_ERROR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectorWeights {
    pub values: Vec<f64>,
    /// `true` marks a discarded detector.
    pub pruned: Vec<bool>,
    /// Set when every detector crossed the threshold and the best one was
    /// kept anyway.
    pub retained_fallback: bool,
}

impl DetectorWeights {
    pub fn pruned_count(&self) -> usize {
        self.pruned.iter().filter(|&&p| p).count()
    }
}

/// `w = 0.5 ln(2/e - 1)` on errors clamped to `[1e-6, 1]`. Detectors with
/// `e >= prune_threshold` are pruned; if that would prune all of them, the
/// lowest-error detector (lowest index on ties) is kept.
pub fn compute_weights(errors: &[f64], prune_threshold: f64) -> DetectorWeights {
    let clamped: Vec<f64> = errors.iter().map(|e| e.clamp(MIN_ERROR, 1.0)).collect();
    let values = clamped.iter().map(|e| 0.5 * (2.0 / e - 1.0).ln()).collect();
    let mut pruned: Vec<bool> = clamped.iter().map(|&e| e >= prune_threshold).collect();
    let retained_fallback = !pruned.is_empty() && pruned.iter().all(|&p| p);
    if retained_fallback {
        let best = clamped
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
            .expect("nonempty");
        pruned[best] = false;
    }
    DetectorWeights {
        values,
        pruned,
        retained_fallback,
    }
}

/// Weights used without pruning.
pub fn unpruned(errors: &[f64]) -> DetectorWeights {
    compute_weights(errors, f64::INFINITY)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub scores: Vec<f64>,
    /// True when the surviving weights summed to zero and a plain mean of
    /// the surviving detectors was used instead.
    pub unweighted_fallback: bool,
}

/// Per-point weighted mean of the unpruned rows of `probs`.
pub fn weighted_aggregate(probs: &[Vec<f64>], weights: &DetectorWeights) -> Result<Aggregate> {
    if probs.len() != weights.values.len() {
        return Err(CareError::param("one weight per detector row is required"));
    }
    let active: Vec<usize> = (0..probs.len()).filter(|&i| !weights.pruned[i]).collect();
    if active.is_empty() {
        return Err(CareError::param("no unpruned detector to aggregate"));
    }
    let n = probs[active[0]].len();
    if active.iter().any(|&i| probs[i].len() != n) {
        return Err(CareError::param("detector rows differ in length"));
    }
    let total: f64 = active.iter().map(|&i| weights.values[i]).sum();
    let unweighted_fallback = !(total > 0.0);
    let (coef, denom): (Vec<f64>, f64) = if unweighted_fallback {
        (vec![1.0; active.len()], active.len() as f64)
    } else {
        (active.iter().map(|&i| weights.values[i]).collect(), total)
    };
    let scores = (0..n)
        .map(|x| {
            let s: f64 = active.iter().zip(&coef).map(|(&i, c)| c * probs[i][x]).sum();
            (s / denom).clamp(0.0, 1.0)
        })
        .collect();
    Ok(Aggregate {
        scores,
        unweighted_fallback,
    })
}

/// Plain per-point mean over all rows.
pub fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.first().map_or(0, Vec::len);
    let b = rows.len() as f64;
    (0..n)
        .map(|x| rows.iter().map(|r| r[x]).sum::<f64>() / b)
        .collect()
}

/// Plain per-point maximum over all rows.
pub fn max_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.first().map_or(0, Vec::len);
    (0..n)
        .map(|x| rows.iter().map(|r| r[x]).fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_formula_points() {
        let w = compute_weights(&[0.5, 1.0, 0.2], 0.5);
        assert!((w.values[0] - 0.5 * 3f64.ln()).abs() < 1e-15);
        assert!((w.values[0] - 0.549_306_144_334_054_8).abs() < 1e-12);
        assert_eq!(w.values[1], 0.0);
        assert!((w.values[2] - 0.5 * 9f64.ln()).abs() < 1e-15);
        assert_eq!(w.pruned, vec![true, true, false]);
    }

    #[test]
    fn zero_error_is_clamped() {
        let w = compute_weights(&[0.0], 0.5);
        let expect = 0.5 * (2.0 / MIN_ERROR - 1.0).ln();
        assert!((w.values[0] - expect).abs() < 1e-12);
        assert!(w.values[0].is_finite());
    }

    #[test]
    fn four_detector_pruning_mask() {
        let w = compute_weights(&[0.2, 0.4, 0.6, 0.8], 0.5);
        assert_eq!(w.pruned, vec![false, false, true, true]);
        assert_eq!(w.pruned_count(), 2);
        assert!(!w.retained_fallback);
    }

    #[test]
    fn all_pruned_keeps_the_best() {
        let w = compute_weights(&[0.9, 0.6, 0.7, 0.6], 0.5);
        assert_eq!(w.pruned, vec![true, false, true, true]);
        assert!(w.retained_fallback);
    }

    #[test]
    fn aggregate_examples() {
        let probs = vec![vec![0.9, 0.1], vec![0.3, 0.5]];
        let mut w = unpruned(&[0.2, 0.2]);
        w.values = vec![2.0, 1.0];
        let a = weighted_aggregate(&probs, &w).unwrap();
        assert!((a.scores[0] - 0.7).abs() < 1e-15);

        w.values = vec![1.0, 0.0];
        assert_eq!(weighted_aggregate(&probs, &w).unwrap().scores, probs[0]);

        w.values = vec![0.4, 0.4];
        let eq = weighted_aggregate(&probs, &w).unwrap();
        assert!((eq.scores[0] - 0.6).abs() < 1e-15);
        assert!((eq.scores[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_sum_falls_back_to_mean() {
        let probs = vec![vec![0.2], vec![0.6], vec![1.0]];
        let w = compute_weights(&[1.0, 1.0, 0.1], 0.5);
        // Only the third survives, with positive weight.
        assert_eq!(weighted_aggregate(&probs, &w).unwrap().scores, vec![1.0]);
        let w = compute_weights(&[1.0, 1.0, 1.0], 2.0);
        let a = weighted_aggregate(&probs, &w).unwrap();
        assert!(a.unweighted_fallback);
        assert!((a.scores[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn pruned_rows_are_ignored() {
        let probs = vec![vec![0.0], vec![1.0]];
        let w = compute_weights(&[0.1, 0.7], 0.5);
        assert_eq!(weighted_aggregate(&probs, &w).unwrap().scores, vec![0.0]);
    }
}
