//! Studies on simulated detector outputs: how well the error estimator
//! recovers known error rates, and how the aggregation rules compare.

use rayon::prelude::*;
use serde::Serialize;

use crate::agreement::agreement_over;
use crate::dataset::{generate_detector_outputs, DetectorTrial, SyntheticDetectorSpec};
use crate::ensemble::{compute_weights, unpruned, DetectorWeights};
use crate::error::Result;
use crate::error_estimation::{estimate_errors_from_rates, ErrorEstimate};

/// Errors are defined over all points, so agreement is measured over all
/// points as well.
fn estimate_trial(trial: &DetectorTrial) -> Result<ErrorEstimate> {
    let all: Vec<usize> = (0..trial.truth.len()).collect();
    estimate_errors_from_rates(&agreement_over(&trial.outputs, &all)?)
}

/// Fraction of points on which each detector disagrees with the truth.
pub fn empirical_errors(trial: &DetectorTrial) -> Vec<f64> {
    let n = trial.truth.len() as f64;
    trial
        .outputs
        .iter()
        .map(|o| o.iter().zip(&trial.truth).filter(|(a, b)| a != b).count() as f64 / n)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub true_errors: Vec<f64>,
    /// Mean over snapshots of `|e_hat - e_true|`, per detector.
    pub mean_gap: Vec<f64>,
    /// Maximum over snapshots, per detector.
    pub max_gap: Vec<f64>,
    /// Mean over snapshots and detectors.
    pub overall_mean_gap: f64,
    pub unconverged: usize,
}

/// Estimation gap between the configured true error rates and the
/// estimates from agreement rates, over `spec.trials` snapshots.
pub fn estimation_gap_study(spec: &SyntheticDetectorSpec) -> Result<GapReport> {
    let trials = generate_detector_outputs(spec)?;
    let estimates: Vec<ErrorEstimate> = trials.par_iter().map(estimate_trial).collect::<Result<_>>()?;
    let b = spec.true_errors.len();
    let mut mean_gap = vec![0.0; b];
    let mut max_gap = vec![0.0f64; b];
    for est in &estimates {
        for i in 0..b {
            let gap = (est.individual[i] - spec.true_errors[i]).abs();
            mean_gap[i] += gap;
            max_gap[i] = max_gap[i].max(gap);
        }
    }
    let t = estimates.len() as f64;
    for g in &mut mean_gap {
        *g /= t;
    }
    Ok(GapReport {
        true_errors: spec.true_errors.clone(),
        overall_mean_gap: mean_gap.iter().sum::<f64>() / b as f64,
        mean_gap,
        max_gap,
        unconverged: estimates.iter().filter(|e| !e.converged).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregationReport {
    pub true_errors: Vec<f64>,
    pub outlier_fraction: f64,
    /// Per-trial accuracy of the plain vote.
    pub average: Vec<f64>,
    pub weighted: Vec<f64>,
    pub pruned_weighted: Vec<f64>,
    pub mean_estimated_errors: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl AggregationReport {
    pub fn mean_accuracies(&self) -> [f64; 3] {
        [mean(&self.average), mean(&self.weighted), mean(&self.pruned_weighted)]
    }
}

/// Labels a point 1 when the weighted share of detectors voting 1 is at
/// least one half, and returns the accuracy against the truth.
fn vote_accuracy(trial: &DetectorTrial, weights: &DetectorWeights) -> f64 {
    let active: Vec<usize> = (0..trial.outputs.len()).filter(|&i| !weights.pruned[i]).collect();
    let total: f64 = active.iter().map(|&i| weights.values[i]).sum();
    let (coef, denom): (Vec<f64>, f64) = if total > 0.0 {
        (active.iter().map(|&i| weights.values[i]).collect(), total)
    } else {
        (vec![1.0; active.len()], active.len() as f64)
    };
    let correct = (0..trial.truth.len())
        .filter(|&x| {
            let share: f64 = active
                .iter()
                .zip(&coef)
                .map(|(&i, c)| c * f64::from(trial.outputs[i][x]))
                .sum::<f64>()
                / denom;
            u8::from(share >= 0.5) == trial.truth[x]
        })
        .count();
    correct as f64 / trial.truth.len() as f64
}

/// Accuracy of plain, weighted and pruned-weighted voting per trial, with
/// weights from the estimated error rates.
pub fn aggregation_study(spec: &SyntheticDetectorSpec, prune_threshold: f64) -> Result<AggregationReport> {
    let trials = generate_detector_outputs(spec)?;
    let b = spec.true_errors.len();
    let rows: Vec<(f64, f64, f64, Vec<f64>)> = trials
        .par_iter()
        .map(|trial| {
            let est = estimate_trial(trial)?;
            let equal = DetectorWeights {
                values: vec![1.0; b],
                pruned: vec![false; b],
                retained_fallback: false,
            };
            Ok((
                vote_accuracy(trial, &equal),
                vote_accuracy(trial, &unpruned(&est.individual)),
                vote_accuracy(trial, &compute_weights(&est.individual, prune_threshold)),
                est.individual,
            ))
        })
        .collect::<Result<_>>()?;
    let t = rows.len() as f64;
    let mut mean_estimated_errors = vec![0.0; b];
    for r in &rows {
        for i in 0..b {
            mean_estimated_errors[i] += r.3[i] / t;
        }
    }
    Ok(AggregationReport {
        true_errors: spec.true_errors.clone(),
        outlier_fraction: spec.outlier_fraction,
        average: rows.iter().map(|r| r.0).collect(),
        weighted: rows.iter().map(|r| r.1).collect(),
        pruned_weighted: rows.iter().map(|r| r.2).collect(),
        mean_estimated_errors,
    })
}
