//! The sequential ensemble and its feature-bagging baselines.

mod sampling;
mod weights;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use self::sampling::{fvps_sample, weighted_without_replacement, FvpsParams, FvpsSample};
pub use self::weights::{
    compute_weights, max_rows, mean_rows, unpruned, weighted_aggregate, Aggregate,
    DetectorWeights, MIN_ERROR,
};
use crate::agreement::{pairwise_agreement, AgreementSummary};
use crate::dataset::Dataset;
use crate::detectors::{make_feature_bags, score, DetectorKind, FeatureBag, Reference};
use crate::error::{CareError, Result};
use crate::error_estimation::{estimate_errors, ErrorEstimate};
use crate::rng::{derive_seed, rng_from};
use crate::scaling::{cantelli_threshold, gaussian_scale, mean_std};

const TAG_BAGS: u64 = 0x6261_6773;
const TAG_SAMPLE: u64 = 0x7361_6d70;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleMode {
    /// Sequential ensemble with weighting, pruning and FVPS.
    #[default]
    Care,
    /// One round of feature bagging on the full data, averaged.
    Fb0Avg,
    /// One round of feature bagging, maximum over detectors.
    Fb0Max,
    /// One round of feature bagging, weighted by estimated errors without
    /// pruning.
    Fb0Weighted,
    /// A single detector on all features; scores are raw.
    Plain,
}

impl std::str::FromStr for EnsembleMode {
    type Err = CareError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "care" => Ok(EnsembleMode::Care),
            "fb0-avg" => Ok(EnsembleMode::Fb0Avg),
            "fb0-max" => Ok(EnsembleMode::Fb0Max),
            "fb0-weighted" => Ok(EnsembleMode::Fb0Weighted),
            "plain" => Ok(EnsembleMode::Plain),
            other => Err(CareError::param(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub k: usize,
    pub b: usize,
    pub max_iter: usize,
    pub confidence: f64,
    pub detector_kind: DetectorKind,
    pub prune_threshold: f64,
    pub seed: u64,
    pub fvps_min_abs: usize,
    pub fvps_max_abs: usize,
    pub mode: EnsembleMode,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            k: 5,
            b: 100,
            max_iter: 15,
            confidence: 0.2,
            detector_kind: DetectorKind::Lof,
            prune_threshold: 0.5,
            seed: 0,
            fvps_min_abs: 50,
            fvps_max_abs: 1000,
            mode: EnsembleMode::Care,
        }
    }
}

impl EnsembleConfig {
    pub fn new(detector_kind: DetectorKind, seed: u64) -> Self {
        EnsembleConfig {
            detector_kind,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.b == 0 || self.fvps_min_abs == 0 || self.fvps_max_abs == 0 {
            return Err(CareError::param("k, b and the sampling bounds must be positive"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(CareError::param("confidence must lie in (0, 1)"));
        }
        if !(self.prune_threshold > 0.0 && self.prune_threshold <= 1.0) {
            return Err(CareError::param("prune threshold must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Why the iteration loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxIterations,
    /// Agreement dropped; the result of the previous iteration is returned.
    AgreementDrop,
    /// Filtering left too few points to build another sample.
    SampleExhausted,
    /// Non-sequential modes run a single round.
    SingleRound,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// CCDF-AUC of the agreement rates; absent when no detector flagged
    /// anything.
    pub auc: Option<f64>,
    pub union_size: usize,
    pub pruned: usize,
    pub sample_size: usize,
    /// Points filtered when drawing the next sample.
    pub filtered: Option<usize>,
    /// Whether this iteration's combination is part of the returned scores.
    pub included: bool,
    pub note: Option<String>,
    #[serde(skip_serializing)]
    pub wall_seconds: f64,
}

/// Agreement matrix and error estimate of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRecord {
    pub iteration: usize,
    pub agreement: Vec<f64>,
    pub estimate: ErrorEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub iterations: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    #[serde(skip_serializing)]
    pub estimates: Vec<EstimateRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// Outlier scores; probabilities in every mode except `Plain`.
    pub scores: Vec<f64>,
    /// Point indices by descending score, lower index first on ties.
    pub rank: Vec<usize>,
    pub diagnostics: Diagnostics,
}

/// Indices sorted by descending score, ties broken by lower index.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut r: Vec<usize> = (0..scores.len()).collect();
    r.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    r
}

/// True when the newest value falls below the history mean by more than the
/// (population) standard deviation of the whole history.
pub fn stopping_check(auc_history: &[f64]) -> bool {
    if auc_history.len() < 2 {
        return false;
    }
    let (mean, std) = mean_std(auc_history);
    auc_history[auc_history.len() - 1] < mean - std
}

/// Runs the configured mode.
pub fn run(data: &Dataset, config: &EnsembleConfig) -> Result<Detection> {
    match config.mode {
        EnsembleMode::Care => run_care(data, config),
        EnsembleMode::Plain => run_plain(data, config),
        _ => run_fb0(data, config),
    }
}

struct Round {
    raw: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
}

fn score_bags(
    data: &Dataset,
    config: &EnsembleConfig,
    bags: &[FeatureBag],
    sample: &[usize],
) -> Result<Round> {
    let raw: Vec<Vec<f64>> = bags
        .par_iter()
        .map(|bag| {
            score(config.detector_kind, data.points(), Reference::Sample(sample), config.k, bag)
                .map(|s| s.values)
        })
        .collect::<Result<_>>()?;
    let probs = raw.par_iter().map(|r| gaussian_scale(r).0).collect();
    Ok(Round { raw, probs })
}

fn binarize(raw: &[Vec<f64>], confidence: f64) -> Result<Vec<Vec<u8>>> {
    raw.iter()
        .map(|r| cantelli_threshold(r, confidence).map(|l| l.values))
        .collect()
}

/// Outcome of the weighting phase within one round.
struct Combined {
    ws: Vec<f64>,
    summary: Option<AgreementSummary>,
    estimate: Option<ErrorEstimate>,
    pruned: usize,
    note: Option<String>,
}

fn combine(round: &Round, config: &EnsembleConfig, prune: bool) -> Result<Combined> {
    let labels = binarize(&round.raw, config.confidence)?;
    let summary = match pairwise_agreement(&labels) {
        Ok(s) => s,
        Err(CareError::EmptyUnion) => {
            return Ok(Combined {
                ws: mean_rows(&round.probs),
                summary: None,
                estimate: None,
                pruned: 0,
                note: Some("no detector flagged any point; scores averaged".into()),
            })
        }
        Err(e) => return Err(e),
    };
    let estimate = estimate_errors(&summary)?;
    let weights = if prune {
        compute_weights(&estimate.individual, config.prune_threshold)
    } else {
        unpruned(&estimate.individual)
    };
    let agg = weighted_aggregate(&round.probs, &weights)?;
    let mut notes = Vec::new();
    if let Some(d) = &estimate.diagnostic {
        notes.push(d.clone());
    }
    if weights.retained_fallback {
        notes.push("all detectors pruned; lowest-error detector kept".into());
    }
    if agg.unweighted_fallback {
        notes.push("weights summed to zero; surviving detectors averaged".into());
    }
    Ok(Combined {
        ws: agg.scores,
        summary: Some(summary),
        estimate: Some(estimate),
        pruned: weights.pruned_count(),
        note: (!notes.is_empty()).then(|| notes.join("; ")),
    })
}

fn check_data(data: &Dataset, config: &EnsembleConfig) -> Result<()> {
    config.validate()?;
    if data.n() <= config.k + 1 {
        return Err(CareError::param(format!(
            "{} points are too few for k = {}",
            data.n(),
            config.k
        )));
    }
    if config.b < 2 && matches!(config.mode, EnsembleMode::Care | EnsembleMode::Fb0Weighted) {
        return Err(CareError::param("agreement weighting needs at least 2 bags"));
    }
    if data.d() < 2 && config.mode != EnsembleMode::Plain {
        return Err(CareError::param("feature bagging needs at least 2 features"));
    }
    Ok(())
}

fn estimate_record(iteration: usize, c: &Combined) -> Option<EstimateRecord> {
    let (s, e) = (c.summary.as_ref()?, c.estimate.as_ref()?);
    Some(EstimateRecord {
        iteration,
        agreement: s.rates.upper(),
        estimate: e.clone(),
    })
}

/// The sequential ensemble.
///
/// Every iteration draws fresh feature bags, scores all points against the
/// current sample, combines the detectors by estimated-error weights and
/// adds the result to the running mean. At most `max_iter + 1` iterations
/// run. When the agreement AUC drops by more than one standard deviation
/// below its running mean, the scores of the previous iteration are
/// returned.
pub fn run_care(data: &Dataset, config: &EnsembleConfig) -> Result<Detection> {
    check_data(data, config)?;
    let n = data.n();
    let mut sample: Vec<usize> = (0..n).collect();
    let mut sum = vec![0.0; n];
    let mut stored = 0usize;
    let mut fs = vec![0.0; n];
    let mut auc_history = Vec::new();
    let mut records = Vec::new();
    let mut estimates = Vec::new();
    let mut stop_reason = StopReason::MaxIterations;

    for iteration in 0..=config.max_iter {
        let started = Instant::now();
        let bags = make_feature_bags(
            data.d(),
            config.b,
            derive_seed(config.seed, &[TAG_BAGS, iteration as u64]),
        )?;
        let round = score_bags(data, config, &bags, &sample)?;
        let combined = combine(&round, config, true)?;
        let mut record = IterationRecord {
            iteration,
            auc: combined.summary.as_ref().map(|s| s.ccdf_auc),
            union_size: combined.summary.as_ref().map_or(0, |s| s.union.len()),
            pruned: combined.pruned,
            sample_size: sample.len(),
            filtered: None,
            included: true,
            note: combined.note.clone(),
            wall_seconds: 0.0,
        };
        estimates.extend(estimate_record(iteration, &combined));

        if let Some(auc) = record.auc {
            auc_history.push(auc);
            if stopping_check(&auc_history) {
                record.included = false;
                record.wall_seconds = started.elapsed().as_secs_f64();
                log::debug!("iteration {iteration}: agreement dropped, stopping");
                records.push(record);
                stop_reason = StopReason::AgreementDrop;
                break;
            }
        }

        for (s, w) in sum.iter_mut().zip(&combined.ws) {
            *s += w;
        }
        stored += 1;
        let denom = stored as f64;
        for (f, s) in fs.iter_mut().zip(&sum) {
            *f = s / denom;
        }

        if iteration < config.max_iter {
            let params = FvpsParams {
                confidence: config.confidence,
                k: config.k,
                min_abs: config.fvps_min_abs,
                max_abs: config.fvps_max_abs,
                filter: true,
            };
            let mut rng = rng_from(config.seed, &[TAG_SAMPLE, iteration as u64]);
            match fvps_sample(&fs, &params, &mut rng) {
                Ok(next) => {
                    record.filtered = Some(next.filtered);
                    sample = next.indices;
                }
                Err(CareError::Parameter(msg)) => {
                    record.note = Some(match record.note.take() {
                        Some(prev) => format!("{prev}; {msg}"),
                        None => msg,
                    });
                    stop_reason = StopReason::SampleExhausted;
                }
                Err(e) => return Err(e),
            }
        }
        record.wall_seconds = started.elapsed().as_secs_f64();
        log::debug!(
            "iteration {iteration}: auc {:?}, |U| {}, pruned {}, |S| {}",
            record.auc,
            record.union_size,
            record.pruned,
            record.sample_size
        );
        records.push(record);
        if stop_reason == StopReason::SampleExhausted {
            break;
        }
    }

    let rank = rank_descending(&fs);
    Ok(Detection {
        scores: fs,
        rank,
        diagnostics: Diagnostics {
            iterations: records,
            stop_reason,
            estimates,
        },
    })
}

fn single_round_record(sample_size: usize, started: Instant, c: Option<&Combined>) -> IterationRecord {
    IterationRecord {
        iteration: 0,
        auc: c.and_then(|c| c.summary.as_ref()).map(|s| s.ccdf_auc),
        union_size: c.and_then(|c| c.summary.as_ref()).map_or(0, |s| s.union.len()),
        pruned: c.map_or(0, |c| c.pruned),
        sample_size,
        filtered: None,
        included: true,
        note: c.and_then(|c| c.note.clone()),
        wall_seconds: started.elapsed().as_secs_f64(),
    }
}

fn run_fb0(data: &Dataset, config: &EnsembleConfig) -> Result<Detection> {
    check_data(data, config)?;
    let started = Instant::now();
    let n = data.n();
    let all: Vec<usize> = (0..n).collect();
    let bags = make_feature_bags(data.d(), config.b, derive_seed(config.seed, &[TAG_BAGS, 0]))?;
    let round = score_bags(data, config, &bags, &all)?;
    let (scores, combined) = match config.mode {
        EnsembleMode::Fb0Avg => (mean_rows(&round.probs), None),
        EnsembleMode::Fb0Max => (max_rows(&round.probs), None),
        _ => {
            let c = combine(&round, config, false)?;
            (c.ws.clone(), Some(c))
        }
    };
    let estimates = combined
        .as_ref()
        .and_then(|c| estimate_record(0, c))
        .into_iter()
        .collect();
    let record = single_round_record(n, started, combined.as_ref());
    Ok(Detection {
        rank: rank_descending(&scores),
        scores,
        diagnostics: Diagnostics {
            iterations: vec![record],
            stop_reason: StopReason::SingleRound,
            estimates,
        },
    })
}

fn run_plain(data: &Dataset, config: &EnsembleConfig) -> Result<Detection> {
    check_data(data, config)?;
    let started = Instant::now();
    let all: Vec<usize> = (0..data.n()).collect();
    let bag = FeatureBag::all(data.d());
    let scores = score(config.detector_kind, data.points(), Reference::Sample(&all), config.k, &bag)?.values;
    Ok(Detection {
        rank: rank_descending(&scores),
        scores,
        diagnostics: Diagnostics {
            iterations: vec![single_round_record(data.n(), started, None)],
            stop_reason: StopReason::SingleRound,
            estimates: Vec::new(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn blob(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = rng_from(seed, &[]);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        Dataset::from_rows(&rows).unwrap()
    }

    fn small_config(seed: u64) -> EnsembleConfig {
        EnsembleConfig {
            b: 10,
            max_iter: 3,
            ..EnsembleConfig::new(DetectorKind::Lof, seed)
        }
    }

    #[test]
    fn stopping_rule_examples() {
        assert!(!stopping_check(&[0.8, 0.8, 0.8]));
        assert!(stopping_check(&[0.9, 0.9, 0.3]));
        assert!(!stopping_check(&[0.4]));
        assert!(!stopping_check(&[]));
    }

    #[test]
    fn rank_breaks_ties_by_index() {
        assert_eq!(rank_descending(&[0.5, 0.9, 0.5, 0.1]), vec![1, 0, 2, 3]);
    }

    #[test]
    fn max_iter_zero_runs_once() {
        let data = blob(60, 3, 1);
        let cfg = EnsembleConfig {
            max_iter: 0,
            ..small_config(4)
        };
        let det = run_care(&data, &cfg).unwrap();
        assert_eq!(det.diagnostics.iterations.len(), 1);
        assert_eq!(det.diagnostics.iterations[0].sample_size, 60);
        assert_eq!(det.diagnostics.stop_reason, StopReason::MaxIterations);
    }

    #[test]
    fn deterministic_and_bounded() {
        let data = blob(80, 4, 2);
        let a = run_care(&data, &small_config(9)).unwrap();
        let b = run_care(&data, &small_config(9)).unwrap();
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.rank, b.rank);
        let strip = |d: &Detection| {
            let mut recs = d.diagnostics.iterations.clone();
            recs.iter_mut().for_each(|r| r.wall_seconds = 0.0);
            recs
        };
        assert_eq!(strip(&a), strip(&b));
        assert!(a.scores.iter().all(|s| (0.0..=1.0).contains(s)));
        assert!(a.diagnostics.iterations.len() <= 4);
        for r in &a.diagnostics.iterations[1..] {
            assert!(r.sample_size < 80);
        }
    }

    #[test]
    fn baselines_run() {
        let data = blob(50, 4, 3);
        for mode in [
            EnsembleMode::Fb0Avg,
            EnsembleMode::Fb0Max,
            EnsembleMode::Fb0Weighted,
            EnsembleMode::Plain,
        ] {
            let cfg = EnsembleConfig {
                mode,
                ..small_config(1)
            };
            let det = run(&data, &cfg).unwrap();
            assert_eq!(det.scores.len(), 50);
            assert_eq!(det.rank.len(), 50);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = blob(6, 3, 4);
        assert!(run_care(&data, &small_config(0)).is_err());
        let mut cfg = small_config(0);
        cfg.confidence = 1.0;
        assert!(run_care(&blob(40, 3, 4), &cfg).is_err());
        assert!(run_care(&blob(40, 1, 4), &small_config(0)).is_err());
    }

    #[test]
    fn mode_names_parse() {
        assert_eq!("fb0-avg".parse::<EnsembleMode>().unwrap(), EnsembleMode::Fb0Avg);
        assert_eq!("care".parse::<EnsembleMode>().unwrap(), EnsembleMode::Care);
        assert!("bogus".parse::<EnsembleMode>().is_err());
    }
}
