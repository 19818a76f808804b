use serde::Serialize;
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::ensemble::rank_descending;
use crate::error::{CareError, Result};

/// Precision and recall at every cut of the ranked list.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PRCurve {
    /// Score at each cut, non-increasing.
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub ap: f64,
}

fn check(scores: &[f64], labels: &[u8]) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(CareError::param(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(CareError::param("labels must be 0 or 1"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(CareError::param("scores contain NaN"));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(CareError::param(
            "average precision needs both positive and negative labels",
        ));
    }
    Ok(positives)
}

/// Ranks by descending score (lower index first on ties) and records
/// precision and recall after each position.
pub fn precision_recall_curve(scores: &[f64], labels: &[u8]) -> Result<PRCurve> {
    let positives = check(scores, labels)? as f64;
    let order = rank_descending(scores);
    let mut hits = 0usize;
    let mut ap = 0.0;
    let mut curve = PRCurve {
        thresholds: Vec::with_capacity(order.len()),
        precision: Vec::with_capacity(order.len()),
        recall: Vec::with_capacity(order.len()),
        ap: 0.0,
    };
    for (pos, &i) in order.iter().enumerate() {
        let precision_here = |h: usize| h as f64 / (pos + 1) as f64;
        if labels[i] == 1 {
            hits += 1;
            ap += precision_here(hits);
        }
        curve.thresholds.push(scores[i]);
        curve.precision.push(precision_here(hits));
        curve.recall.push(hits as f64 / positives);
    }
    curve.ap = ap / positives;
    Ok(curve)
}

/// Mean precision at the ranks of the positives.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    precision_recall_curve(scores, labels).map(|c| c.ap)
}

/// Paired one-sided sign test of `a > b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// `P(X >= wins)` for `X ~ Binomial(wins + losses, 1/2)`.
    pub p_value: f64,
}

pub fn sign_test(a: &[f64], b: &[f64]) -> Result<SignTest> {
    if a.len() != b.len() {
        return Err(CareError::param("sign test needs paired samples"));
    }
    let wins = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let losses = a.iter().zip(b).filter(|(x, y)| x < y).count();
    let ties = a.len() - wins - losses;
    let trials = (wins + losses) as u64;
    let p_value = if wins == 0 {
        1.0
    } else {
        let dist = Binomial::new(0.5, trials)
            .map_err(|e| CareError::Numerical(format!("binomial: {e}")))?;
        1.0 - dist.cdf(wins as u64 - 1)
    };
    Ok(SignTest {
        wins,
        losses,
        ties,
        p_value,
    })
}
