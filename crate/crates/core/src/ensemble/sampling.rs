//! Filtered variable probability sampling (FVPS) of the next data model.

use rand::seq::index;
use rand::Rng;
use serde::Serialize;

use crate::error::{CareError, Result};
use crate::scaling::cantelli_threshold;

/// Re-draws of the sample fraction before giving up on a tiny sample.
const MAX_REDRAWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FvpsSample {
    /// Selected indices, ascending.
    pub indices: Vec<usize>,
    /// Points removed by the Cantelli filter.
    pub filtered: usize,
    /// Drawn sample fraction `l`.
    pub fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FvpsParams {
    pub confidence: f64,
    pub k: usize,
    pub min_abs: usize,
    pub max_abs: usize,
    /// When false no points are filtered (`T = 0`).
    pub filter: bool,
}

/// Draws the next sample from scores `fs`.
///
/// Points with `fs` at or above the Cantelli cutoff are dropped. A fraction
/// `l` is drawn uniformly between `min(1 - T/n, min_abs/n)` and
/// `max(1 - T/n, max_abs/n)`, clipped into `(0, 1]`, and `round(l (n - T))`
/// of the remaining points are drawn without replacement with weights
/// `1 - fs`. The sample never contains all `n` points and holds at least
/// `k + 1` of them.
pub fn fvps_sample<R: Rng + ?Sized>(fs: &[f64], params: &FvpsParams, rng: &mut R) -> Result<FvpsSample> {
    let n = fs.len();
    if n < 3 {
        return Err(CareError::param("sampling needs at least 3 points"));
    }
    let flagged = if params.filter {
        cantelli_threshold(fs, params.confidence)?.values
    } else {
        vec![0; n]
    };
    let kept: Vec<usize> = (0..n).filter(|&i| flagged[i] == 0).collect();
    let t = n - kept.len();
    let need = params.k + 1;
    if kept.len() < need {
        return Err(CareError::param(format!(
            "filtering left {} points, fewer than k + 1 = {need}",
            kept.len()
        )));
    }

    let nf = n as f64;
    let base = 1.0 - t as f64 / nf;
    let clip = |v: f64| v.clamp(f64::MIN_POSITIVE, 1.0);
    let low = clip(base.min(params.min_abs as f64 / nf));
    let high = clip(base.max(params.max_abs as f64 / nf));
    // Keep |S| < n so the data model always changes.
    let cap = if t == 0 { n - 1 } else { kept.len() };

    let mut size = None;
    let mut fraction = low;
    for _ in 0..=MAX_REDRAWS {
        fraction = if high > low { rng.random_range(low..=high) } else { low };
        let s = ((fraction * kept.len() as f64).round() as usize).min(cap);
        if s >= need {
            size = Some(s);
            break;
        }
    }
    let size = size.ok_or_else(|| {
        CareError::param(format!(
            "sample size stayed below k + 1 = {need} after {MAX_REDRAWS} re-draws"
        ))
    })?;

    let weights: Vec<f64> = kept.iter().map(|&i| (1.0 - fs[i]).clamp(0.0, 1.0)).collect();
    let mut picked = weighted_without_replacement(&weights, size, rng)?;
    let mut indices: Vec<usize> = picked.drain(..).map(|p| kept[p]).collect();
    indices.sort_unstable();
    Ok(FvpsSample {
        indices,
        filtered: t,
        fraction,
    })
}

/// Draws `amount` distinct positions with probability proportional to
/// `weights`, distributed as sequential draws with renormalization. Once
/// the positive weights are used up the rest is drawn uniformly from the
/// zero-weight positions; all-zero weights give a uniform sample.
pub fn weighted_without_replacement<R: Rng + ?Sized>(
    weights: &[f64],
    amount: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if amount > weights.len() {
        return Err(CareError::param("sample larger than population"));
    }
    let positive: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    let from_positive = amount.min(positive.len());
    let mut out: Vec<usize> = if from_positive == 0 {
        Vec::new()
    } else {
        index::sample_weighted(rng, positive.len(), |p| weights[positive[p]], from_positive)
            .map_err(|e| CareError::Numerical(format!("weighted sampling failed: {e}")))?
            .into_iter()
            .map(|p| positive[p])
            .collect()
    };
    let rest = amount - from_positive;
    if rest > 0 {
        let zero: Vec<usize> = (0..weights.len()).filter(|&i| !(weights[i] > 0.0)).collect();
        out.extend(index::sample(rng, zero.len(), rest).into_iter().map(|p| zero[p]));
    }
    Ok(out)
}
