//! Pairwise agreement rates between binary detector outputs and the
//! CCDF-AUC summary used by the stopping rule.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CareError, Result};

/// Symmetric `b x b` agreement matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateMatrix {
    b: usize,
    values: Vec<f64>,
}

impl RateMatrix {
    /// Builds a matrix from the strict upper triangle, row by row.
    pub fn from_upper(b: usize, upper: &[f64]) -> Result<Self> {
        if upper.len() != b * b.saturating_sub(1) / 2 {
            return Err(CareError::param("upper triangle has the wrong length"));
        }
        let mut values = vec![1.0; b * b];
        let mut it = upper.iter();
        for i in 0..b {
            for j in i + 1..b {
                let v = *it.next().expect("length checked");
                values[i * b + j] = v;
                values[j * b + i] = v;
            }
        }
        Ok(RateMatrix { b, values })
    }

    pub fn size(&self) -> usize {
        self.b
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.b + j]
    }

    /// Strict upper triangle, row by row.
    pub fn upper(&self) -> Vec<f64> {
        (0..self.b)
            .flat_map(|i| (i + 1..self.b).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementSummary {
    pub rates: RateMatrix,
    /// Points flagged by at least one detector, ascending.
    pub union: Vec<usize>,
    /// CCDF-AUC over the off-diagonal rates.
    pub ccdf_auc: f64,
}

fn check_outputs(outputs: &[Vec<u8>]) -> Result<usize> {
    if outputs.len() < 2 {
        return Err(CareError::param("agreement needs at least 2 detectors"));
    }
    let n = outputs[0].len();
    if outputs.iter().any(|o| o.len() != n) {
        return Err(CareError::param("detector outputs differ in length"));
    }
    Ok(n)
}

/// Fraction of the points in `over` on which each pair of detectors gives
/// the same label.
pub fn agreement_over(outputs: &[Vec<u8>], over: &[usize]) -> Result<RateMatrix> {
    let b = outputs.len();
    if over.is_empty() {
        return Err(CareError::param("agreement over an empty point set"));
    }
    let denom = over.len() as f64;
    // Only the union columns matter; gather them once per detector.
    let gathered: Vec<Vec<u8>> = outputs
        .iter()
        .map(|o| over.iter().map(|&u| o[u]).collect())
        .collect();
    let upper: Vec<f64> = (0..b)
        .into_par_iter()
        .flat_map_iter(|i| {
            let gathered = &gathered;
            (i + 1..b).map(move |j| {
                let same = gathered[i]
                    .iter()
                    .zip(&gathered[j])
                    .filter(|(x, y)| x == y)
                    .count();
                same as f64 / denom
            })
        })
        .collect();
    RateMatrix::from_upper(b, &upper)
}

/// Agreement rates restricted to the union of points flagged by any
/// detector. Errors with [`CareError::EmptyUnion`] when nothing is flagged.
pub fn pairwise_agreement(outputs: &[Vec<u8>]) -> Result<AgreementSummary> {
    let n = check_outputs(outputs)?;
    let union: Vec<usize> = (0..n)
        .filter(|&x| outputs.iter().any(|o| o[x] == 1))
        .collect();
    if union.is_empty() {
        return Err(CareError::EmptyUnion);
    }
    let rates = agreement_over(outputs, &union)?;
    let ccdf_auc = ccdf_auc(&rates.upper())?;
    Ok(AgreementSummary {
        rates,
        union,
        ccdf_auc,
    })
}

/// Area under the empirical complementary CDF `t -> P(A > t)` on `[0, 1]`,
/// integrated exactly over its steps. For values inside `[0, 1]` this
/// equals their mean.
pub fn ccdf_auc(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(CareError::param("CCDF of an empty sample"));
    }
    let mut sorted: Vec<f64> = values.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    // Between consecutive order statistics the CCDF is the fraction of
    // values strictly above the step.
    let mut area = 0.0;
    let mut prev = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        area += (v - prev) * (m - i as f64) / m;
        prev = v;
    }
    Ok(area)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_detectors_agree_fully() {
        let o = vec![vec![0, 1, 1, 0], vec![0, 1, 1, 0]];
        let s = pairwise_agreement(&o).unwrap();
        assert_eq!(s.rates.get(0, 1), 1.0);
        assert_eq!(s.union, vec![1, 2]);
        assert_eq!(s.ccdf_auc, 1.0);
    }

    #[test]
    fn counts_over_union_only() {
        // Union is {0, 1, 2, 3}; detectors agree on 0, 1, 2.
        let o = vec![vec![1, 1, 0, 1, 0, 0], vec![1, 1, 0, 0, 0, 0], vec![0, 0, 1, 0, 0, 0]];
        let s = pairwise_agreement(&o).unwrap();
        assert_eq!(s.union, vec![0, 1, 2, 3]);
        assert_eq!(s.rates.get(0, 1), 0.75);
        assert_eq!(s.rates.get(1, 0), 0.75);
        assert_eq!(s.rates.get(2, 2), 1.0);
    }

    #[test]
    fn empty_union_is_signalled() {
        let o = vec![vec![0, 0, 0], vec![0, 0, 0]];
        assert!(matches!(pairwise_agreement(&o), Err(CareError::EmptyUnion)));
        assert!(pairwise_agreement(&[vec![1, 0]]).is_err());
    }

    #[test]
    fn ccdf_hand_examples() {
        assert_eq!(ccdf_auc(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(ccdf_auc(&[0.0, 1.0]).unwrap(), 0.5);
        // Steps: 1 on [0,0.2), 2/3 on [0.2,0.4), 1/3 on [0.4,0.9).
        let a = 0.2 + (2.0 / 3.0) * 0.2 + (1.0 / 3.0) * 0.5;
        assert!((ccdf_auc(&[0.2, 0.4, 0.9]).unwrap() - a).abs() < 1e-15);
        assert!((a - 0.5).abs() < 1e-15);
        assert!(ccdf_auc(&[]).is_err());
    }

    proptest! {
        #[test]
        fn ccdf_auc_is_the_mean(values in prop::collection::vec(0f64..=1.0, 1..200)) {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            prop_assert!((ccdf_auc(&values).unwrap() - mean).abs() <= 1e-12);
        }

        #[test]
        fn detector_permutation_permutes_rates(
            bits in prop::collection::vec(prop::collection::vec(0u8..2, 30), 4),
        ) {
            let mut bits = bits;
            bits[0][0] = 1;
            let s = pairwise_agreement(&bits).unwrap();
            let perm = [2usize, 0, 3, 1];
            let permuted: Vec<Vec<u8>> = perm.iter().map(|&p| bits[p].clone()).collect();
            let t = pairwise_agreement(&permuted).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    prop_assert_eq!(t.rates.get(i, j), s.rates.get(perm[i], perm[j]));
                }
            }
            prop_assert!((t.ccdf_auc - s.ccdf_auc).abs() < 1e-12);
        }
    }
}
