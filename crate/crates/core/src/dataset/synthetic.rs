//! Synthetic generators: Gaussian-mixture data with planted outliers for the
//! bias/variance study, and independent-flip binary detectors with known
//! error rates for the error-estimation and aggregation studies.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Pareto, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{CareError, Result};
use crate::rng::{rng_from, CareRng};

const TAG_TRAIN: u64 = 1;
const TAG_TEST: u64 = 2;
const TAG_TRIAL: u64 = 3;
const TAG_MEANS: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OutlierModel {
    /// A random mixture mean plus, per coordinate, a sign-randomized
    /// Pareto(scale 1, `shape`) offset.
    PowerLaw { shape: f64 },
    /// Uniform over the axis-aligned box `[low, high]`.
    Uniform { low: Vec<f64>, high: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBVSpec {
    pub dim: usize,
    pub inliers: GaussianMixture,
    pub outliers: OutlierModel,
    pub train_size: usize,
    pub train_outliers: usize,
    pub test_size: usize,
    pub num_train_sets: usize,
    pub num_test_sets: usize,
    pub seed: u64,
}

/// Outlier family for [`SyntheticBVSpec::with_defaults`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutlierKind {
    PowerLaw,
    Uniform,
}

impl SyntheticBVSpec {
    /// Default study setting: `components` equally weighted unit-variance
    /// spherical Gaussians with means uniform in `[-5, 5]^dim`, 5 training
    /// sets of 210 points (10 outliers) and 10 test sets of 1000 points.
    /// Power-law outliers use Pareto shape 1.5; uniform outliers fill the
    /// bounding box of the means inflated 2x about its center.
    pub fn with_defaults(dim: usize, components: usize, kind: OutlierKind, seed: u64) -> Self {
        let mut rng = rng_from(seed, &[TAG_MEANS]);
        let means: Vec<Vec<f64>> = (0..components)
            .map(|_| (0..dim).map(|_| rng.random_range(-5.0..=5.0)).collect())
            .collect();
        let identity: Vec<Vec<f64>> = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let outliers = match kind {
            OutlierKind::PowerLaw => OutlierModel::PowerLaw { shape: 1.5 },
            OutlierKind::Uniform => {
                let mut low = vec![f64::INFINITY; dim];
                let mut high = vec![f64::NEG_INFINITY; dim];
                for m in &means {
                    for j in 0..dim {
                        low[j] = low[j].min(m[j]);
                        high[j] = high[j].max(m[j]);
                    }
                }
                for j in 0..dim {
                    let center = 0.5 * (low[j] + high[j]);
                    let half = 0.5 * (high[j] - low[j]);
                    low[j] = center - 2.0 * half;
                    high[j] = center + 2.0 * half;
                }
                OutlierModel::Uniform { low, high }
            }
        };
        SyntheticBVSpec {
            dim,
            inliers: GaussianMixture {
                means,
                covariances: vec![identity; components],
                weights: vec![1.0 / components as f64; components],
            },
            outliers,
            train_size: 210,
            train_outliers: 10,
            test_size: 1000,
            num_train_sets: 5,
            num_test_sets: 10,
            seed,
        }
    }

    /// Outliers per test set, keeping the training contamination rate.
    pub fn test_outliers(&self) -> usize {
        (self.test_size as f64 * self.train_outliers as f64 / self.train_size as f64).round()
            as usize
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        if d == 0 || self.train_size == 0 || self.test_size == 0 {
            return Err(CareError::param("dimension and set sizes must be positive"));
        }
        if self.num_train_sets == 0 || self.num_test_sets == 0 {
            return Err(CareError::param("need at least one training and one test set"));
        }
        if self.train_outliers >= self.train_size {
            return Err(CareError::param("train_outliers must be below train_size"));
        }
        let mix = &self.inliers;
        let c = mix.weights.len();
        if c == 0 || mix.means.len() != c || mix.covariances.len() != c {
            return Err(CareError::param(
                "mixture needs matching counts of means, covariances and weights",
            ));
        }
        if mix.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(CareError::param("mixture weights must be nonnegative"));
        }
        let total: f64 = mix.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(CareError::param(format!("mixture weights sum to {total}, not 1")));
        }
        if mix.means.iter().any(|m| m.len() != d) {
            return Err(CareError::param("mixture mean has wrong dimension"));
        }
        for cov in &mix.covariances {
            covariance_factor(cov, d)?;
        }
        match &self.outliers {
            OutlierModel::PowerLaw { shape } if !(*shape > 0.0) => {
                return Err(CareError::param("power-law shape must be positive"));
            }
            OutlierModel::Uniform { low, high } => {
                if low.len() != d || high.len() != d {
                    return Err(CareError::param("uniform box has wrong dimension"));
                }
                if low.iter().zip(high).any(|(l, h)| !(l < h)) {
                    return Err(CareError::param("uniform box needs low < high"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Returns `L` with `L L^T = cov`, via the eigendecomposition so singular
/// but positive-semidefinite covariances are accepted.
fn covariance_factor(cov: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>> {
    if cov.len() != d || cov.iter().any(|r| r.len() != d) {
        return Err(CareError::param("covariance has wrong shape"));
    }
    let m = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    if (&m - m.transpose()).amax() > 1e-12 * scale || m.iter().any(|v| !v.is_finite()) {
        return Err(CareError::invalid("covariance is not symmetric"));
    }
    let eig = SymmetricEigen::new(m);
    if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
        return Err(CareError::invalid("covariance is not positive semidefinite"));
    }
    let roots = DVector::from_iterator(d, eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()));
    Ok(eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

struct MixtureSampler<'a> {
    spec: &'a SyntheticBVSpec,
    factors: Vec<DMatrix<f64>>,
    pick: WeightedIndex<f64>,
}

impl<'a> MixtureSampler<'a> {
    fn new(spec: &'a SyntheticBVSpec) -> Result<Self> {
        spec.validate()?;
        let factors = spec
            .inliers
            .covariances
            .iter()
            .map(|c| covariance_factor(c, spec.dim))
            .collect::<Result<Vec<_>>>()?;
        let pick = WeightedIndex::new(&spec.inliers.weights)
            .map_err(|e| CareError::param(format!("mixture weights: {e}")))?;
        Ok(MixtureSampler {
            spec,
            factors,
            pick,
        })
    }

    fn inlier(&self, rng: &mut CareRng, out: &mut Vec<f64>) {
        let c = self.pick.sample(rng);
        let d = self.spec.dim;
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let x = &self.factors[c] * z;
        out.extend(self.spec.inliers.means[c].iter().zip(x.iter()).map(|(m, v)| m + v));
    }

    fn outlier(&self, rng: &mut CareRng, out: &mut Vec<f64>) {
        match &self.spec.outliers {
            OutlierModel::PowerLaw { shape } => {
                let c = self.pick.sample(rng);
                let pareto = Pareto::new(1.0, *shape).expect("shape validated");
                for &m in &self.spec.inliers.means[c] {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    out.push(m + sign * pareto.sample(rng));
                }
            }
            OutlierModel::Uniform { low, high } => {
                out.extend(low.iter().zip(high).map(|(&l, &h)| rng.random_range(l..h)));
            }
        }
    }

    fn labeled_set(&self, size: usize, outliers: usize, rng: &mut CareRng) -> Result<Dataset> {
        let mut labels: Vec<u8> = (0..size).map(|i| u8::from(i < outliers)).collect();
        labels.shuffle(rng);
        let mut values = Vec::with_capacity(size * self.spec.dim);
        for &l in &labels {
            if l == 1 {
                self.outlier(rng, &mut values);
            } else {
                self.inlier(rng, &mut values);
            }
        }
        let points = Array2::from_shape_vec((size, self.spec.dim), values)
            .map_err(|e| CareError::Structure(e.to_string()))?;
        Dataset::new(points, Some(labels), None)
    }
}

/// Draws `num_train_sets` labeled training sets and `num_test_sets` labeled
/// test sets. Each set has its own seed-derived stream.
pub fn generate_bv_synthetic(spec: &SyntheticBVSpec) -> Result<(Vec<Dataset>, Vec<Dataset>)> {
    let sampler = MixtureSampler::new(spec)?;
    let train = (0..spec.num_train_sets)
        .map(|i| {
            let mut rng = rng_from(spec.seed, &[TAG_TRAIN, i as u64]);
            sampler.labeled_set(spec.train_size, spec.train_outliers, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let test_outliers = spec.test_outliers().min(spec.test_size - 1);
    let test = (0..spec.num_test_sets)
        .map(|j| {
            let mut rng = rng_from(spec.seed, &[TAG_TEST, j as u64]);
            sampler.labeled_set(spec.test_size, test_outliers, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDetectorSpec {
    pub n: usize,
    pub outlier_fraction: f64,
    pub true_errors: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl SyntheticDetectorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(CareError::param("need at least 2 points"));
        }
        if !(self.outlier_fraction > 0.0 && self.outlier_fraction < 1.0) {
            return Err(CareError::param("outlier fraction must lie in (0, 1)"));
        }
        if self.true_errors.len() < 2 {
            return Err(CareError::param("need at least 2 detectors"));
        }
        if self.true_errors.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(CareError::param("error rates must lie in [0, 1]"));
        }
        if self.trials == 0 {
            return Err(CareError::param("need at least one trial"));
        }
        Ok(())
    }
}

/// One snapshot: ground truth and one binary output row per detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorTrial {
    pub truth: Vec<u8>,
    pub outputs: Vec<Vec<u8>>,
}

/// Detector `i` reproduces the truth with each entry flipped independently
/// with probability `true_errors[i]`.
pub fn generate_detector_outputs(spec: &SyntheticDetectorSpec) -> Result<Vec<DetectorTrial>> {
    spec.validate()?;
    let outliers = (spec.n as f64 * spec.outlier_fraction).round() as usize;
    Ok((0..spec.trials)
        .map(|t| {
            let mut rng = rng_from(spec.seed, &[TAG_TRIAL, t as u64]);
            let mut truth = vec![0u8; spec.n];
            for i in rand::seq::index::sample(&mut rng, spec.n, outliers) {
                truth[i] = 1;
            }
            let outputs = spec
                .true_errors
                .iter()
                .map(|&e| {
                    truth
                        .iter()
                        .map(|&y| if rng.random::<f64>() < e { 1 - y } else { y })
                        .collect()
                })
                .collect();
            DetectorTrial { truth, outputs }
        })
        .collect())
}
