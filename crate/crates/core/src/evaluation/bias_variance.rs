//! Bias/variance experiment over resampled training sets.
//!
//! For every training set `D_i` a procedure builds a data model `D_i'`. Test
//! points are scored against each `D_i'` with all features and the scores
//! are Gaussian-scaled to `[0, 1]`, giving `f(x, D_i', k)`. With `f*` the
//! test labels and `fbar` the mean over training sets,
//!
//! ```text
//! bias = sqrt(mean_x (f*(x) - fbar(x))^2)
//! var  = mean_x mean_i (f(x, D_i', k) - fbar(x))^2
//! ```
//!
//! Both are averaged over the test sets.

use ndarray::{Array2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{generate_bv_synthetic, Dataset, SyntheticBVSpec};
use crate::detectors::{score, DetectorKind, FeatureBag, Reference};
use crate::ensemble::{fvps_sample, FvpsParams};
use crate::error::{CareError, Result};
use crate::rng::rng_from;
use crate::scaling::gaussian_scale;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Procedure {
    NoSampling,
    Bootstrapping,
    SingleProbSampling,
    MultiProbSampling,
    FilteredMultiProbSampling,
}

impl Procedure {
    pub const ALL: [Procedure; 5] = [
        Procedure::NoSampling,
        Procedure::Bootstrapping,
        Procedure::SingleProbSampling,
        Procedure::MultiProbSampling,
        Procedure::FilteredMultiProbSampling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Procedure::NoSampling => "no-sampling",
            Procedure::Bootstrapping => "bootstrapping",
            Procedure::SingleProbSampling => "single-prob-sampling",
            Procedure::MultiProbSampling => "multi-prob-sampling",
            Procedure::FilteredMultiProbSampling => "filtered-multi-prob-sampling",
        }
    }

    fn tag(self) -> u64 {
        self as u64
    }
}

impl std::str::FromStr for Procedure {
    type Err = CareError;

    fn from_str(s: &str) -> Result<Self> {
        Procedure::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| CareError::param(format!("unknown procedure '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BVConfig {
    pub detector_kind: DetectorKind,
    pub k_values: Vec<usize>,
    /// Sampling rounds of the multi-round procedures.
    pub rounds: usize,
    pub confidence: f64,
    pub fvps_min_abs: usize,
    pub fvps_max_abs: usize,
}

impl Default for BVConfig {
    fn default() -> Self {
        BVConfig {
            detector_kind: DetectorKind::Lof,
            k_values: vec![3, 5, 7, 9, 11, 13, 15],
            rounds: 10,
            confidence: 0.2,
            fvps_min_abs: 50,
            fvps_max_abs: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BVResult {
    pub procedure: Procedure,
    pub k_values: Vec<usize>,
    pub bias: Vec<f64>,
    pub variance: Vec<f64>,
    /// Mean squared error of `f` against the labels; equals
    /// `bias^2 + variance` per test set.
    pub mse: Vec<f64>,
}

impl BVResult {
    pub fn mean_bias(&self) -> f64 {
        self.bias.iter().sum::<f64>() / self.bias.len() as f64
    }

    pub fn mean_variance(&self) -> f64 {
        self.variance.iter().sum::<f64>() / self.variance.len() as f64
    }
}

/// Data model built from one training set.
enum Model {
    Rows(Vec<usize>),
    Matrix(Array2<f64>),
}

fn scaled_scores(
    kind: DetectorKind,
    points: &Dataset,
    reference: Reference<'_>,
    k: usize,
) -> Result<Vec<f64>> {
    let bag = FeatureBag::all(points.d());
    Ok(gaussian_scale(&score(kind, points.points(), reference, k, &bag)?.values).0)
}

fn build_model<R: Rng>(
    procedure: Procedure,
    train: &Dataset,
    k: usize,
    config: &BVConfig,
    rng: &mut R,
) -> Result<Model> {
    let m = train.n();
    let all: Vec<usize> = (0..m).collect();
    let params = |filter| FvpsParams {
        confidence: config.confidence,
        k,
        min_abs: config.fvps_min_abs,
        max_abs: config.fvps_max_abs,
        filter,
    };
    let rounds = match procedure {
        Procedure::NoSampling => return Ok(Model::Rows(all)),
        Procedure::Bootstrapping => {
            let picks: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
            return Ok(Model::Matrix(train.points().select(Axis(0), &picks)));
        }
        Procedure::SingleProbSampling => 1,
        Procedure::MultiProbSampling | Procedure::FilteredMultiProbSampling => config.rounds,
    };
    let filter = procedure == Procedure::FilteredMultiProbSampling;
    let mut sample = all;
    for _ in 0..rounds {
        let f = scaled_scores(config.detector_kind, train, Reference::Sample(&sample), k)?;
        sample = fvps_sample(&f, &params(filter), rng)?.indices;
    }
    Ok(Model::Rows(sample))
}

struct Cell {
    bias: f64,
    variance: f64,
    mse: f64,
}

fn decompose(labels: &[u8], f: &[Vec<f64>]) -> Cell {
    let n = labels.len();
    let r = f.len() as f64;
    let mut bias2 = 0.0;
    let mut var = 0.0;
    let mut mse = 0.0;
    for x in 0..n {
        let truth = f64::from(labels[x]);
        let mean = f.iter().map(|fi| fi[x]).sum::<f64>() / r;
        bias2 += (truth - mean).powi(2);
        var += f.iter().map(|fi| (fi[x] - mean).powi(2)).sum::<f64>() / r;
        mse += f.iter().map(|fi| (fi[x] - truth).powi(2)).sum::<f64>() / r;
    }
    let n = n as f64;
    Cell {
        bias: (bias2 / n).sqrt(),
        variance: var / n,
        mse: mse / n,
    }
}

/// Runs every requested procedure on one draw of training and test sets.
pub fn bias_variance_all(
    spec: &SyntheticBVSpec,
    procedures: &[Procedure],
    config: &BVConfig,
) -> Result<Vec<BVResult>> {
    if config.k_values.is_empty() || config.rounds == 0 {
        return Err(CareError::param("need k values and at least one sampling round"));
    }
    let (train, test) = generate_bv_synthetic(spec)?;
    if let Some(&kmax) = config.k_values.iter().max() {
        if train.iter().any(|t| t.n() <= kmax + 1) {
            return Err(CareError::param(format!(
                "training sets are too small for k = {kmax}"
            )));
        }
    }
    procedures
        .iter()
        .map(|&procedure| run_procedure(procedure, spec.seed, &train, &test, config))
        .collect()
}

/// Bias and variance of one procedure, per `k`, averaged over test sets.
pub fn bias_variance_experiment(
    spec: &SyntheticBVSpec,
    procedure: Procedure,
    config: &BVConfig,
) -> Result<BVResult> {
    Ok(bias_variance_all(spec, &[procedure], config)?.remove(0))
}

fn run_procedure(
    procedure: Procedure,
    seed: u64,
    train: &[Dataset],
    test: &[Dataset],
    config: &BVConfig,
) -> Result<BVResult> {
    let mut result = BVResult {
        procedure,
        k_values: config.k_values.clone(),
        bias: Vec::new(),
        variance: Vec::new(),
        mse: Vec::new(),
    };
    for &k in &config.k_values {
        let models: Vec<Model> = (0..train.len())
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_from(seed, &[procedure.tag(), k as u64, i as u64]);
                build_model(procedure, &train[i], k, config, &mut rng)
            })
            .collect::<Result<_>>()?;
        let cells: Vec<Cell> = test
            .par_iter()
            .map(|t| {
                let labels = t
                    .labels()
                    .ok_or_else(|| CareError::param("test sets must be labeled"))?;
                let f = models
                    .iter()
                    .zip(train)
                    .map(|(model, tr)| {
                        let reference = match model {
                            Model::Rows(rows) => tr.points().select(Axis(0), rows),
                            Model::Matrix(mat) => mat.clone(),
                        };
                        scaled_scores(config.detector_kind, t, Reference::Points(reference.view()), k)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(decompose(labels, &f))
            })
            .collect::<Result<_>>()?;
        let sets = cells.len() as f64;
        result.bias.push(cells.iter().map(|c| c.bias).sum::<f64>() / sets);
        result.variance.push(cells.iter().map(|c| c.variance).sum::<f64>() / sets);
        result.mse.push(cells.iter().map(|c| c.mse).sum::<f64>() / sets);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::OutlierKind;

    fn tiny_spec(seed: u64) -> SyntheticBVSpec {
        let mut spec = SyntheticBVSpec::with_defaults(3, 2, OutlierKind::Uniform, seed);
        spec.train_size = 60;
        spec.train_outliers = 3;
        spec.test_size = 80;
        spec.num_train_sets = 3;
        spec.num_test_sets = 2;
        spec
    }

    fn tiny_config() -> BVConfig {
        BVConfig {
            k_values: vec![3, 5],
            rounds: 3,
            fvps_min_abs: 20,
            fvps_max_abs: 60,
            ..BVConfig::default()
        }
    }

    #[test]
    fn decomposition_oracle() {
        let labels = [1u8, 0];
        let f = vec![vec![0.5, 0.0], vec![1.0, 0.5]];
        let c = decompose(&labels, &f);
        // fbar = (0.75, 0.25); bias^2 = (0.0625 + 0.0625) / 2.
        assert!((c.bias - 0.0625f64.sqrt()).abs() < 1e-15);
        // Deviations are 0.25 everywhere.
        assert!((c.variance - 0.0625).abs() < 1e-15);
        assert!((c.mse - (c.bias.powi(2) + c.variance)).abs() < 1e-15);
    }

    #[test]
    fn exact_scores_have_no_bias() {
        let c = decompose(&[1, 0, 1], &vec![vec![1.0, 0.0, 1.0]; 2]);
        assert_eq!(c.bias, 0.0);
        assert_eq!(c.variance, 0.0);
    }

    #[test]
    fn single_replicate_has_no_variance() {
        let mut spec = tiny_spec(1);
        spec.num_train_sets = 1;
        let r = bias_variance_experiment(&spec, Procedure::NoSampling, &tiny_config()).unwrap();
        assert!(r.variance.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_procedures_run_and_decompose() {
        let results = bias_variance_all(&tiny_spec(2), &Procedure::ALL, &tiny_config()).unwrap();
        assert_eq!(results.len(), 5);
        for r in &results {
            assert_eq!(r.bias.len(), 2);
            for i in 0..2 {
                assert!(r.bias[i] >= 0.0 && r.variance[i] >= 0.0);
                assert!(r.bias[i].powi(2) <= r.mse[i] + 1e-12);
            }
        }
        let again = bias_variance_all(&tiny_spec(2), &Procedure::ALL, &tiny_config()).unwrap();
        assert_eq!(results, again);
    }

    #[test]
    fn procedure_names_round_trip() {
        for p in Procedure::ALL {
            assert_eq!(p.name().parse::<Procedure>().unwrap(), p);
        }
    }
}
