//! Data ingestion, validation and synthetic data generation.

mod csv_io;
pub mod synthetic;

use ndarray::{Array2, ArrayView1, ArrayView2};

pub use self::csv_io::{load_csv, write_csv, CsvOptions, LabelColumn};
pub use self::synthetic::{
    generate_bv_synthetic, generate_detector_outputs, DetectorTrial, GaussianMixture,
    OutlierKind, OutlierModel, SyntheticBVSpec, SyntheticDetectorSpec,
};

use crate::error::{CareError, Result};

/// An `n x d` matrix of finite values with optional ground-truth labels
/// (1 = outlier). Labels are only ever used for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Array2<f64>,
    labels: Option<Vec<u8>>,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        points: Array2<f64>,
        labels: Option<Vec<u8>>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, d) = points.dim();
        if n < 2 {
            return Err(CareError::invalid(format!("need at least 2 points, got {n}")));
        }
        if d < 1 {
            return Err(CareError::invalid("need at least 1 feature"));
        }
        if let Some(((i, j), v)) = points.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(CareError::invalid(format!(
                "non-finite value {v} at row {}, column {}",
                i + 1,
                j + 1
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(CareError::invalid(format!(
                    "{} labels for {n} points",
                    labels.len()
                )));
            }
            if let Some(pos) = labels.iter().position(|&l| l > 1) {
                return Err(CareError::invalid(format!(
                    "label {} at row {} is not 0 or 1",
                    labels[pos],
                    pos + 1
                )));
            }
        }
        if let Some(names) = &feature_names {
            if names.len() != d {
                return Err(CareError::invalid(format!(
                    "{} feature names for {d} columns",
                    names.len()
                )));
            }
        }
        Ok(Dataset {
            points,
            labels,
            feature_names,
        })
    }

    /// Builds an unlabeled dataset from row vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(CareError::Structure("rows have different lengths".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let points = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| CareError::Structure(e.to_string()))?;
        Dataset::new(points, None, None)
    }

    pub fn with_labels(self, labels: Vec<u8>) -> Result<Self> {
        Dataset::new(self.points, Some(labels), self.feature_names)
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn d(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn outlier_count(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().filter(|&&v| v == 1).count())
    }
}
