//! Sequential outlier-detection ensemble built from feature-bagged
//! nearest-neighbor detectors.
//!
//! Each iteration scores every point against a reference sample with `b`
//! feature-bagged avgKNN or LOF detectors, estimates the detectors' error
//! rates from how often they agree with each other, prunes and weights them,
//! and folds the weighted combination into a cumulative score. The next
//! reference sample is drawn with filtered variable probability sampling so
//! that likely outliers are kept out of the data model.
//!
//! The crate also ships the synthetic experiment harnesses used to study the
//! error estimator, the aggregation rules and the bias/variance behaviour of
//! the sampling procedures.

pub mod agreement;
pub mod dataset;
pub mod detectors;
pub mod ensemble;
pub mod error;
pub mod error_estimation;
pub mod evaluation;
pub mod neighbors;
pub mod rng;
pub mod scaling;

pub use crate::agreement::{ccdf_auc, pairwise_agreement, AgreementSummary};
pub use crate::dataset::{load_csv, CsvOptions, Dataset, LabelColumn};
pub use crate::detectors::{
    avgknn_score, lof_score, make_feature_bags, DetectorKind, FeatureBag, RawScores, Reference,
};
pub use crate::ensemble::{run, run_care, EnsembleConfig, EnsembleMode, Detection};
pub use crate::error::{CareError, Result};
pub use crate::error_estimation::{estimate_errors, ErrorEstimate};
pub use crate::evaluation::{average_precision, precision_recall_curve, PRCurve};
pub use crate::neighbors::{knn_query, NeighborList};
pub use crate::scaling::{cantelli_threshold, gaussian_scale, BinaryLabels, ProbScores};
