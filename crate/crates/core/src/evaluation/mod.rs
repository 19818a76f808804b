//! Ranking metrics and the synthetic experiment harnesses.

mod bias_variance;
mod metrics;
mod studies;

pub use self::bias_variance::{
    bias_variance_all, bias_variance_experiment, BVConfig, BVResult, Procedure,
};
pub use self::metrics::{average_precision, precision_recall_curve, sign_test, PRCurve, SignTest};
pub use self::studies::{
    aggregation_study, empirical_errors, estimation_gap_study, AggregationReport, GapReport,
};
