//! Record-level metrics, interval statistics, the structure-bias curve,
//! concept correlations and the in/out-of-distribution comparison.

pub mod correlation;
pub mod intervals;
pub mod metrics;
pub mod ood;
pub mod report;
pub mod structure;

pub use correlation::{concept_correlation_matrix, correlation_matrix, pearson, CorrelationMatrix, CORRELATION_SERIES};
pub use intervals::{interval_stats, IntervalStats};
pub use metrics::{compute_metrics, Metrics};
pub use ood::{ood_comparison, OodRow, OodTable, OOD_ORDER};
pub use report::{build_report, predict_records, predictions_csv, EvalOptions, EvalReport, RecordPrediction, VariantReport};
pub use structure::{structure_bias_curve, StructureBin, StructureCurve};
