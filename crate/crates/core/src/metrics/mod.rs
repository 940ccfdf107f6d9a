//! Loss-optimal point forecasts and forecast evaluation.

mod eval;
mod loss;
mod report;

pub(crate) use eval::coverage_from_hits;
pub use eval::{
    add_hits, auc, brier, calibration_bins, central_interval, confusion_matrix, coverage_curve, f1_score,
    quantile_linear, summarize_group, CalibrationBin, ConfusionMatrix, CoveragePoint, GroupSummary,
};
pub use loss::{
    mad_optimal, mad_optimal_positive, mape_optimal, mape_risk, optimal_point, optimal_points, realized_loss,
    zape_optimal, zape_risk, LossKind, LossSpec, ZAPE_GRAD_TOL, ZAPE_MAX_ITER,
};
pub use report::{
    CalibrationTable, ConfusionTable, CoverageTable, EvaluationReport, SeriesMetric, SummaryRow, REPORT_SCHEMA_VERSION,
};
