//! Detection and fidelity metrics and their aggregation.

mod metrics;
mod report;

pub use metrics::{emd_1d, roc_auc, spearman, MetricError};
pub use report::{
    aggregate, evaluate, evaluate_scores, read_reports_csv, reports_to_csv, summary_to_csv, write_reports_csv, CsvError, GroupSummary,
    MetricsReport, Scores, Summary, CSV_HEADER, SUMMARY_HEADER,
};
