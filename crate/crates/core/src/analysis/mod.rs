//! Statistics over collected records: box plots, correlations, and forest
//! regression of energy on text features.

pub mod forest;
pub mod report;
pub mod stats;

use thiserror::Error;

pub use forest::{
    evaluate, r2_score, split_rows, train_and_evaluate, train_forest, ForestModel, ForestParams, ModelEvaluation,
};
pub use report::{grouped_box_stats, render_box_svg, write_box_csv, GroupBy, GroupStats, Metric};
pub use stats::{box_stats, correlation_report, pearson, write_correlation_csv, BoxStats, CorrelationRow};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no data")]
    EmptyInput,
    #[error("zero variance")]
    ZeroVariance,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} rows, found {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("model file: {0}")]
    Model(String),
    #[error(transparent)]
    Table(#[from] crate::textfeat::TableError),
    #[error("CSV output: {0}")]
    Csv(String),
}

impl From<csv::Error> for AnalysisError {
    fn from(e: csv::Error) -> Self {
        AnalysisError::Csv(e.to_string())
    }
}

impl From<std::io::Error> for AnalysisError {
    fn from(e: std::io::Error) -> Self {
        AnalysisError::Csv(e.to_string())
    }
}
