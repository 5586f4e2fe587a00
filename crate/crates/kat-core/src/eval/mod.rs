//! Answer normalization, VQA accuracy, reports, ensembling and ablations.

mod ablation;
mod metric;
mod report;

use thiserror::Error;

pub use ablation::{ablation_run, predict_dataset, write_sweep_csv, KnowledgeInputs, SweepCell};
pub use metric::{normalize, vqa_score, vqa_score_with, MetricVariant, GOLD_COUNT};
pub use report::{
    ensemble, evaluate, mean_accuracy, read_predictions, write_predictions, CategoryScore, EvalReport, ExampleScore,
    Prediction,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("expected 10 gold answers, got {0}")]
    GoldCount(usize),
    #[error("missing predictions for {} question(s): {}", .0.len(), .0.join(", "))]
    MissingPredictions(Vec<String>),
    #[error("question {qid}: {reason}")]
    Example { qid: String, reason: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("no trained checkpoint for cell {config} at m={m}")]
    MissingCheckpoint { config: String, m: usize },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
