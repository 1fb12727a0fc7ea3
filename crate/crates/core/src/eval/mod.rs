//! Metrics, precision/recall sweeps, background-knowledge settings and the
//! overfitting, early-stopping and grid studies.

mod knowledge;
mod metrics;
mod studies;

pub use knowledge::{other_algorithm, other_arch, BackgroundKnowledge, ShadowPlan, TargetSetup};
pub use metrics::{
    classifier_pr_curve, evaluate, evaluate_features, pr_curve, ConfusionCounts, EvaluationReport, PrPoint,
};
pub use studies::{
    augmentation_overlap_inferrer, augmentation_overlap_targets, early_stopping_study, overfitting_monitor, study_grid,
    summarize, CellSummary, DownstreamProbe, EarlyStopRow, MeanStd, OverfitPoint,
};
