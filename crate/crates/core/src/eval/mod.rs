//! Evaluation kit: metrics, k-fold cross-validation, PCA ablation and
//! cross-device evaluation. Everything here runs in `f64`.

mod ablation;
mod cv;
mod metrics;
mod pca;
mod pipeline;

use thiserror::Error;

use crate::features::FeatureError;
use crate::fedt::FedtError;
use crate::gate::GateError;

pub use ablation::{cross_device_eval, cross_device_eval_sets, pca_ablation, pca_ablation_features, pca_ablation_set, PcaAblation};
pub use cv::{assign_folds, fit_fold, kfold_evaluate, kfold_evaluate_set, FoldScheme};
pub use metrics::{confusion, metrics, ConfusionCounts, FoldReport, Metrics, MetricsReport};
pub use pca::{pca_apply, pca_fit, PcaProjection};
pub use pipeline::{evaluate, EvalSet, FittedPipeline, PipelineConfig, Verdict};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("labels and predictions differ in length ({labels} vs {predictions})")]
    LengthMismatch { labels: usize, predictions: usize },
    #[error("cannot evaluate: {0}")]
    CannotEvaluate(String),
    #[error("fold assignment: {0}")]
    Folds(String),
    #[error("pca: {0}")]
    Pca(String),
    #[error("window {0} has no label")]
    Unlabeled(usize),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Fedt(#[from] FedtError),
    #[error(transparent)]
    Gate(#[from] GateError),
}
