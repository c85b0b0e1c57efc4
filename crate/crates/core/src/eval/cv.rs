//! Seeded k-fold cross-validation with pooled confusion counts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pipeline::{evaluate, EvalSet, FittedPipeline, PipelineConfig};
use super::{metrics, EvalError, FoldReport, MetricsReport};
use crate::signal::Window;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldScheme {
    /// Window-level split; each class is shuffled and dealt round-robin.
    #[default]
    Stratified,
    /// Whole subjects are held out together.
    BySubject,
}

/// Fold index for every example.
pub fn assign_folds(
    labels: &[bool],
    subjects: &[String],
    k: usize,
    seed: u64,
    scheme: FoldScheme,
) -> Result<Vec<usize>, EvalError> {
    if k < 2 {
        return Err(EvalError::Folds(format!("k must be >= 2, got {k}")));
    }
    let falls: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let adls: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if falls.is_empty() || adls.is_empty() {
        return Err(EvalError::CannotEvaluate("both classes must be present".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    match scheme {
        FoldScheme::Stratified => {
            if falls.len() < k || adls.len() < k {
                return Err(EvalError::Folds(format!(
                    "{k} folds need at least {k} examples per class ({} falls, {} ADLs)",
                    falls.len(),
                    adls.len()
                )));
            }
            // the ADL deal continues where the fall deal stopped so fold sizes stay within one
            let mut next = 0;
            for mut class in [falls, adls] {
                class.shuffle(&mut rng);
                for i in class {
                    fold[i] = next % k;
                    next += 1;
                }
            }
        }
        FoldScheme::BySubject => {
            if subjects.len() != labels.len() {
                return Err(EvalError::Folds("one subject per example required".into()));
            }
            let mut ids: Vec<&str> = subjects.iter().map(String::as_str).collect();
            ids.sort_unstable();
            ids.dedup();
            if ids.len() < k {
                return Err(EvalError::Folds(format!("{k} folds need at least {k} subjects, found {}", ids.len())));
            }
            ids.shuffle(&mut rng);
            for (i, s) in subjects.iter().enumerate() {
                fold[i] = ids.iter().position(|id| id == s).expect("subject listed") % k;
            }
        }
    }
    Ok(fold)
}

pub fn kfold_evaluate(
    windows: &[Window<f64>],
    k: usize,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<MetricsReport, EvalError> {
    kfold_evaluate_set(&EvalSet::from_windows(windows, &cfg.registry)?, k, cfg, seed)
}

/// Per fold: fit gate, optional PCA and model on the other folds, score the
/// held-out fold. Counts are pooled across folds before computing ratios.
pub fn kfold_evaluate_set(set: &EvalSet, k: usize, cfg: &PipelineConfig, seed: u64) -> Result<MetricsReport, EvalError> {
    let folds = assign_folds(&set.labels, &set.subjects, k, seed, cfg.folds)?;
    let per_fold = (0..k)
        .into_par_iter()
        .map(|f| {
            let pipeline = fit_fold(set, &folds, f, cfg)?;
            let test: Vec<usize> = (0..set.len()).filter(|&i| folds[i] == f).collect();
            let counts = evaluate(&pipeline, &set.subset(&test))?;
            Ok(FoldReport {
                fold: f,
                counts,
                metrics: metrics(&counts),
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let mut config = cfg.snapshot();
    config["k"] = k.into();
    config["seed"] = seed.into();
    Ok(MetricsReport::from_folds(set.dataset.clone(), per_fold, config))
}

/// Pipeline fitted on every example whose fold is not `fold`.
pub fn fit_fold(set: &EvalSet, folds: &[usize], fold: usize, cfg: &PipelineConfig) -> Result<FittedPipeline, EvalError> {
    let train: Vec<usize> = (0..set.len()).filter(|&i| folds[i] != fold).collect();
    FittedPipeline::fit_set(&set.subset(&train), cfg)
}
