//! Gate + features + model, fitted on training data only.

use serde::Serialize;

use super::pca::{pca_apply, pca_fit, PcaProjection};
use super::{ConfusionCounts, EvalError, FoldScheme};
use crate::features::{extract_batch, extract_features, FeatureRegistry, FeatureVector};
use crate::fedt::{classify, train, FedtModel, Hyperparameters, Prediction, TrainingSet};
use crate::gate::{fit_threshold_from_peaks, Threshold, DEFAULT_SAFETY_FACTOR};
use crate::signal::{ActivityClass, Window};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub safety_factor: f64,
    /// When false the model sees every window.
    pub gate: bool,
    pub registry: FeatureRegistry,
    pub hyper: Hyperparameters<f64>,
    /// Retained-variance fraction for a PCA step, `None` for raw features.
    pub pca: Option<f64>,
    pub folds: FoldScheme,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            safety_factor: DEFAULT_SAFETY_FACTOR,
            gate: true,
            registry: FeatureRegistry::default_registry(),
            hyper: Hyperparameters::default(),
            pca: None,
            folds: FoldScheme::Stratified,
        }
    }
}

#[derive(Serialize)]
struct Snapshot<'a> {
    safety_factor: f64,
    gate: bool,
    registry: String,
    n_features: usize,
    hyper: &'a Hyperparameters<f64>,
    pca: Option<f64>,
    folds: FoldScheme,
}

impl PipelineConfig {
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(Snapshot {
            safety_factor: self.safety_factor,
            gate: self.gate,
            registry: self.registry.fingerprint().to_hex(),
            n_features: self.registry.arity(),
            hyper: &self.hyper,
            pca: self.pca,
            folds: self.folds,
        })
        .expect("config snapshot serializes")
    }
}

/// Labelled feature rows ready for fitting and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub dataset: String,
    pub features: Vec<FeatureVector<f64>>,
    /// True for FALL.
    pub labels: Vec<bool>,
    /// Peak RMS of the source window, `+inf` for rows that did not come
    /// from windows (the gate then always escalates).
    pub peaks: Vec<f64>,
    pub subjects: Vec<String>,
}

impl EvalSet {
    pub fn from_windows(windows: &[Window<f64>], registry: &FeatureRegistry) -> Result<Self, EvalError> {
        let labels = windows
            .iter()
            .enumerate()
            .map(|(i, w)| w.label.map(ActivityClass::is_fall).ok_or(EvalError::Unlabeled(i)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            dataset: dataset_name(windows),
            features: extract_batch(windows, registry)?,
            labels,
            peaks: windows.iter().map(Window::peak_rms).collect(),
            subjects: windows.iter().map(|w| w.origin.subject.clone()).collect(),
        })
    }

    pub fn from_features(dataset: impl Into<String>, features: Vec<FeatureVector<f64>>, labels: Vec<bool>) -> Self {
        let n = features.len();
        Self {
            dataset: dataset.into(),
            features,
            labels,
            peaks: vec![f64::INFINITY; n],
            subjects: vec![String::new(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn fall_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            dataset: self.dataset.clone(),
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            peaks: idx.iter().map(|&i| self.peaks[i]).collect(),
            subjects: idx.iter().map(|&i| self.subjects[i].clone()).collect(),
        }
    }
}

/// Distinct dataset prefixes of the window origins, joined with `+`.
pub(crate) fn dataset_name(windows: &[Window<f64>]) -> String {
    let mut names: Vec<&str> = windows
        .iter()
        .map(|w| w.origin.recording.split('/').next().unwrap_or_default())
        .filter(|s| !s.is_empty())
        .collect();
    names.sort_unstable();
    names.dedup();
    if names.is_empty() {
        "unnamed".into()
    } else {
        names.join("+")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub escalated: bool,
    /// Model output; `None` when the gate kept the window on the device.
    pub prediction: Option<Prediction<f64>>,
    pub label: ActivityClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedPipeline {
    pub threshold: Option<Threshold<f64>>,
    pub registry: FeatureRegistry,
    pub pca: Option<PcaProjection>,
    pub model: FedtModel<f64>,
}

impl FittedPipeline {
    pub fn fit(windows: &[Window<f64>], cfg: &PipelineConfig) -> Result<Self, EvalError> {
        Self::fit_set(&EvalSet::from_windows(windows, &cfg.registry)?, cfg)
    }

    pub fn fit_set(set: &EvalSet, cfg: &PipelineConfig) -> Result<Self, EvalError> {
        let falls = set.fall_count();
        if falls == 0 || falls == set.len() {
            return Err(EvalError::CannotEvaluate("training data needs both classes".into()));
        }
        let threshold = if cfg.gate && set.peaks.iter().all(|p| p.is_finite()) {
            let peaks = set.peaks.iter().zip(&set.labels).filter(|(_, &l)| l).map(|(&p, _)| p);
            Some(fit_threshold_from_peaks(peaks, cfg.safety_factor, vec![set.dataset.clone()])?)
        } else {
            None
        };
        let pca = match cfg.pca {
            Some(frac) => {
                let rows: Vec<Vec<f64>> = set.features.iter().map(|f| f.values.clone()).collect();
                let source = set.features[0].fingerprint;
                Some(pca_fit(&rows, frac, source)?)
            }
            None => None,
        };
        let features = match &pca {
            Some(p) => set.features.iter().map(|f| pca_apply(p, f)).collect::<Result<Vec<_>, _>>()?,
            None => set.features.clone(),
        };
        let model = train(&TrainingSet::new(&features, &set.labels)?, &cfg.hyper)?;
        Ok(Self {
            threshold,
            registry: cfg.registry.clone(),
            pca,
            model,
        })
    }

    pub fn classify_features(&self, features: &FeatureVector<f64>, peak_rms: f64) -> Result<Verdict, EvalError> {
        let escalated = self.threshold.as_ref().is_none_or(|t| peak_rms >= t.tau);
        if !escalated {
            return Ok(Verdict {
                escalated,
                prediction: None,
                label: ActivityClass::Adl,
            });
        }
        let prediction = match &self.pca {
            Some(p) => classify(&self.model, &pca_apply(p, features)?)?,
            None => classify(&self.model, features)?,
        };
        Ok(Verdict {
            escalated,
            prediction: Some(prediction),
            label: prediction.label,
        })
    }

    pub fn classify_window(&self, window: &Window<f64>) -> Result<Verdict, EvalError> {
        let f = extract_features(window, &self.registry)?;
        self.classify_features(&f, window.peak_rms())
    }
}

/// Confusion counts of a fitted pipeline over a labelled set.
pub fn evaluate(pipeline: &FittedPipeline, set: &EvalSet) -> Result<ConfusionCounts, EvalError> {
    let mut c = ConfusionCounts::default();
    for ((f, &peak), &fall) in set.features.iter().zip(&set.peaks).zip(&set.labels) {
        let v = pipeline.classify_features(f, peak)?;
        let truth = if fall { ActivityClass::Fall } else { ActivityClass::Adl };
        c.record(truth, v.label);
    }
    Ok(c)
}
