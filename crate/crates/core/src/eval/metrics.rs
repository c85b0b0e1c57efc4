//! Confusion counts and the four ratio metrics, FALL as the positive class.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::signal::ActivityClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, truth: ActivityClass, predicted: ActivityClass) {
        match (truth.is_fall(), predicted.is_fall()) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

pub fn confusion(labels: &[ActivityClass], predictions: &[ActivityClass]) -> Result<ConfusionCounts, EvalError> {
    if labels.len() != predictions.len() {
        return Err(EvalError::LengthMismatch {
            labels: labels.len(),
            predictions: predictions.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&t, &p) in labels.iter().zip(predictions) {
        c.record(t, p);
    }
    Ok(c)
}

/// Ratio metrics. A metric whose denominator is zero is reported as 0 and
/// its name is listed in `degenerate`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<String>,
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let mut degenerate = Vec::new();
    let mut ratio = |name: &str, num: f64, den: f64| {
        if den == 0.0 {
            degenerate.push(name.to_string());
            0.0
        } else {
            num / den
        }
    };
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let sensitivity = ratio("sensitivity", tp, tp + fn_);
    let specificity = ratio("specificity", tn, tn + fp);
    let precision = ratio("precision", tp, tp + fp);
    let f1 = ratio("f1", 2.0 * precision * sensitivity, precision + sensitivity);
    Metrics {
        sensitivity,
        specificity,
        precision,
        f1,
        degenerate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Pooled result of an evaluation run.
///
/// Serialized keys are stable: `sensitivity`, `specificity`, `precision`,
/// `f1`, `tp`, `fp`, `tn`, `fn`, `per_fold`, plus `dataset` and `config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    #[serde(flatten)]
    pub metrics: Metrics,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    pub per_fold: Vec<FoldReport>,
    pub config: serde_json::Value,
}

impl MetricsReport {
    pub fn from_folds(dataset: impl Into<String>, per_fold: Vec<FoldReport>, config: serde_json::Value) -> Self {
        let counts: ConfusionCounts = per_fold.iter().map(|f| f.counts).sum();
        Self {
            dataset: dataset.into(),
            metrics: metrics(&counts),
            counts,
            per_fold,
            config,
        }
    }

    pub fn single(dataset: impl Into<String>, counts: ConfusionCounts, config: serde_json::Value) -> Self {
        Self {
            dataset: dataset.into(),
            metrics: metrics(&counts),
            counts,
            per_fold: Vec::new(),
            config,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let pct = |v: f64| format!("{:>7.2}%", 100.0 * v);
        let _ = writeln!(s, "dataset: {}", self.dataset);
        let _ = writeln!(
            s,
            "{:<6} {:>8} {:>8} {:>8} {:>8} {:>6} {:>6} {:>6} {:>6}",
            "fold", "sens", "spec", "prec", "f1", "tp", "fp", "tn", "fn"
        );
        let mut row = |name: &str, m: &Metrics, c: &ConfusionCounts| {
            let _ = writeln!(
                s,
                "{:<6} {} {} {} {} {:>6} {:>6} {:>6} {:>6}",
                name,
                pct(m.sensitivity),
                pct(m.specificity),
                pct(m.precision),
                pct(m.f1),
                c.tp,
                c.fp,
                c.tn,
                c.fn_
            );
        };
        for f in &self.per_fold {
            row(&f.fold.to_string(), &f.metrics, &f.counts);
        }
        row("total", &self.metrics, &self.counts);
        if !self.metrics.degenerate.is_empty() {
            let _ = writeln!(s, "degenerate (zero denominator): {}", self.metrics.degenerate.join(", "));
        }
        s
    }
}
