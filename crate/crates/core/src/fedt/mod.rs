//! FEDT: an additive ensemble of regression trees trained on the regularized
//! objective `Σ_j l(y'_j, y_j) + Σ_m (α·K_m + β·Σ_k w_k²)`.
//!
//! `l` is the binary logistic loss on the margin. Trees are grown with
//! second-order (Newton) boosting and exact greedy splits.
//!
//! Note the regularizer convention: the penalty is `β·Σw²`, not `β/2·Σw²`
//! as in most boosting libraries, so every closed form below carries `2β`:
//!
//! * leaf weight: `w* = −G / (H + 2β)`
//! * split gain: `½·[G_L²/(H_L+2β) + G_R²/(H_R+2β) − G²/(H+2β)] − α`
//!
//! where `G`, `H` are the sums of first and second derivatives of the loss
//! over the examples reaching the node. Trees store unshrunk weights `w`;
//! the ensemble adds `η·f_m`, and [`objective`] charges `β·(η·w)²`.

mod model_io;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureVector, Fingerprint};
use crate::scalar::{half, two};
use crate::signal::ActivityClass;
use crate::Scalar;

pub use model_io::{load_model, save_model, ModelIoError, MODEL_MAGIC, MODEL_VERSION};
pub use train::{train, train_with_log, RoundLog};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FedtError {
    #[error("feature arity mismatch: expected {expected}, found {found}")]
    Arity { expected: usize, found: usize },
    #[error("model/feature incompatibility: model fingerprint {model}, vector fingerprint {vector}")]
    Fingerprint { model: Fingerprint, vector: Fingerprint },
    #[error("degenerate leaf: H + 2β = {0} is not positive")]
    DegenerateLeaf(f64),
    #[error("degenerate split: a denominator H + 2β is not positive")]
    DegenerateSplit,
    #[error("cannot train: training data contains a single class")]
    SingleClass,
    #[error("training set: {0}")]
    TrainingSet(String),
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node<T> {
    Leaf { weight: T },
    Split { feature: usize, threshold: T, left: usize, right: usize },
}

/// CART with real-valued leaf scores. Node 0 is the root; children always
/// have larger indices than their parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> RegressionTree<T> {
    pub fn single_leaf(weight: T) -> Self {
        Self {
            nodes: vec![Node::Leaf { weight }],
        }
    }

    pub fn stump(feature: usize, threshold: T, left: T, right: T) -> Self {
        Self {
            nodes: vec![
                Node::Split {
                    feature,
                    threshold,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { weight: left },
                Node::Leaf { weight: right },
            ],
        }
    }

    /// Checks the arena shape: non-empty, children after parents, in range.
    pub fn from_nodes(nodes: Vec<Node<T>>) -> Result<Self, String> {
        if nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        let mut parents = vec![0usize; nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            if let Node::Split { left, right, .. } = *n {
                for c in [left, right] {
                    if c <= i || c >= nodes.len() {
                        return Err(format!("node {i} has invalid child {c}"));
                    }
                    parents[c] += 1;
                }
            }
        }
        if parents.iter().skip(1).any(|&p| p != 1) || parents[0] != 0 {
            return Err("every non-root node must have exactly one parent".into());
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    /// Number of leaves, `K`.
    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn leaf_weights(&self) -> impl Iterator<Item = T> + '_ {
        self.nodes.iter().filter_map(|n| match *n {
            Node::Leaf { weight } => Some(weight),
            _ => None,
        })
    }

    pub fn depth(&self) -> usize {
        fn go<T>(nodes: &[Node<T>], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn max_feature_index(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Split { feature, .. } => Some(feature),
                _ => None,
            })
            .max()
    }

    /// Leaf score for `x`. `x[f] < threshold` goes left, otherwise right.
    /// The caller guarantees every split feature indexes into `x`.
    #[inline]
    pub fn score(&self, x: &[T]) -> T {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { weight } => return weight,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }
}

/// [`RegressionTree::score`] with an arity check.
pub fn predict_tree<T: Scalar>(tree: &RegressionTree<T>, x: &[T]) -> Result<T, FedtError> {
    if let Some(f) = tree.max_feature_index() {
        if f >= x.len() {
            return Err(FedtError::Arity {
                expected: f + 1,
                found: x.len(),
            });
        }
    }
    Ok(tree.score(x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters<T> {
    /// Boosting rounds `M`.
    pub rounds: usize,
    /// Per-leaf penalty α.
    pub alpha: T,
    /// Quadratic leaf-weight penalty β.
    pub beta: T,
    /// Shrinkage η applied to every tree's score.
    pub learning_rate: T,
    pub max_depth: usize,
    /// Minimum hessian sum in each child of a split.
    pub min_child_hessian: T,
    /// Multiplier on the gradient and hessian of FALL examples. `None`
    /// means `N_adl / N_fall` of the training set.
    pub pos_weight: Option<T>,
    /// FALL iff `logistic(margin) >= cutoff`.
    pub cutoff: T,
}

impl<T: Scalar> Default for Hyperparameters<T> {
    fn default() -> Self {
        let f = T::from_f64_lossy;
        Self {
            rounds: 100,
            alpha: T::zero(),
            beta: T::one(),
            learning_rate: f(0.3),
            max_depth: 6,
            min_child_hessian: T::one(),
            pos_weight: None,
            cutoff: half(),
        }
    }
}

impl<T: Scalar> Hyperparameters<T> {
    pub fn validate(&self) -> Result<(), FedtError> {
        let bad = |m: String| Err(FedtError::Hyper(m));
        if self.rounds == 0 {
            return bad("rounds must be >= 1".into());
        }
        if !(self.alpha >= T::zero()) || !self.alpha.is_finite() {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if !(self.beta >= T::zero()) || !self.beta.is_finite() {
            return bad(format!("beta must be finite and >= 0, got {}", self.beta));
        }
        if !(self.learning_rate > T::zero()) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.min_child_hessian >= T::zero()) {
            return bad(format!("min_child_hessian must be >= 0, got {}", self.min_child_hessian));
        }
        if let Some(w) = self.pos_weight {
            if !(w > T::zero()) || !w.is_finite() {
                return bad(format!("pos_weight must be > 0, got {w}"));
            }
        }
        if !(self.cutoff > T::zero() && self.cutoff < T::one()) {
            return bad(format!("cutoff must be in (0, 1), got {}", self.cutoff));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedtModel<T> {
    pub trees: Vec<RegressionTree<T>>,
    pub hyper: Hyperparameters<T>,
    /// Initial margin (log-odds of the training prevalence).
    pub base_score: T,
    pub n_features: usize,
    pub fingerprint: Fingerprint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction<T> {
    pub label: ActivityClass,
    pub probability: T,
    pub margin: T,
}

/// Numerically stable `1 / (1 + e^{−m})`.
pub fn logistic<T: Scalar>(m: T) -> T {
    if m >= T::zero() {
        T::one() / (T::one() + (-m).exp())
    } else {
        let e = m.exp();
        e / (T::one() + e)
    }
}

/// Logistic loss on margin `m` for label `y`: `ln(1 + e^m) − y·m`.
pub fn logistic_loss<T: Scalar>(m: T, y: bool) -> T {
    let softplus = m.max(T::zero()) + (-m.abs()).exp().ln_1p();
    if y {
        softplus - m
    } else {
        softplus
    }
}

impl<T: Scalar> FedtModel<T> {
    pub fn check_input(&self, x: &FeatureVector<T>) -> Result<(), FedtError> {
        if x.fingerprint != self.fingerprint {
            return Err(FedtError::Fingerprint {
                model: self.fingerprint,
                vector: x.fingerprint,
            });
        }
        if x.values.len() != self.n_features {
            return Err(FedtError::Arity {
                expected: self.n_features,
                found: x.values.len(),
            });
        }
        Ok(())
    }

    /// `base + η · Σ_m f_m(x)` without input checks.
    pub fn margin_unchecked(&self, x: &[T]) -> T {
        let sum: T = self.trees.iter().map(|t| t.score(x)).sum();
        self.base_score + self.hyper.learning_rate * sum
    }

    pub fn total_leaves(&self) -> usize {
        self.trees.iter().map(RegressionTree::leaf_count).sum()
    }

    pub fn sum_squared_weights(&self) -> T {
        self.trees.iter().flat_map(|t| t.leaf_weights()).map(|w| w * w).sum()
    }
}

pub fn predict_margin<T: Scalar>(model: &FedtModel<T>, x: &FeatureVector<T>) -> Result<T, FedtError> {
    model.check_input(x)?;
    Ok(model.margin_unchecked(&x.values))
}

/// `probability = logistic(margin)`; FALL iff probability ≥ the model cutoff.
pub fn classify<T: Scalar>(model: &FedtModel<T>, x: &FeatureVector<T>) -> Result<Prediction<T>, FedtError> {
    let margin = predict_margin(model, x)?;
    Ok(prediction_from_margin(margin, model.hyper.cutoff))
}

pub fn prediction_from_margin<T: Scalar>(margin: T, cutoff: T) -> Prediction<T> {
    let probability = logistic(margin);
    Prediction {
        label: if probability >= cutoff {
            ActivityClass::Fall
        } else {
            ActivityClass::Adl
        },
        probability,
        margin,
    }
}

/// Minimizer of `G·w + ½·H·w² + β·w²`: `−G / (H + 2β)`.
pub fn leaf_weight<T: Scalar>(g: T, h: T, beta: T) -> Result<T, FedtError> {
    let denom = h + two::<T>() * beta;
    if !(denom > T::zero()) {
        return Err(FedtError::DegenerateLeaf(denom.to_f64_lossless()));
    }
    Ok(-g / denom)
}

/// Objective reduction from splitting a node with totals `(G, H)` into a
/// left child `(G_L, H_L)` and the remainder, minus the extra leaf's α.
pub fn split_gain<T: Scalar>(g: T, h: T, g_left: T, h_left: T, alpha: T, beta: T) -> Result<T, FedtError> {
    let b2 = two::<T>() * beta;
    let (g_right, h_right) = (g - g_left, h - h_left);
    let (dl, dr, dp) = (h_left + b2, h_right + b2, h + b2);
    if !(dl > T::zero() && dr > T::zero() && dp > T::zero()) {
        return Err(FedtError::DegenerateSplit);
    }
    Ok(half::<T>() * (g_left * g_left / dl + g_right * g_right / dr - g * g / dp) - alpha)
}

/// Labelled feature matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet<T> {
    values: Vec<T>,
    labels: Vec<bool>,
    n_features: usize,
    fingerprint: Fingerprint,
}

impl<T: Scalar> TrainingSet<T> {
    /// `labels[j]` is true for FALL.
    pub fn new(vectors: &[FeatureVector<T>], labels: &[bool]) -> Result<Self, FedtError> {
        let first = vectors
            .first()
            .ok_or_else(|| FedtError::TrainingSet("no examples".into()))?;
        if vectors.len() != labels.len() {
            return Err(FedtError::TrainingSet(format!(
                "{} vectors but {} labels",
                vectors.len(),
                labels.len()
            )));
        }
        let n_features = first.len();
        let mut values = Vec::with_capacity(vectors.len() * n_features);
        for (j, v) in vectors.iter().enumerate() {
            if v.len() != n_features {
                return Err(FedtError::Arity {
                    expected: n_features,
                    found: v.len(),
                });
            }
            if v.fingerprint != first.fingerprint {
                return Err(FedtError::Fingerprint {
                    model: first.fingerprint,
                    vector: v.fingerprint,
                });
            }
            if v.values.iter().any(|x| !x.is_finite()) {
                return Err(FedtError::TrainingSet(format!("example {j} has non-finite features")));
            }
            values.extend_from_slice(&v.values);
        }
        Ok(Self {
            values,
            labels: labels.to_vec(),
            n_features,
            fingerprint: first.fingerprint,
        })
    }

    pub fn from_rows(rows: &[Vec<T>], labels: &[bool], fingerprint: Fingerprint) -> Result<Self, FedtError> {
        let vectors: Vec<FeatureVector<T>> = rows.iter().map(|r| FeatureVector::new(r.clone(), fingerprint)).collect();
        Self::new(&vectors, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn row(&self, j: usize) -> &[T] {
        &self.values[j * self.n_features..(j + 1) * self.n_features]
    }

    pub fn label(&self, j: usize) -> bool {
        self.labels[j]
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    /// Copy with column `f` replaced by `map(value)`.
    pub fn map_column(&self, f: usize, map: impl Fn(T) -> T) -> Self {
        let mut out = self.clone();
        for j in 0..self.len() {
            let idx = j * self.n_features + f;
            out.values[idx] = map(out.values[idx]);
        }
        out
    }
}

/// `Σ_j l(margin_j, y_j) + Σ_m (α·K_m + β·Σ_k (η·w_mk)²)`, unweighted.
///
/// The ensemble member added in round `m` is the shrunk tree `η·f_m`, so
/// the quadratic penalty is taken on the effective leaf scores `η·w`.
pub fn objective<T: Scalar>(model: &FedtModel<T>, data: &TrainingSet<T>, alpha: T, beta: T) -> Result<T, FedtError> {
    if data.n_features() != model.n_features {
        return Err(FedtError::Arity {
            expected: model.n_features,
            found: data.n_features(),
        });
    }
    let loss: T = (0..data.len())
        .map(|j| logistic_loss(model.margin_unchecked(data.row(j)), data.label(j)))
        .sum();
    Ok(loss + regularization(&model.trees, model.hyper.learning_rate, alpha, beta))
}

pub(crate) fn regularization<T: Scalar>(trees: &[RegressionTree<T>], eta: T, alpha: T, beta: T) -> T {
    trees
        .iter()
        .map(|t| {
            alpha * T::from_usize_exact(t.leaf_count()) + beta * t.leaf_weights().map(|w| (eta * w) * (eta * w)).sum::<T>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn model(trees: Vec<RegressionTree<f64>>, n_features: usize) -> FedtModel<f64> {
        FedtModel {
            trees,
            hyper: Hyperparameters {
                learning_rate: 1.0,
                ..Default::default()
            },
            base_score: 0.0,
            n_features,
            fingerprint: Fingerprint::default(),
        }
    }

    fn fv(values: Vec<f64>) -> FeatureVector<f64> {
        FeatureVector::new(values, Fingerprint::default())
    }

    #[test]
    fn tree_prediction() {
        assert_eq!(predict_tree(&RegressionTree::single_leaf(0.7), &[1.0, 2.0]).unwrap(), 0.7);
        let stump = RegressionTree::stump(0, 1.0, -1.0, 1.0);
        assert_eq!(predict_tree(&stump, &[0.5]).unwrap(), -1.0);
        assert_eq!(predict_tree(&stump, &[1.0]).unwrap(), 1.0);
        assert_eq!(predict_tree(&stump, &[]), Err(FedtError::Arity { expected: 1, found: 0 }));
    }

    #[test]
    fn margin_is_additive() {
        let m = model(vec![RegressionTree::single_leaf(0.2), RegressionTree::single_leaf(0.3)], 1);
        assert_abs_diff_eq!(predict_margin(&m, &fv(vec![0.0])).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn fingerprint_and_arity_enforced() {
        let m = model(vec![RegressionTree::single_leaf(0.2)], 2);
        let mut x = fv(vec![0.0, 1.0]);
        x.fingerprint = Fingerprint([7; 32]);
        assert!(matches!(predict_margin(&m, &x), Err(FedtError::Fingerprint { .. })));
        assert!(matches!(predict_margin(&m, &fv(vec![0.0])), Err(FedtError::Arity { .. })));
    }

    #[test]
    fn classify_probabilities() {
        let zero = model(vec![RegressionTree::single_leaf(0.0)], 1);
        let p = classify(&zero, &fv(vec![0.0])).unwrap();
        assert_eq!(p.probability, 0.5);
        assert_eq!(p.label, ActivityClass::Fall);
        let big = model(vec![RegressionTree::single_leaf(50.0)], 1);
        let p = classify(&big, &fv(vec![0.0])).unwrap();
        assert!(p.probability > 1.0 - 1e-12);
        assert_eq!(p.label, ActivityClass::Fall);
        let neg = model(vec![RegressionTree::single_leaf(-800.0)], 1);
        let p = classify(&neg, &fv(vec![0.0])).unwrap();
        assert!(p.probability >= 0.0 && p.probability < 1e-300);
    }

    #[test]
    fn leaf_weight_examples() {
        assert_eq!(leaf_weight(2.0, 1.0, 0.5).unwrap(), -1.0);
        assert_eq!(leaf_weight(0.0, 3.0, 1.0).unwrap(), 0.0);
        assert!(leaf_weight(5.0f64, 2.0, 1e9).unwrap().abs() < 1e-8);
        assert!(matches!(leaf_weight(1.0, 0.0, 0.0), Err(FedtError::DegenerateLeaf(_))));
    }

    #[test]
    fn split_gain_empty_right_child_costs_alpha() {
        let g = split_gain(3.0, 4.0, 3.0, 4.0, 0.7, 0.5).unwrap();
        assert_abs_diff_eq!(g, -0.7, epsilon = 1e-12);
        assert_eq!(split_gain(3.0, 4.0, 3.0, 4.0, 0.7, 0.0), Err(FedtError::DegenerateSplit));
    }

    #[test]
    fn split_gain_matches_explicit_objective_difference() {
        // Symmetric split G = 0, G_L = −G_R. Objective of a leaf with
        // weight w over (G, H) is G·w + ½H·w² + β·w²; at the optimum it is
        // −G²/(2(H+2β)). One leaf vs two leaves, plus α per leaf.
        let (gl, hl, hr, alpha, beta) = (1.5, 2.0, 3.0, 0.01, 0.5);
        let leaf_obj = |g: f64, h: f64| {
            let w = -g / (h + 2.0 * beta);
            g * w + 0.5 * h * w * w + beta * w * w + alpha
        };
        let one = leaf_obj(0.0, hl + hr);
        let two = leaf_obj(gl, hl) + leaf_obj(-gl, hr);
        let gain = split_gain(0.0, hl + hr, gl, hl, alpha, beta).unwrap();
        assert_abs_diff_eq!(gain, one - two, epsilon = 1e-12);
        let closed = gl * gl * (1.0 / (hl + 2.0 * beta) + 1.0 / (hr + 2.0 * beta)) / 2.0 - alpha;
        assert_abs_diff_eq!(gain, closed, epsilon = 1e-12);
        assert!(gain > 0.0);
    }

    #[test]
    fn objective_examples() {
        let fp = Fingerprint::default();
        let data = TrainingSet::from_rows(&[vec![0.0]], &[true], fp).unwrap();
        let alpha = 0.25;
        let m = model(vec![RegressionTree::single_leaf(0.0)], 1);
        let obj = objective(&m, &data, alpha, 1.0).unwrap();
        assert_abs_diff_eq!(obj, 2f64.ln() + alpha, epsilon = 1e-12);
        // zero-weight extra leaf: +α exactly
        let m2 = model(vec![RegressionTree::stump(0, 5.0, 0.0, 0.0)], 1);
        assert_abs_diff_eq!(objective(&m2, &data, alpha, 1.0).unwrap() - obj, alpha, epsilon = 1e-12);
    }

    #[test]
    fn logistic_loss_stable() {
        assert_abs_diff_eq!(logistic_loss(0.0, true), 2f64.ln(), epsilon = 1e-15);
        assert!(logistic_loss(1000.0, true) < 1e-300 + 1e-12);
        assert_abs_diff_eq!(logistic_loss(1000.0, false), 1000.0, epsilon = 1e-9);
        assert_abs_diff_eq!(logistic_loss(-1000.0, true), 1000.0, epsilon = 1e-9);
    }

    #[test]
    fn tree_arena_validation() {
        assert!(RegressionTree::<f64>::from_nodes(vec![]).is_err());
        let cyclic = vec![Node::Split { feature: 0, threshold: 0.0, left: 0, right: 1 }, Node::Leaf { weight: 0.0 }];
        assert!(RegressionTree::from_nodes(cyclic).is_err());
        let shared = vec![
            Node::Split { feature: 0, threshold: 0.0, left: 1, right: 1 },
            Node::Leaf { weight: 0.0 },
        ];
        assert!(RegressionTree::from_nodes(shared).is_err());
        let ok = RegressionTree::stump(2, 0.5, 1.0, 2.0);
        assert_eq!(RegressionTree::from_nodes(ok.nodes().to_vec()).unwrap(), ok);
        assert_eq!(ok.depth(), 1);
        assert_eq!(ok.leaf_count(), 2);
    }

    #[test]
    fn training_set_validation() {
        let fp = Fingerprint::default();
        assert!(TrainingSet::<f64>::from_rows(&[], &[], fp).is_err());
        assert!(TrainingSet::from_rows(&[vec![1.0], vec![1.0, 2.0]], &[true, false], fp).is_err());
        assert!(TrainingSet::from_rows(&[vec![f64::NAN]], &[true], fp).is_err());
        assert!(TrainingSet::from_rows(&[vec![1.0]], &[true, false], fp).is_err());
    }

    #[test]
    fn hyper_validation() {
        assert!(Hyperparameters::<f64>::default().validate().is_ok());
        let bad = [
            Hyperparameters { rounds: 0, ..Default::default() },
            Hyperparameters { alpha: -1.0, ..Default::default() },
            Hyperparameters { beta: f64::NAN, ..Default::default() },
            Hyperparameters { learning_rate: 0.0, ..Default::default() },
            Hyperparameters { cutoff: 1.0, ..Default::default() },
            Hyperparameters { pos_weight: Some(0.0), ..Default::default() },
        ];
        for h in bad {
            assert!(h.validate().is_err(), "{h:?}");
        }
    }
}
