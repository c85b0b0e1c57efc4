//! Second-order boosting with exact greedy split search.
//!
//! Each column is sorted once. A tree is grown level by level: for every
//! feature one pass over its sorted column accumulates left-side gradient
//! statistics for all open nodes at once, so a level costs
//! `O(features × examples)`. Greedy node decisions do not depend on the
//! order nodes are visited, so this yields the same tree as depth-first
//! growth.

use rayon::prelude::*;

use super::{
    leaf_weight, logistic, regularization, split_gain, FedtError, FedtModel, Hyperparameters, Node,
    RegressionTree, TrainingSet,
};
use crate::scalar::{half, two};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    /// Unweighted objective on the training data after this round.
    pub objective: f64,
    pub leaves: usize,
}

#[derive(Debug, Clone, Copy)]
struct Candidate<T> {
    gain: T,
    feature: usize,
    threshold: T,
}

pub fn train<T: Scalar>(data: &TrainingSet<T>, hyper: &Hyperparameters<T>) -> Result<FedtModel<T>, FedtError> {
    train_with_log(data, hyper).map(|(m, _)| m)
}

pub fn train_with_log<T: Scalar>(
    data: &TrainingSet<T>,
    hyper: &Hyperparameters<T>,
) -> Result<(FedtModel<T>, Vec<RoundLog>), FedtError> {
    hyper.validate()?;
    let n = data.len();
    let n_pos = data.labels().iter().filter(|&&y| y).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(FedtError::SingleClass);
    }
    let pos_weight = hyper
        .pos_weight
        .unwrap_or_else(|| T::from_usize_exact(n_neg) / T::from_usize_exact(n_pos));
    let base_score = (T::from_usize_exact(n_pos) / T::from_usize_exact(n_neg)).ln();

    let sorted = presort(data);
    let mut margins = vec![base_score; n];
    let mut trees = Vec::with_capacity(hyper.rounds);
    let mut log = Vec::with_capacity(hyper.rounds);
    let mut grad = vec![T::zero(); n];
    let mut hess = vec![T::zero(); n];

    for round in 0..hyper.rounds {
        for j in 0..n {
            let p = logistic(margins[j]);
            let y = data.label(j);
            let w = if y { pos_weight } else { T::one() };
            grad[j] = w * (p - if y { T::one() } else { T::zero() });
            hess[j] = w * p * (T::one() - p);
        }
        let tree = grow_tree(data, &sorted, &grad, &hess, hyper);
        for (j, m) in margins.iter_mut().enumerate() {
            *m += hyper.learning_rate * tree.score(data.row(j));
        }
        trees.push(tree);
        let loss: T = margins
            .iter()
            .zip(data.labels())
            .map(|(&m, &y)| super::logistic_loss(m, y))
            .sum();
        let objective = loss + regularization(&trees, hyper.learning_rate, hyper.alpha, hyper.beta);
        log.push(RoundLog {
            round: round + 1,
            objective: objective.to_f64_lossless(),
            leaves: trees.last().map_or(0, RegressionTree::leaf_count),
        });
    }

    Ok((
        FedtModel {
            trees,
            hyper: hyper.clone(),
            base_score,
            n_features: data.n_features(),
            fingerprint: data.fingerprint(),
        },
        log,
    ))
}

/// Per feature, example indices ordered by value (ties by index).
fn presort<T: Scalar>(data: &TrainingSet<T>) -> Vec<Vec<u32>> {
    (0..data.n_features())
        .into_par_iter()
        .map(|f| {
            let mut idx: Vec<u32> = (0..data.len() as u32).collect();
            idx.sort_by(|&a, &b| {
                let (va, vb) = (data.row(a as usize)[f], data.row(b as usize)[f]);
                va.partial_cmp(&vb).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
            });
            idx
        })
        .collect()
}

/// Threshold between two consecutive distinct values such that `lo` goes
/// left and `hi` goes right.
fn midpoint<T: Scalar>(lo: T, hi: T) -> T {
    let mid = lo + (hi - lo) * half();
    if mid > lo {
        mid
    } else {
        hi
    }
}

fn grow_tree<T: Scalar>(
    data: &TrainingSet<T>,
    sorted: &[Vec<u32>],
    grad: &[T],
    hess: &[T],
    hyper: &Hyperparameters<T>,
) -> RegressionTree<T> {
    const CLOSED: usize = usize::MAX;
    let n = data.len();
    let mut nodes: Vec<Node<T>> = vec![Node::Leaf { weight: T::zero() }];
    // node currently holding each example, or CLOSED once it reached a final leaf
    let mut node_of = vec![0usize; n];
    let mut open: Vec<usize> = vec![0];

    for depth in 0..=hyper.max_depth {
        if open.is_empty() {
            break;
        }
        // slot of each open node in `open`
        let mut slot_of = vec![CLOSED; nodes.len()];
        for (s, &node) in open.iter().enumerate() {
            slot_of[node] = s;
        }
        let mut totals = vec![(T::zero(), T::zero()); open.len()];
        for j in 0..n {
            if node_of[j] != CLOSED {
                let s = slot_of[node_of[j]];
                totals[s].0 += grad[j];
                totals[s].1 += hess[j];
            }
        }

        let best: Vec<Option<Candidate<T>>> = if depth == hyper.max_depth {
            vec![None; open.len()]
        } else {
            let per_feature: Vec<Vec<Option<Candidate<T>>>> = (0..data.n_features())
                .into_par_iter()
                .map(|f| scan_feature(f, data, &sorted[f], &node_of, &slot_of, &totals, grad, hess, hyper))
                .collect();
            let mut best = vec![None; open.len()];
            for cands in per_feature {
                for (s, c) in cands.into_iter().enumerate() {
                    if let Some(c) = c {
                        match best[s] {
                            Some(Candidate { gain, .. }) if c.gain <= gain => {}
                            _ => best[s] = Some(c),
                        }
                    }
                }
            }
            best
        };

        let mut next_open = Vec::new();
        let mut split_of = vec![None; open.len()];
        for (s, &node) in open.iter().enumerate() {
            match best[s] {
                Some(c) if c.gain > T::zero() => {
                    let left = nodes.len();
                    nodes.push(Node::Leaf { weight: T::zero() });
                    nodes.push(Node::Leaf { weight: T::zero() });
                    nodes[node] = Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left,
                        right: left + 1,
                    };
                    next_open.extend([left, left + 1]);
                    split_of[s] = Some((c.feature, c.threshold, left));
                }
                _ => {
                    let (g, h) = totals[s];
                    let weight = leaf_weight(g, h, hyper.beta).unwrap_or_else(|_| {
                        log::debug!("degenerate leaf (H + 2β <= 0); weight set to 0");
                        T::zero()
                    });
                    nodes[node] = Node::Leaf { weight };
                }
            }
        }
        for j in 0..n {
            let node = node_of[j];
            if node == CLOSED {
                continue;
            }
            node_of[j] = match split_of[slot_of[node]] {
                Some((f, thr, left)) => {
                    if data.row(j)[f] < thr {
                        left
                    } else {
                        left + 1
                    }
                }
                None => CLOSED,
            };
        }
        open = next_open;
    }
    RegressionTree { nodes }
}

#[allow(clippy::too_many_arguments)]
fn scan_feature<T: Scalar>(
    f: usize,
    data: &TrainingSet<T>,
    order: &[u32],
    node_of: &[usize],
    slot_of: &[usize],
    totals: &[(T, T)],
    grad: &[T],
    hess: &[T],
    hyper: &Hyperparameters<T>,
) -> Vec<Option<Candidate<T>>> {
    let k = totals.len();
    let mut acc = vec![(T::zero(), T::zero()); k];
    let mut last: Vec<Option<T>> = vec![None; k];
    let mut best: Vec<Option<Candidate<T>>> = vec![None; k];
    let b2 = two::<T>() * hyper.beta;
    for &j in order {
        let j = j as usize;
        let node = node_of[j];
        if node == usize::MAX {
            continue;
        }
        let s = slot_of[node];
        let v = data.row(j)[f];
        if let Some(prev) = last[s] {
            if v > prev {
                let (gl, hl) = acc[s];
                let (g, h) = totals[s];
                let hr = h - hl;
                if hl >= hyper.min_child_hessian && hr >= hyper.min_child_hessian && hl + b2 > T::zero() && hr + b2 > T::zero() {
                    if let Ok(gain) = split_gain(g, h, gl, hl, hyper.alpha, hyper.beta) {
                        if best[s].is_none_or(|b| gain > b.gain) {
                            best[s] = Some(Candidate {
                                gain,
                                feature: f,
                                threshold: midpoint(prev, v),
                            });
                        }
                    }
                }
            }
        }
        acc[s].0 += grad[j];
        acc[s].1 += hess[j];
        last[s] = Some(v);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Fingerprint;

    fn set(rows: &[Vec<f64>], labels: &[bool]) -> TrainingSet<f64> {
        TrainingSet::from_rows(rows, labels, Fingerprint::default()).unwrap()
    }

    #[test]
    fn midpoint_routes_correctly() {
        assert_eq!(midpoint(1.0, 3.0), 2.0);
        let lo = 1.0f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let m = midpoint(lo, hi);
        assert!(lo < m && m <= hi);
    }

    #[test]
    fn separable_1d_is_learned() {
        let xs: Vec<f64> = (-10..=10).filter(|&i| i != 0).map(|i| i as f64).collect();
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let labels: Vec<bool> = xs.iter().map(|&x| x > 0.0).collect();
        let hyper = Hyperparameters {
            rounds: 5,
            learning_rate: 0.3,
            alpha: 0.0,
            beta: 1.0,
            ..Default::default()
        };
        let data = set(&rows, &labels);
        let m = train(&data, &hyper).unwrap();
        for (r, &y) in rows.iter().zip(&labels) {
            let p = logistic(m.margin_unchecked(r));
            assert_eq!(p >= 0.5, y, "x={}", r[0]);
        }
        // the split lands halfway between -1 and 1
        match m.trees[0].nodes()[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_class_rejected() {
        let data = set(&[vec![1.0], vec![2.0]], &[true, true]);
        assert_eq!(train(&data, &Hyperparameters::default()), Err(FedtError::SingleClass));
    }

    #[test]
    fn huge_alpha_gives_stumps_of_one_leaf() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i * 7 % 11) as f64]).collect();
        let labels: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let hyper = Hyperparameters {
            rounds: 10,
            alpha: 1e6,
            ..Default::default()
        };
        let m = train(&set(&rows, &labels), &hyper).unwrap();
        assert!(m.trees.iter().all(|t| t.leaf_count() == 1));
        let first = m.margin_unchecked(&rows[0]);
        assert!(rows.iter().all(|r| m.margin_unchecked(r) == first));
    }

    #[test]
    fn deterministic() {
        let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos(), i as f64]).collect();
        let labels: Vec<bool> = (0..60).map(|i| (i as f64).sin() > 0.2).collect();
        let data = set(&rows, &labels);
        let h = Hyperparameters { rounds: 20, ..Default::default() };
        assert_eq!(train(&data, &h).unwrap(), train(&data, &h).unwrap());
    }

    #[test]
    fn depth_limit_respected() {
        let rows: Vec<Vec<f64>> = (0..200).map(|i| vec![((i * 37) % 101) as f64, ((i * 53) % 89) as f64]).collect();
        let labels: Vec<bool> = rows.iter().map(|r| (r[0] as i64 + r[1] as i64) % 3 == 0).collect();
        let h = Hyperparameters {
            rounds: 5,
            max_depth: 3,
            min_child_hessian: 0.0,
            ..Default::default()
        };
        let m = train(&set(&rows, &labels), &h).unwrap();
        assert!(m.trees.iter().all(|t| t.depth() <= 3));
        assert!(m.trees.iter().any(|t| t.depth() == 3));
        let h0 = Hyperparameters { max_depth: 0, ..h };
        let m = train(&set(&rows, &labels), &h0).unwrap();
        assert!(m.trees.iter().all(|t| t.leaf_count() == 1));
    }

    #[test]
    fn log_has_one_entry_per_round() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64]).collect();
        let labels: Vec<bool> = (0..30).map(|i| i % 2 == 0).collect();
        let (m, log) = train_with_log(&set(&rows, &labels), &Hyperparameters { rounds: 7, ..Default::default() }).unwrap();
        assert_eq!(log.len(), 7);
        assert_eq!(m.trees.len(), 7);
        assert_eq!(log[6].round, 7);
    }
}
