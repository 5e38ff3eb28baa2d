//! Gradient boosted regression trees with histogram split finding.
//!
//! Squared loss fits each tree to the current residuals; the binomial family
//! boosts the log-odds with Newton leaf values. Features are quantized into at
//! most [`MAX_BINS`] bins once per fit; split thresholds are stored as raw
//! feature values so prediction needs no binning.

use serde::{Deserialize, Serialize};

use super::Family;
use crate::matrix::FeatureMatrix;
use crate::scalar::{expit, logit, mean, Real};

pub const MAX_BINS: usize = 64;
const MAX_LEAF_LOGIT: f64 = 10.0;

#[derive(Debug, Clone, Copy)]
pub(crate) struct BoostParams<T> {
    pub num_trees: usize,
    pub max_depth: usize,
    pub learning_rate: T,
    pub min_leaf_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case", bound = "T: Real")]
pub enum Node<T> {
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
    Leaf {
        value: T,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Tree<T> {
    pub nodes: Vec<Node<T>>,
}

impl<T: Real> Tree<T> {
    fn predict(&self, row: &[T]) -> T {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => idx = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

/// Additive tree ensemble; leaf values already include the learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TreeEnsemble<T> {
    pub base_score: T,
    pub trees: Vec<Tree<T>>,
}

impl<T: Real> TreeEnsemble<T> {
    pub fn raw_score(&self, row: &[T]) -> T {
        self.trees.iter().fold(self.base_score, |acc, t| acc + t.predict(row))
    }

    pub(crate) fn predict_row(&self, row: &[T], family: Family) -> T {
        let s = self.raw_score(row);
        match family {
            Family::Squared => s,
            Family::Binomial => expit(s),
        }
    }
}

struct Binned<T> {
    /// Per feature, strictly increasing thresholds; bin `b` holds `x <= thresholds[b]`.
    thresholds: Vec<Vec<T>>,
    codes: Vec<Vec<u8>>,
}

fn bin_features<T: Real>(x: &FeatureMatrix<T>) -> Binned<T> {
    let mut thresholds = Vec::with_capacity(x.n_cols());
    let mut codes = Vec::with_capacity(x.n_cols());
    for col in x.columns() {
        let mut sorted = col.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
        let mut uniq = sorted.clone();
        uniq.dedup();
        let mut th: Vec<T> = if uniq.len() <= MAX_BINS {
            uniq[..uniq.len().saturating_sub(1)].to_vec()
        } else {
            let n = sorted.len();
            let mut th: Vec<T> = (1..MAX_BINS).map(|k| sorted[k * n / MAX_BINS]).collect();
            th.dedup();
            let max = *uniq.last().expect("non-empty");
            th.retain(|&v| v < max);
            th
        };
        th.dedup();
        let code = col.iter().map(|&v| th.partition_point(|&t| t < v) as u8).collect();
        thresholds.push(th);
        codes.push(code);
    }
    Binned { thresholds, codes }
}

#[derive(Clone, Copy, Default)]
struct Stat<T> {
    g: T,
    h: T,
    n: usize,
}

struct SplitChoice {
    feature: usize,
    bin: usize,
}

struct TreeBuilder<'a, T> {
    binned: &'a Binned<T>,
    grad: &'a [T],
    hess: &'a [T],
    params: &'a BoostParams<T>,
    family: Family,
    nodes: Vec<Node<T>>,
    leaf_of_row: Vec<usize>,
}

impl<'a, T: Real> TreeBuilder<'a, T> {
    fn leaf_value(&self, g: T, h: T) -> T {
        let raw = -g / h.max(T::lit(1e-12));
        let raw = match self.family {
            Family::Squared => raw,
            Family::Binomial => raw.max(T::lit(-MAX_LEAF_LOGIT)).min(T::lit(MAX_LEAF_LOGIT)),
        };
        raw * self.params.learning_rate
    }

    fn best_split(&self, rows: &[usize], total: Stat<T>) -> Option<SplitChoice> {
        let min_leaf = self.params.min_leaf_size;
        if rows.len() < 2 * min_leaf {
            return None;
        }
        let score = |g: T, h: T| if h > T::zero() { g * g / h } else { T::zero() };
        let parent = score(total.g, total.h);
        let tol = T::lit(1e-12) * (T::one() + parent.abs());
        let mut best: Option<(T, SplitChoice)> = None;
        for (f, th) in self.binned.thresholds.iter().enumerate() {
            if th.is_empty() {
                continue;
            }
            let mut hist = vec![Stat::<T>::default(); th.len() + 1];
            let codes = &self.binned.codes[f];
            for &i in rows {
                let s = &mut hist[codes[i] as usize];
                s.g += self.grad[i];
                s.h += self.hess[i];
                s.n += 1;
            }
            let mut left = Stat::<T>::default();
            for (b, s) in hist.iter().enumerate().take(th.len()) {
                left.g += s.g;
                left.h += s.h;
                left.n += s.n;
                let right_n = total.n - left.n;
                if left.n < min_leaf {
                    continue;
                }
                if right_n < min_leaf {
                    break;
                }
                let gain = score(left.g, left.h) + score(total.g - left.g, total.h - left.h) - parent;
                if gain > tol && best.as_ref().is_none_or(|(g, _)| gain > *g) {
                    best = Some((gain, SplitChoice { feature: f, bin: b }));
                }
            }
        }
        best.map(|(_, c)| c)
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let total = rows.iter().fold(Stat::default(), |mut s, &i| {
            s.g += self.grad[i];
            s.h += self.hess[i];
            s.n += 1;
            s
        });
        let id = self.nodes.len();
        let split = if depth < self.params.max_depth { self.best_split(&rows, total) } else { None };
        match split {
            None => {
                self.nodes.push(Node::Leaf {
                    value: self.leaf_value(total.g, total.h),
                });
                for &i in &rows {
                    self.leaf_of_row[i] = id;
                }
            }
            Some(SplitChoice { feature, bin }) => {
                self.nodes.push(Node::Leaf { value: T::zero() });
                let codes = &self.binned.codes[feature];
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| (codes[i] as usize) <= bin);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id] = Node::Split {
                    feature,
                    threshold: self.binned.thresholds[feature][bin],
                    left,
                    right,
                };
            }
        }
        id
    }
}

pub(crate) fn fit_boosted<T: Real>(
    x: &FeatureMatrix<T>,
    y: &[T],
    family: Family,
    params: &BoostParams<T>,
) -> TreeEnsemble<T> {
    let n = y.len();
    let base_score = match family {
        Family::Squared => mean(y),
        Family::Binomial => {
            let eps = super::prob_eps::<T>();
            logit(mean(y).max(eps).min(T::one() - eps))
        }
    };
    let binned = bin_features(x);
    let mut score = vec![base_score; n];
    let mut grad = vec![T::zero(); n];
    let mut hess = vec![T::one(); n];
    let mut trees = Vec::with_capacity(params.num_trees);
    for _ in 0..params.num_trees {
        for i in 0..n {
            match family {
                Family::Squared => grad[i] = score[i] - y[i],
                Family::Binomial => {
                    let p = expit(score[i]);
                    grad[i] = p - y[i];
                    hess[i] = (p * (T::one() - p)).max(T::lit(1e-6));
                }
            }
        }
        let mut builder = TreeBuilder {
            binned: &binned,
            grad: &grad,
            hess: &hess,
            params,
            family,
            nodes: Vec::new(),
            leaf_of_row: vec![0; n],
        };
        builder.grow((0..n).collect(), 0);
        let TreeBuilder { nodes, leaf_of_row, .. } = builder;
        for i in 0..n {
            if let Node::Leaf { value } = nodes[leaf_of_row[i]] {
                score[i] += value;
            }
        }
        trees.push(Tree { nodes });
    }
    TreeEnsemble { base_score, trees }
}
