//! CART trees and bagged ensembles.
//!
//! Splits are searched exhaustively over the candidate features of a node,
//! features in ascending index order and thresholds in ascending value
//! order; a later candidate only replaces the incumbent on strictly larger
//! gain, so ties resolve to the lowest `(feature, threshold)`.

use ndarray::{Array2, ArrayView1};
use rand::Rng as _;

use crate::rng::{derive_seed, seeded, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Regression,
    Classification { n_classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaxFeatures {
    All,
    Sqrt,
    Third,
    Fixed(usize),
}

impl MaxFeatures {
    fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::All => n_features,
            MaxFeatures::Sqrt => (n_features as f64).sqrt().ceil() as usize,
            MaxFeatures::Third => n_features.div_ceil(3),
            MaxFeatures::Fixed(k) => k,
        };
        k.clamp(1, n_features)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub max_features: MaxFeatures,
}

#[derive(Debug, Clone)]
enum Node {
    /// Regression: `[mean]`; classification: class frequencies.
    Leaf(Vec<f64>),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    target: Target,
}

struct Builder<'a> {
    x: &'a Array2<f64>,
    y: &'a [f64],
    target: Target,
    params: TreeParams,
    n_candidates: usize,
    rng: Rng,
    nodes: Vec<Node>,
}

impl DecisionTree {
    /// Fits on the rows listed in `rows` (duplicates allowed, as produced by
    /// bootstrapping). The RNG is only consulted when feature subsampling
    /// is active.
    pub fn fit(
        x: &Array2<f64>,
        y: &[f64],
        rows: &[usize],
        target: Target,
        params: TreeParams,
        seed: u64,
    ) -> DecisionTree {
        let mut b = Builder {
            x,
            y,
            target,
            params,
            n_candidates: params.max_features.resolve(x.ncols()),
            rng: seeded(seed),
            nodes: Vec::new(),
        };
        let mut rows = rows.to_vec();
        b.grow(&mut rows, 0);
        DecisionTree {
            nodes: b.nodes,
            target,
        }
    }

    fn leaf_for(&self, row: ArrayView1<f64>) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|r| {
                let leaf = self.leaf_for(r);
                match self.target {
                    Target::Regression => leaf[0],
                    Target::Classification { .. } => argmax(leaf) as f64,
                }
            })
            .collect()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate() {
        if p > v[best] {
            best = i;
        }
    }
    best
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn leaf_value(&self, rows: &[usize]) -> Vec<f64> {
        let n = rows.len() as f64;
        match self.target {
            Target::Regression => vec![rows.iter().map(|&r| self.y[r]).sum::<f64>() / n],
            Target::Classification { n_classes } => {
                let mut counts = vec![0.0; n_classes];
                for &r in rows {
                    counts[self.y[r] as usize] += 1.0;
                }
                counts.iter_mut().for_each(|c| *c /= n);
                counts
            }
        }
    }

    fn grow(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(self.leaf_value(rows)));
        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf.max(1) {
            return id;
        }
        let Some(split) = self.best_split(rows) else {
            return id;
        };
        let mid = partition(rows, |r| self.x[[r, split.feature]] <= split.threshold);
        let (l, r) = rows.split_at_mut(mid);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }

    fn candidates(&mut self) -> Vec<usize> {
        let p = self.x.ncols();
        if self.n_candidates >= p {
            return (0..p).collect();
        }
        let mut c = rand::seq::index::sample(&mut self.rng, p, self.n_candidates).into_vec();
        c.sort_unstable();
        c
    }

    fn best_split(&mut self, rows: &[usize]) -> Option<SplitChoice> {
        let min_leaf = self.params.min_leaf.max(1);
        let n = rows.len();
        let (parent_score, scale) = self.parent_score(rows);
        let tol = 1e-12 * (1.0 + scale);
        let mut best: Option<SplitChoice> = None;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
        for f in self.candidates() {
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (self.x[[r, f]], r)));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if pairs[0].0 == pairs[n - 1].0 {
                continue;
            }
            let mut sweep = Sweep::new(self.target, rows, self.y);
            for i in 0..n - 1 {
                sweep.move_left(self.y[pairs[i].1]);
                let n_left = i + 1;
                if n_left < min_leaf || n - n_left < min_leaf || pairs[i].0 == pairs[i + 1].0 {
                    continue;
                }
                let gain = sweep.score() - parent_score;
                if gain > tol && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let (a, b) = (pairs[i].0, pairs[i + 1].0);
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(SplitChoice {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }

    /// Parent term of the gain (`sum^2/n` or `sum c^2 / n`) and a magnitude
    /// used to scale the minimum-gain tolerance.
    fn parent_score(&self, rows: &[usize]) -> (f64, f64) {
        let s = Sweep::new(self.target, rows, self.y);
        let n = rows.len() as f64;
        match self.target {
            Target::Regression => {
                let sumsq: f64 = rows.iter().map(|&r| self.y[r] * self.y[r]).sum();
                (s.right_sum * s.right_sum / n, sumsq)
            }
            Target::Classification { .. } => (s.right_sq / n, n),
        }
    }
}

/// Running sufficient statistics while rows move from the right child to
/// the left one. The split score is `sum_L^2/n_L + sum_R^2/n_R` (variance
/// reduction) or `sum_c c_L^2/n_L + sum_c c_R^2/n_R` (Gini reduction).
struct Sweep {
    target: Target,
    n_left: f64,
    n_right: f64,
    left_sum: f64,
    right_sum: f64,
    left_counts: Vec<f64>,
    right_counts: Vec<f64>,
    left_sq: f64,
    right_sq: f64,
}

impl Sweep {
    fn new(target: Target, rows: &[usize], y: &[f64]) -> Sweep {
        let mut s = Sweep {
            target,
            n_left: 0.0,
            n_right: rows.len() as f64,
            left_sum: 0.0,
            right_sum: 0.0,
            left_counts: Vec::new(),
            right_counts: Vec::new(),
            left_sq: 0.0,
            right_sq: 0.0,
        };
        match target {
            Target::Regression => s.right_sum = rows.iter().map(|&r| y[r]).sum(),
            Target::Classification { n_classes } => {
                s.left_counts = vec![0.0; n_classes];
                s.right_counts = vec![0.0; n_classes];
                for &r in rows {
                    s.right_counts[y[r] as usize] += 1.0;
                }
                s.right_sq = s.right_counts.iter().map(|c| c * c).sum();
            }
        }
        s
    }

    fn move_left(&mut self, y: f64) {
        self.n_left += 1.0;
        self.n_right -= 1.0;
        match self.target {
            Target::Regression => {
                self.left_sum += y;
                self.right_sum -= y;
            }
            Target::Classification { .. } => {
                let k = y as usize;
                self.left_sq += 2.0 * self.left_counts[k] + 1.0;
                self.right_sq -= 2.0 * self.right_counts[k] - 1.0;
                self.left_counts[k] += 1.0;
                self.right_counts[k] -= 1.0;
            }
        }
    }

    fn score(&self) -> f64 {
        match self.target {
            Target::Regression => {
                self.left_sum * self.left_sum / self.n_left
                    + self.right_sum * self.right_sum / self.n_right
            }
            Target::Classification { .. } => {
                self.left_sq / self.n_left + self.right_sq / self.n_right
            }
        }
    }
}

/// Stable in-place partition; returns the number of rows satisfying `pred`.
fn partition(rows: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let (mut yes, no): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| pred(r));
    let mid = yes.len();
    yes.extend(no);
    rows.copy_from_slice(&yes);
    mid
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    pub bootstrap: bool,
}

#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    target: Target,
}

impl RandomForest {
    /// Tree `t` draws its bootstrap sample and feature subsets from a seed
    /// derived from `(seed, t)`, so the forest does not depend on the order
    /// trees are built in.
    pub fn fit(x: &Array2<f64>, y: &[f64], target: Target, params: ForestParams, seed: u64) -> Self {
        let n = x.nrows();
        let trees = (0..params.n_trees.max(1))
            .map(|t| {
                let tree_seed = derive_seed(seed, t as u64);
                let rows: Vec<usize> = if params.bootstrap {
                    let mut rng = seeded(derive_seed(tree_seed, 0xB007));
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                DecisionTree::fit(x, y, &rows, target, params.tree, tree_seed)
            })
            .collect();
        RandomForest { trees, target }
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<f64> {
        let n = x.nrows();
        match self.target {
            Target::Regression => {
                let mut acc = vec![0.0; n];
                for t in &self.trees {
                    for (a, p) in acc.iter_mut().zip(t.predict(x)) {
                        *a += p;
                    }
                }
                acc.iter().map(|a| a / self.trees.len() as f64).collect()
            }
            Target::Classification { n_classes } => x
                .rows()
                .into_iter()
                .map(|r| {
                    let mut votes = vec![0.0; n_classes];
                    for t in &self.trees {
                        for (v, p) in votes.iter_mut().zip(t.leaf_for(r)) {
                            *v += p;
                        }
                    }
                    argmax(&votes) as f64
                })
                .collect(),
        }
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }
}
