use super::TabularError;
use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    /// Class-1 probability for classification trees, the fitted value for regression trees.
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub n_features: usize,
    pub root: TreeNode,
}

impl DecisionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if row[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn d(n: &TreeNode) -> usize {
            match n {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + d(left).max(d(right)),
            }
        }
        d(&self.root)
    }

    pub fn n_leaves(&self) -> usize {
        fn c(n: &TreeNode) -> usize {
            match n {
                TreeNode::Leaf { .. } => 1,
                TreeNode::Split { left, right, .. } => c(left) + c(right),
            }
        }
        c(&self.root)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Number of features examined per split; `None` uses all.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_leaf: 1,
            max_features: None,
        }
    }
}

pub(crate) enum Target<'a> {
    Class(&'a [u8]),
    /// Regression targets and a leaf-value rule applied to the rows of each leaf.
    Reg(&'a [f64], &'a dyn Fn(&[usize]) -> f64),
}

struct Builder<'a, R> {
    x: ArrayView2<'a, f64>,
    w: &'a [f64],
    target: Target<'a>,
    params: TreeParams,
    rng: &'a mut R,
}

/// Sufficient statistics for an impurity criterion over a set of rows.
#[derive(Clone, Copy, Default)]
struct Stats {
    w: f64,
    a: f64,
    b: f64,
}

impl Stats {
    fn add(&mut self, o: Stats) {
        self.w += o.w;
        self.a += o.a;
        self.b += o.b;
    }

    fn sub(self, o: Stats) -> Stats {
        Stats {
            w: self.w - o.w,
            a: self.a - o.a,
            b: self.b - o.b,
        }
    }
}

impl<R: Rng> Builder<'_, R> {
    /// Class: a = weight of class 1. Regression: a = sum w*t, b = sum w*t^2.
    fn row_stats(&self, i: usize) -> Stats {
        let w = self.w[i];
        match &self.target {
            Target::Class(y) => Stats {
                w,
                a: if y[i] != 0 { w } else { 0.0 },
                b: 0.0,
            },
            Target::Reg(t, _) => Stats {
                w,
                a: w * t[i],
                b: w * t[i] * t[i],
            },
        }
    }

    /// Weighted impurity (Gini times weight, or sum of squared errors).
    fn impurity(&self, s: Stats) -> f64 {
        if s.w <= 0.0 {
            return 0.0;
        }
        match self.target {
            Target::Class(_) => {
                let p = s.a / s.w;
                s.w * (1.0 - p * p - (1.0 - p) * (1.0 - p))
            }
            Target::Reg(..) => (s.b - s.a * s.a / s.w).max(0.0),
        }
    }

    fn is_pure(&self, rows: &[usize]) -> bool {
        match &self.target {
            Target::Class(y) => rows.iter().all(|&i| y[i] == y[rows[0]]),
            Target::Reg(t, _) => rows.iter().all(|&i| t[i] == t[rows[0]]),
        }
    }

    fn leaf(&self, rows: &[usize]) -> TreeNode {
        let value = match &self.target {
            Target::Class(_) => {
                let mut s = Stats::default();
                rows.iter().for_each(|&i| s.add(self.row_stats(i)));
                if s.w > 0.0 {
                    s.a / s.w
                } else {
                    0.5
                }
            }
            Target::Reg(_, rule) => rule(rows),
        };
        TreeNode::Leaf { value }
    }

    /// Best (feature, threshold) by lowest child impurity; ties keep the earliest candidate.
    fn best_split(&self, rows: &[usize], features: &[usize]) -> Option<(usize, f64)> {
        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = rows.to_vec();
        for &f in features {
            order.sort_by(|&a, &b| self.x[[a, f]].total_cmp(&self.x[[b, f]]).then(a.cmp(&b)));
            let mut total = Stats::default();
            order.iter().for_each(|&i| total.add(self.row_stats(i)));
            let mut left = Stats::default();
            for k in 0..order.len() - 1 {
                left.add(self.row_stats(order[k]));
                let (va, vb) = (self.x[[order[k], f]], self.x[[order[k + 1], f]]);
                if va == vb || k + 1 < min_leaf || order.len() - k - 1 < min_leaf {
                    continue;
                }
                let score = self.impurity(left) + self.impurity(total.sub(left));
                if best.is_none_or(|(s, _, _)| score < s - 1e-12 * s.abs().max(1e-300)) {
                    let mut thr = 0.5 * (va + vb);
                    if thr >= vb {
                        thr = va;
                    }
                    best = Some((score, f, thr));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn build(&mut self, rows: &[usize], depth: usize) -> TreeNode {
        let min_leaf = self.params.min_samples_leaf.max(1);
        if self.params.max_depth.is_some_and(|m| depth >= m) || rows.len() < 2 * min_leaf || self.is_pure(rows) {
            return self.leaf(rows);
        }
        let d = self.x.ncols();
        let k = self.params.max_features.unwrap_or(d).clamp(1, d);
        let split = if k < d {
            let mut drawn: Vec<usize> = rand::seq::index::sample(self.rng, d, k).into_vec();
            drawn.sort_unstable();
            self.best_split(rows, &drawn).or_else(|| {
                let rest: Vec<usize> = (0..d).filter(|f| !drawn.contains(f)).collect();
                self.best_split(rows, &rest)
            })
        } else {
            self.best_split(rows, &(0..d).collect::<Vec<_>>())
        };
        let Some((feature, threshold)) = split else {
            return self.leaf(rows);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[[i, feature]] <= threshold);
        TreeNode::Split {
            feature,
            threshold,
            left: Box::new(self.build(&l, depth + 1)),
            right: Box::new(self.build(&r, depth + 1)),
        }
    }
}

pub(crate) fn fit_tree_target<R: Rng>(
    x: ArrayView2<f64>,
    target: Target,
    weights: &[f64],
    params: TreeParams,
    rng: &mut R,
) -> Result<DecisionTree, TabularError> {
    let rows: Vec<usize> = (0..x.nrows()).filter(|&i| weights[i] > 0.0).collect();
    if rows.is_empty() || x.ncols() == 0 {
        return Err(TabularError::EmptyData);
    }
    let n_features = x.ncols();
    let mut b = Builder {
        x,
        w: weights,
        target,
        params,
        rng,
    };
    let root = b.build(&rows, 0);
    Ok(DecisionTree { n_features, root })
}

/// Gini classification tree on weighted rows; rows with zero weight are ignored.
pub fn fit_tree<R: Rng>(
    x: ArrayView2<f64>,
    y: &[u8],
    weights: &[f64],
    params: TreeParams,
    rng: &mut R,
) -> Result<DecisionTree, TabularError> {
    super::check_xy(x, y)?;
    if weights.len() != y.len() || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(TabularError::BadWeights);
    }
    fit_tree_target(x, Target::Class(y), weights, params, rng)
}
