use super::tree::{fit_tree, DecisionTree, TreeParams};
use super::{check_xy, seeded, TabularError};
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfParams {
    pub n_trees: usize,
    pub bootstrap: bool,
    /// Features per split; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
}

impl Default for RfParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            bootstrap: true,
            max_features: None,
            max_depth: None,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfModel {
    pub n_features: usize,
    pub trees: Vec<DecisionTree>,
}

impl RfModel {
    /// Mean leaf probability of class 1 over trees.
    pub fn predict_p1(&self, x: ArrayView2<f64>) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|row| {
                let row = row.to_vec();
                self.trees.iter().map(|t| t.predict_row(&row)).sum::<f64>() / self.trees.len() as f64
            })
            .collect()
    }
}

/// Row order used for fitting: lexicographic on (features, label), so the fit does not depend
/// on the order rows arrive in.
pub(crate) fn canonical_rows(x: ArrayView2<f64>, y: &[u8]) -> (Array2<f64>, Vec<u8>) {
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b).iter())
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y[a].cmp(&y[b]))
    });
    let xs = Array2::from_shape_fn((x.nrows(), x.ncols()), |(r, c)| x[[order[r], c]]);
    (xs, order.iter().map(|&i| y[i]).collect())
}

/// Random forest: bootstrap resamples, `sqrt(d)` candidate features per split, fully grown trees.
/// Tree `i` draws from its own stream keyed by `(seed, i)`.
pub fn fit_rf(x: ArrayView2<f64>, y: &[u8], params: &RfParams, seed: u64) -> Result<RfModel, TabularError> {
    check_xy(x, y)?;
    let (xs, ys) = canonical_rows(x, y);
    let n = ys.len();
    let d = xs.ncols();
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        max_features: Some(params.max_features.unwrap_or(((d as f64).sqrt() as usize).max(1))),
    };
    let trees = (0..params.n_trees.max(1))
        .into_par_iter()
        .map(|t| {
            let mut rng = seeded(seed, t as u64);
            let mut w = vec![0.0; n];
            if params.bootstrap {
                for _ in 0..n {
                    w[rng.random_range(0..n)] += 1.0;
                }
            } else {
                w.fill(1.0);
            }
            fit_tree(xs.view(), &ys, &w, tree_params, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RfModel { n_features: d, trees })
}
