use super::tree::{fit_tree_target, DecisionTree, Target, TreeParams, TreeNode};
use super::{check_xy, seeded, TabularError};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

/// Log-odds are clipped to this magnitude (probabilities within ~1e-12 of 0 or 1).
const MAX_LOGIT: f64 = 27.6;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for GbParams {
    fn default() -> Self {
        Self {
            n_rounds: 100,
            learning_rate: 0.1,
            max_depth: 3,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbModel {
    pub n_features: usize,
    pub init_score: f64,
    /// Leaf values already include the learning rate and any step shrinking.
    pub trees: Vec<DecisionTree>,
    /// Mean training log-loss before the first round and after each round.
    pub train_loss: Vec<f64>,
    /// True when the training labels had a single class and only the prior was fitted.
    pub single_class: bool,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Binomial deviance of one sample with label `y` at log-odds `f`, computed stably.
fn log_loss(y: u8, f: f64) -> f64 {
    let s = if y != 0 { -f } else { f };
    // ln(1 + e^s)
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

fn mean_loss(y: &[u8], f: &[f64]) -> f64 {
    y.iter().zip(f).map(|(&t, &s)| log_loss(t, s)).sum::<f64>() / y.len() as f64
}

impl GbModel {
    pub fn decision(&self, row: &[f64]) -> f64 {
        self.init_score + self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn predict_p1(&self, x: ArrayView2<f64>) -> Vec<f64> {
        x.rows().into_iter().map(|r| sigmoid(self.decision(&r.to_vec()))).collect()
    }
}

fn map_leaves(node: &mut TreeNode, f: &mut impl FnMut(f64) -> f64) {
    match node {
        TreeNode::Leaf { value } => *value = f(*value),
        TreeNode::Split { left, right, .. } => {
            map_leaves(left, f);
            map_leaves(right, f);
        }
    }
}

/// Gradient boosting of depth-limited regression trees on the log-loss gradient `y - p`.
/// Leaf values take a Newton step `sum(r) / sum(p(1-p))`, scaled by the learning rate and halved
/// while they would raise the loss of the rows in that leaf, so the training loss never increases.
pub fn fit_gb(x: ArrayView2<f64>, y: &[u8], params: &GbParams) -> Result<GbModel, TabularError> {
    check_xy(x, y)?;
    let n = y.len();
    let pos = y.iter().filter(|&&v| v != 0).count() as f64;
    let prior = pos / n as f64;
    let init_score = (prior / (1.0 - prior)).ln().clamp(-MAX_LOGIT, MAX_LOGIT);
    let mut f = vec![init_score; n];
    let mut model = GbModel {
        n_features: x.ncols(),
        init_score,
        trees: Vec::new(),
        train_loss: vec![mean_loss(y, &f)],
        single_class: pos == 0.0 || pos == n as f64,
    };
    if model.single_class {
        log::warn!("gradient boosting fitted on a single class; model is the constant prior");
        return Ok(model);
    }
    let weights = vec![1.0; n];
    // trees are fully determined by the data; the rng is only needed by the tree builder's signature
    let mut rng = seeded(0, 0);
    for _ in 0..params.n_rounds {
        let p: Vec<f64> = f.iter().map(|&v| sigmoid(v)).collect();
        let resid: Vec<f64> = y.iter().zip(&p).map(|(&t, &q)| t as f64 - q).collect();
        let lr = params.learning_rate;
        let f_now = f.clone();
        let step = |rows: &[usize]| -> f64 {
            let num: f64 = rows.iter().map(|&i| resid[i]).sum();
            let den: f64 = rows.iter().map(|&i| p[i] * (1.0 - p[i])).sum::<f64>().max(1e-12);
            let mut g = lr * num / den;
            let leaf_loss = |delta: f64| rows.iter().map(|&i| log_loss(y[i], f_now[i] + delta)).sum::<f64>();
            let base = leaf_loss(0.0);
            let mut halvings = 0;
            while leaf_loss(g) > base && halvings < MAX_HALVINGS {
                g *= 0.5;
                halvings += 1;
            }
            if leaf_loss(g) > base {
                0.0
            } else {
                g
            }
        };
        let tree_params = TreeParams {
            max_depth: Some(params.max_depth),
            min_samples_leaf: params.min_samples_leaf,
            max_features: None,
        };
        let mut tree = fit_tree_target(x, Target::Reg(&resid, &step), &weights, tree_params, &mut rng)?;
        // keep the summed score inside the clip range used for the prior
        map_leaves(&mut tree.root, &mut |v| v.clamp(-MAX_LOGIT, MAX_LOGIT));
        for (i, row) in x.rows().into_iter().enumerate() {
            f[i] += tree.predict_row(&row.to_vec());
        }
        model.train_loss.push(mean_loss(y, &f));
        model.trees.push(tree);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rounds_is_prior() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let p = GbParams {
            n_rounds: 0,
            ..Default::default()
        };
        let m = fit_gb(x.view(), &[0, 1, 1, 1], &p).unwrap();
        for v in m.predict_p1(x.view()) {
            assert!((v - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn xor_is_learned() {
        let x = array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        let y = [0, 1, 1, 0];
        let p = GbParams {
            n_rounds: 50,
            max_depth: 2,
            ..Default::default()
        };
        let m = fit_gb(x.view(), &y, &p).unwrap();
        let pred = m.predict_p1(x.view());
        for (q, &t) in pred.iter().zip(&y) {
            assert_eq!((*q > 0.5) as u8, t);
        }
    }

    #[test]
    fn training_loss_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Array2::from_shape_fn((150, 4), |_| rng.random::<f64>());
        // noisy labels so later rounds fight overfitting
        let y: Vec<u8> = x
            .rows()
            .into_iter()
            .map(|r| ((r[0] - r[1] + 0.4 * (rng.random::<f64>() - 0.5)) > 0.0) as u8)
            .collect();
        let m = fit_gb(x.view(), &y, &GbParams::default()).unwrap();
        assert_eq!(m.train_loss.len(), 101);
        for w in m.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "{w:?}");
        }
        assert!(m.train_loss[100] < 0.5 * m.train_loss[0]);
    }

    #[test]
    fn single_class_gives_constant_prior() {
        let x = array![[0.0], [1.0], [2.0]];
        let m = fit_gb(x.view(), &[1, 1, 1], &GbParams::default()).unwrap();
        assert!(m.single_class);
        assert!(m.trees.is_empty());
        assert!(m.predict_p1(x.view()).iter().all(|&p| p > 1.0 - 1e-9));
    }
}
