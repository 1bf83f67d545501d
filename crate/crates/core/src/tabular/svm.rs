use super::{check_xy, TabularError};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Kernel::Linear => a.iter().zip(b).map(|(p, q)| p * q).sum(),
            Kernel::Rbf { gamma } => (-gamma * a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmParams {
    pub kernel: KernelKind,
    pub c: f64,
    /// RBF width; `None` means `1 / (d * var(X))` on the standardized training matrix.
    pub gamma: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            kernel: KernelKind::Rbf,
            c: 1.0,
            gamma: None,
            tol: 1e-3,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub n_features: usize,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub kernel: Kernel,
    pub c: f64,
    /// Standardized support vectors.
    pub support_vectors: Vec<Vec<f64>>,
    /// Training-row index of each support vector.
    pub support_indices: Vec<usize>,
    /// Dual variables `alpha_i` in `(0, C]`.
    pub alpha: Vec<f64>,
    /// Labels of the support vectors in {-1, +1}.
    pub sv_sign: Vec<f64>,
    pub bias: f64,
    pub platt_a: f64,
    pub platt_b: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SvmModel {
    pub fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    /// `sum_i alpha_i y_i K(sv_i, x) + b` for a raw (unstandardized) row.
    pub fn decision(&self, row: &[f64]) -> f64 {
        let z = self.standardize(row);
        self.support_vectors
            .iter()
            .zip(self.alpha.iter().zip(&self.sv_sign))
            .map(|(sv, (a, s))| a * s * self.kernel.eval(sv, &z))
            .sum::<f64>()
            + self.bias
    }

    pub fn decision_batch(&self, x: ArrayView2<f64>) -> Vec<f64> {
        x.rows().into_iter().map(|r| self.decision(&r.to_vec())).collect()
    }

    pub fn predict_p1(&self, x: ArrayView2<f64>) -> Vec<f64> {
        self.decision_batch(x).into_iter().map(|f| platt_prob(f, self.platt_a, self.platt_b)).collect()
    }
}

/// `1 / (1 + exp(A f + B))` evaluated without overflow.
pub fn platt_prob(f: f64, a: f64, b: f64) -> f64 {
    let z = a * f + b;
    if z >= 0.0 {
        (-z).exp() / (1.0 + (-z).exp())
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Platt sigmoid fit by Newton's method with backtracking on smoothed targets.
pub fn fit_platt(dec: &[f64], y: &[u8]) -> (f64, f64) {
    let prior1 = y.iter().filter(|&&v| v != 0).count() as f64;
    let prior0 = y.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = y.iter().map(|&v| if v != 0 { hi } else { lo }).collect();
    let objective = |a: f64, b: f64| -> f64 {
        dec.iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = f * a + b;
                if z >= 0.0 {
                    ti * z + (-z).exp().ln_1p()
                } else {
                    (ti - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };
    let (mut a, mut b) = (0.0, ((prior0 + 1.0) / (prior1 + 1.0)).ln());
    let mut fval = objective(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for (&f, &ti) in dec.iter().zip(&t) {
            let p = platt_prob(f, a, b);
            let q = 1.0 - p;
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step *= 0.5;
        }
        if step < 1e-10 {
            break;
        }
    }
    (a, b)
}

/// Column means and population standard deviations (1 for constant columns).
pub(crate) fn column_scaling(x: ArrayView2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let mean: Vec<f64> = x.columns().into_iter().map(|c| c.sum() / n).collect();
    let scale = x
        .columns()
        .into_iter()
        .zip(&mean)
        .map(|(c, m)| {
            let s = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

/// Soft-margin SVM solved by SMO with second-order working-set selection, followed by Platt
/// calibration on the training decision values.
pub fn fit_svm(x: ArrayView2<f64>, y: &[u8], params: &SvmParams) -> Result<SvmModel, TabularError> {
    check_xy(x, y)?;
    if !y.iter().any(|&v| v != 0) || y.iter().all(|&v| v != 0) {
        return Err(TabularError::SingleClass);
    }
    let n = y.len();
    let d = x.ncols();
    let (mean, scale) = column_scaling(x);
    let z: Vec<Vec<f64>> = x
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect())
        .collect();
    let kernel = match params.kernel {
        KernelKind::Linear => Kernel::Linear,
        KernelKind::Rbf => {
            let gamma = params.gamma.unwrap_or_else(|| {
                let all: Vec<f64> = z.iter().flatten().copied().collect();
                let var = crate::dsp::variance(&all);
                if var > 0.0 {
                    1.0 / (d as f64 * var)
                } else {
                    1.0
                }
            });
            Kernel::Rbf { gamma }
        }
    };
    let c = params.c;
    let ys: Vec<f64> = y.iter().map(|&v| if v != 0 { 1.0 } else { -1.0 }).collect();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(&z[i], &z[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    let q = |i: usize, j: usize| ys[i] * ys[j] * k[i * n + j];

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, s: f64| (s > 0.0 && a < c) || (s < 0.0 && a > 0.0);
    let in_low = |a: f64, s: f64| (s < 0.0 && a < c) || (s > 0.0 && a > 0.0);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], ys[t]) && -ys[t] * grad[t] >= gmax {
                gmax = -ys[t] * grad[t];
                i_sel = t;
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j_sel = usize::MAX;
        let mut best_obj = f64::INFINITY;
        for t in 0..n {
            if !in_low(alpha[t], ys[t]) {
                continue;
            }
            let v = -ys[t] * grad[t];
            gmin = gmin.min(v);
            if i_sel != usize::MAX && v < gmax {
                let b = gmax - v;
                let mut a = k[i_sel * n + i_sel] + k[t * n + t] - 2.0 * k[i_sel * n + t];
                if a <= 0.0 {
                    a = 1e-12;
                }
                let obj = -b * b / a;
                if obj <= best_obj {
                    best_obj = obj;
                    j_sel = t;
                }
            }
        }
        if i_sel == usize::MAX || j_sel == usize::MAX || gmax - gmin < params.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let (i, j) = (i_sel, j_sel);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if ys[i] != ys[j] {
            let mut quad = q(i, i) + q(j, j) + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = 1e-12;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = q(i, i) + q(j, j) - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = 1e-12;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }
    if !converged {
        log::warn!("SMO stopped after {iterations} iterations without reaching tolerance {}", params.tol);
    }

    // bias from free vectors, or the midpoint of the feasible interval
    let (mut ub, mut lb, mut sum_free, mut n_free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n {
        let yg = ys[t] * grad[t];
        if alpha[t] >= c {
            if ys[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if ys[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { 0.5 * (ub + lb) };

    let support_indices: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    let mut model = SvmModel {
        n_features: d,
        mean,
        scale,
        kernel,
        c,
        support_vectors: support_indices.iter().map(|&t| z[t].clone()).collect(),
        alpha: support_indices.iter().map(|&t| alpha[t]).collect(),
        sv_sign: support_indices.iter().map(|&t| ys[t]).collect(),
        support_indices,
        bias: -rho,
        platt_a: 0.0,
        platt_b: 0.0,
        iterations,
        converged,
    };
    let dec = model.decision_batch(x);
    let (a, b) = fit_platt(&dec, y);
    model.platt_a = a;
    model.platt_b = b;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, concatenate, Array2, Axis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symmetric_pair_linear() {
        let x = array![[-1.0], [1.0]];
        let p = SvmParams {
            kernel: KernelKind::Linear,
            ..Default::default()
        };
        let m = fit_svm(x.view(), &[0, 1], &p).unwrap();
        assert!(m.decision(&[0.0]).abs() < 1e-9);
        assert!((m.decision(&[1.0]) - 1.0).abs() < 1e-9);
        assert!((m.decision(&[-1.0]) + 1.0).abs() < 1e-9);
        assert!(m.alpha.iter().all(|a| (a - 0.5).abs() < 1e-9));
    }

    #[test]
    fn xor_rbf() {
        let x = array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        let y = [0, 1, 1, 0];
        let p = SvmParams {
            gamma: Some(1.0),
            ..Default::default()
        };
        let m = fit_svm(x.view(), &y, &p).unwrap();
        for (row, &t) in x.rows().into_iter().zip(&y) {
            assert_eq!((m.decision(&row.to_vec()) > 0.0) as u8, t);
        }
    }

    fn separable(n: usize, seed: u64) -> (Array2<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let x = Array2::from_shape_fn((n, 2), |(r, c)| {
            let shift = if y[r] == 1 { 3.0 } else { -3.0 };
            rng.random::<f64>() + if c == 0 { shift } else { 0.0 }
        });
        (x, y)
    }

    #[test]
    fn duplicated_points_leave_decision_unchanged() {
        let (x, y) = separable(30, 2);
        let p = SvmParams {
            kernel: KernelKind::Linear,
            c: 10.0,
            tol: 1e-10,
            ..Default::default()
        };
        let a = fit_svm(x.view(), &y, &p).unwrap();
        assert!(a.alpha.iter().all(|&v| v < p.c));
        let x2 = concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let y2: Vec<u8> = y.iter().chain(&y).copied().collect();
        let b = fit_svm(x2.view(), &y2, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let q = [rng.random::<f64>() * 8.0 - 4.0, rng.random::<f64>()];
            assert!((a.decision(&q) - b.decision(&q)).abs() < 1e-6);
        }
    }

    #[test]
    fn dual_feasibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((80, 3), |_| rng.random::<f64>());
        let y: Vec<u8> = x.rows().into_iter().map(|r| (r[0] * r[0] + r[1] > 0.6) as u8).collect();
        let m = fit_svm(x.view(), &y, &SvmParams::default()).unwrap();
        assert!(m.converged);
        assert!(!m.alpha.is_empty());
        assert!(m.alpha.iter().all(|&a| a > 0.0 && a <= m.c));
        let s: f64 = m.alpha.iter().zip(&m.sv_sign).map(|(a, s)| a * s).sum();
        assert!(s.abs() <= 1e-6);
    }

    #[test]
    fn platt_orders_probabilities_with_decision() {
        let (x, y) = separable(40, 5);
        let m = fit_svm(x.view(), &y, &SvmParams::default()).unwrap();
        assert!(m.platt_a < 0.0);
        let p = m.predict_p1(x.view());
        for (q, &t) in p.iter().zip(&y) {
            assert_eq!((*q > 0.5) as u8, t);
        }
    }

    #[test]
    fn platt_stable_for_extreme_values() {
        assert!((platt_prob(1e6, -1.0, 0.0) - 1.0).abs() < 1e-12);
        assert!(platt_prob(-1e6, -1.0, 0.0) < 1e-12);
    }
}
