//! Mutual-information feature ranking against a binary label.

use crate::features::FeatureMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const DEFAULT_BINS: usize = 10;
pub const DEFAULT_KEEP_FRACTION: f64 = 0.2;
pub const MIN_SAMPLES: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum SelectError {
    #[error("labels contain a single class")]
    DegenerateLabels,
    #[error("need at least {MIN_SAMPLES} samples with matching lengths, got {features} values and {labels} labels")]
    BadLength { features: usize, labels: usize },
    #[error("keep fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("feature matrix contains non-finite values")]
    NonFinite,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub keep_fraction: f64,
    pub n_bins: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            keep_fraction: DEFAULT_KEEP_FRACTION,
            n_bins: DEFAULT_BINS,
        }
    }
}

/// Equal-frequency bin index per sample. Samples are ranked by value (stable on index);
/// rank r goes to bin floor(r * B / n), and equal values share the bin of their first rank.
pub fn equal_frequency_bins(x: &[f64], n_bins: usize) -> Vec<usize> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut bins = vec![0; n];
    let mut prev_bin = 0;
    for (rank, &i) in order.iter().enumerate() {
        let b = if rank > 0 && x[i] == x[order[rank - 1]] { prev_bin } else { rank * n_bins / n };
        bins[i] = b;
        prev_bin = b;
    }
    bins
}

/// Plug-in mutual information (nats) between a discrete variable and a binary label.
pub fn mi_from_bins(bins: &[usize], labels: &[u8], n_bins: usize) -> f64 {
    let n = bins.len() as f64;
    let mut joint = vec![[0usize; 2]; n_bins];
    for (&b, &y) in bins.iter().zip(labels) {
        joint[b][(y != 0) as usize] += 1;
    }
    let py = [0, 1].map(|c| joint.iter().map(|j| j[c]).sum::<usize>() as f64 / n);
    let mut mi = 0.0;
    for j in &joint {
        let pb = (j[0] + j[1]) as f64 / n;
        let term = |c: usize| {
            if j[c] == 0 {
                return 0.0;
            }
            let pbc = j[c] as f64 / n;
            pbc * (pbc / (pb * py[c])).ln()
        };
        // per-bin sum first so a label flip gives a bit-identical total
        mi += term(0) + term(1);
    }
    mi.max(0.0)
}

fn check_labels(n: usize, labels: &[u8]) -> Result<(), SelectError> {
    if n != labels.len() || n < MIN_SAMPLES {
        return Err(SelectError::BadLength {
            features: n,
            labels: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&y| y != 0).count();
    if pos == 0 || pos == labels.len() {
        return Err(SelectError::DegenerateLabels);
    }
    Ok(())
}

/// Histogram MI estimate with `n_bins` equal-frequency bins.
pub fn mutual_information(feature: &[f64], labels: &[u8], n_bins: usize) -> Result<f64, SelectError> {
    check_labels(feature.len(), labels)?;
    Ok(mi_from_bins(&equal_frequency_bins(feature, n_bins), labels, n_bins))
}

/// Number of features kept for a given fraction.
pub fn keep_count(keep_fraction: f64, total: usize) -> usize {
    ((keep_fraction * total as f64).round() as usize).clamp(1, total.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionModel {
    /// Names of all columns in descending MI order.
    pub ranked_names: Vec<String>,
    pub mi_scores: Vec<f64>,
    pub keep_fraction: f64,
    pub n_bins: usize,
    /// Column indices of the training matrix, in ranked order.
    pub selected_indices: Vec<usize>,
}

impl SelectionModel {
    pub fn selected_names(&self) -> &[String] {
        &self.ranked_names[..self.selected_indices.len()]
    }

    /// Ranking table `name,mi_score,selected`.
    pub fn write_ranking_csv(&self, path: &Path) -> Result<(), SelectError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["name", "mi_score", "selected"])?;
        let k = self.selected_indices.len();
        for (i, (name, mi)) in self.ranked_names.iter().zip(&self.mi_scores).enumerate() {
            w.write_record([name.as_str(), &format!("{mi:?}"), if i < k { "true" } else { "false" }])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn fit_selection(
    x: &FeatureMatrix,
    y: &[u8],
    keep_fraction: f64,
    n_bins: usize,
) -> Result<SelectionModel, SelectError> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(SelectError::BadFraction(keep_fraction));
    }
    check_labels(x.n_rows(), y)?;
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(SelectError::NonFinite);
    }
    let scores: Vec<f64> = (0..x.names.len())
        .into_par_iter()
        .map(|c| {
            let col: Vec<f64> = x.data.column(c).to_vec();
            mi_from_bins(&equal_frequency_bins(&col, n_bins), y, n_bins)
        })
        .collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let k = keep_count(keep_fraction, order.len());
    Ok(SelectionModel {
        ranked_names: order.iter().map(|&i| x.names[i].clone()).collect(),
        mi_scores: order.iter().map(|&i| scores[i]).collect(),
        keep_fraction,
        n_bins,
        selected_indices: order[..k].to_vec(),
    })
}

/// Selected columns in ranked order, looked up by name.
pub fn apply_selection(model: &SelectionModel, x: &FeatureMatrix) -> Result<FeatureMatrix, SelectError> {
    x.select_columns(model.selected_names())
        .map_err(|e| SelectError::SchemaMismatch(e.to_string()))
}
