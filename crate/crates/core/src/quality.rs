//! Recording-quality pipeline: score mapping, stratified splitting, feature-based ensemble
//! training, scoring and gating of manifests.

use crate::features::{extract_features, feature_names, FeatureError, FeatureMatrix};
use crate::metrics::{evaluate_scores, EvaluationReport, MetricsError};
use crate::select::{apply_selection, fit_selection, SelectError, SelectionConfig, SelectionModel};
use crate::signal_io::{load_wav, pad_by_replication, resample, Manifest, ManifestRow, PcgRecording, SignalError};
use crate::tabular::{fit_default_ensemble, ClassifierConfig, EnsembleModel, TabularError};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Sample rate the quality model operates at; inputs are resampled to it.
pub const OPERATING_RATE_HZ: u32 = 1000;
pub const CLASS_NAMES: [&str; 2] = ["unacceptable", "acceptable"];

#[derive(Debug, thiserror::Error)]
pub enum QualityError {
    #[error("quality score {0} outside 1..=5")]
    OutOfRange(u8),
    #[error("row {row} ({path}) has no quality score")]
    BadScore { row: usize, path: String },
    #[error("class `{class}` has {count} rows; at least 2 required")]
    DegenerateClass { class: &'static str, count: usize },
    #[error("{path}: {source}")]
    Load { path: String, source: SignalError },
    #[error("{path}: {source}")]
    Feature { path: String, source: FeatureError },
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Tabular(#[from] TabularError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Annotated,
    Pseudo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityLabel {
    /// 0 = unacceptable, 1 = acceptable.
    pub value: u8,
    pub source: LabelSource,
}

/// Scores 1-3 are unacceptable, 4-5 acceptable.
pub fn map_score(score: u8) -> Result<QualityLabel, QualityError> {
    match score {
        1..=3 => Ok(QualityLabel {
            value: 0,
            source: LabelSource::Annotated,
        }),
        4 | 5 => Ok(QualityLabel {
            value: 1,
            source: LabelSource::Annotated,
        }),
        s => Err(QualityError::OutOfRange(s)),
    }
}

/// Annotated binary labels of every row.
pub fn manifest_labels(manifest: &Manifest) -> Result<Vec<u8>, QualityError> {
    manifest
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let s = r.quality_score.ok_or_else(|| QualityError::BadScore {
                row: i + 1,
                path: r.path.clone(),
            })?;
            Ok(map_score(s)?.value)
        })
        .collect()
}

fn check_classes(y: &[u8]) -> Result<(), QualityError> {
    for (c, name) in CLASS_NAMES.iter().enumerate() {
        let count = y.iter().filter(|&&v| v as usize == c).count();
        if count < 2 {
            return Err(QualityError::DegenerateClass { class: name, count });
        }
    }
    Ok(())
}

/// Per-class shuffled split; each class contributes `round(test_fraction * size)` test rows.
/// Both outputs keep the input row order.
pub fn stratified_split(manifest: &Manifest, test_fraction: f64, seed: u64) -> Result<(Manifest, Manifest), QualityError> {
    let y = manifest_labels(manifest)?;
    check_classes(&y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; y.len()];
    for c in 0..2u8 {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        idx.shuffle(&mut rng);
        let k = (test_fraction * idx.len() as f64).round() as usize;
        for &i in &idx[..k.min(idx.len())] {
            is_test[i] = true;
        }
    }
    let pick = |test: bool| -> Vec<ManifestRow> {
        manifest.rows.iter().zip(&is_test).filter(|(_, &t)| t == test).map(|(r, _)| r.clone()).collect()
    };
    Ok((manifest.with_rows(pick(false)), manifest.with_rows(pick(true))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QualityConfig {
    pub test_fraction: f64,
    /// A recording is acceptable iff `p_acceptable > decision_threshold`.
    pub decision_threshold: f64,
    /// Recordings shorter than this are padded by replication before feature extraction.
    pub pad_seconds: f64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            decision_threshold: 0.5,
            pad_seconds: 6.0,
        }
    }
}

/// Resample to the operating rate and pad to the minimum feature duration.
pub fn preprocess(rec: &PcgRecording, pad_seconds: f64) -> PcgRecording {
    let r = resample(rec, OPERATING_RATE_HZ);
    pad_by_replication(&r, pad_seconds)
}

pub fn load_recordings(manifest: &Manifest) -> Result<Vec<PcgRecording>, QualityError> {
    manifest
        .rows
        .par_iter()
        .map(|r| {
            let mut rec = load_wav(&manifest.resolve(r)).map_err(|source| QualityError::Load {
                path: r.path.clone(),
                source,
            })?;
            rec.source_id = r.path.clone();
            Ok(rec)
        })
        .collect()
}

/// Preprocessed 72-feature matrix, one row per recording (ids = source ids).
pub fn feature_matrix(recs: &[PcgRecording], pad_seconds: f64) -> Result<FeatureMatrix, QualityError> {
    let rows: Vec<Vec<f64>> = recs
        .par_iter()
        .map(|r| {
            extract_features(&preprocess(r, pad_seconds))
                .map(|fv| fv.values)
                .map_err(|source| QualityError::Feature {
                    path: r.source_id.clone(),
                    source,
                })
        })
        .collect::<Result<_, _>>()?;
    let names = feature_names().to_vec();
    let data = Array2::from_shape_fn((rows.len(), names.len()), |(i, j)| rows[i][j]);
    let ids = recs.iter().map(|r| r.source_id.clone()).collect();
    FeatureMatrix::new(names, ids, data).map_err(|source| QualityError::Feature {
        path: String::new(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityModel {
    pub operating_rate_hz: u32,
    pub pad_seconds: f64,
    pub decision_threshold: f64,
    /// Full feature schema the selection was fitted on.
    pub feature_schema: Vec<String>,
    pub selection: SelectionModel,
    pub ensemble: EnsembleModel,
}

impl QualityModel {
    /// `p_acceptable` for each row of a full-schema feature matrix.
    pub fn score_matrix(&self, x: &FeatureMatrix) -> Result<Vec<f64>, QualityError> {
        let xs = apply_selection(&self.selection, x)?;
        Ok(self.ensemble.predict_proba(xs.data.view())?.iter().map(|p| p[1]).collect())
    }

    pub fn label(&self, p_acceptable: f64) -> u8 {
        (p_acceptable > self.decision_threshold) as u8
    }

    /// Probability of acceptable quality and the resulting label; any input rate is accepted.
    pub fn score_quality(&self, rec: &PcgRecording) -> Result<(f64, QualityLabel), QualityError> {
        let x = feature_matrix(std::slice::from_ref(rec), self.pad_seconds)?;
        let p = self.score_matrix(&x)?[0];
        Ok((
            p,
            QualityLabel {
                value: self.label(p),
                source: LabelSource::Pseudo,
            },
        ))
    }
}

/// Selection on the full feature matrix followed by the SVM/RF/GB voting ensemble.
pub fn fit_quality_model(
    x: &FeatureMatrix,
    y: &[u8],
    selection: &SelectionConfig,
    classifiers: &ClassifierConfig,
    cfg: &QualityConfig,
    seed: u64,
) -> Result<QualityModel, QualityError> {
    check_classes(y)?;
    let sel = fit_selection(x, y, selection.keep_fraction, selection.n_bins)?;
    let xs = apply_selection(&sel, x)?;
    let ensemble = fit_default_ensemble(xs.data.view(), y, classifiers, seed)?;
    Ok(QualityModel {
        operating_rate_hz: OPERATING_RATE_HZ,
        pad_seconds: cfg.pad_seconds,
        decision_threshold: cfg.decision_threshold,
        feature_schema: x.names.clone(),
        selection: sel,
        ensemble,
    })
}

/// Loads, preprocesses and featurizes an annotated manifest, then fits the quality model.
pub fn train_quality(
    train: &Manifest,
    selection: &SelectionConfig,
    classifiers: &ClassifierConfig,
    cfg: &QualityConfig,
    seed: u64,
) -> Result<QualityModel, QualityError> {
    let y = manifest_labels(train)?;
    check_classes(&y)?;
    let x = feature_matrix(&load_recordings(train)?, cfg.pad_seconds)?;
    fit_quality_model(&x, &y, selection, classifiers, cfg, seed)
}

/// Held-out report with `acceptable` as the positive class.
pub fn evaluate_quality(model: &QualityModel, x: &FeatureMatrix, y: &[u8]) -> Result<EvaluationReport, QualityError> {
    let p = model.score_matrix(x)?;
    let pred: Vec<u8> = p.iter().map(|&v| model.label(v)).collect();
    Ok(evaluate_scores(y, &p, &pred, CLASS_NAMES, None)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub path: String,
    pub p_acceptable: f64,
    pub label: QualityLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GateCounts {
    pub total: usize,
    pub kept: usize,
    pub removed: usize,
    pub removed_fraction: f64,
}

impl GateCounts {
    fn add(&mut self, kept: bool) {
        self.total += 1;
        if kept {
            self.kept += 1;
        } else {
            self.removed += 1;
        }
        self.removed_fraction = self.removed as f64 / self.total as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub total: usize,
    pub kept: usize,
    pub removed: usize,
    pub removed_fraction: f64,
    /// Counts per outcome label (`unknown` when the row has none).
    pub per_outcome_counts: BTreeMap<String, GateCounts>,
}

#[derive(Debug, Clone)]
pub struct GateResult {
    pub kept: Manifest,
    pub removed: Manifest,
    pub report: GateReport,
    pub pseudo_labels: Vec<PseudoLabel>,
}

/// Partitions rows by predicted quality given already computed `p_acceptable` values.
pub fn gate_with_scores(model: &QualityModel, manifest: &Manifest, p: &[f64]) -> GateResult {
    let mut overall = GateCounts::default();
    let mut per: BTreeMap<String, GateCounts> = BTreeMap::new();
    let (mut kept, mut removed, mut pseudo) = (Vec::new(), Vec::new(), Vec::new());
    for (row, &pa) in manifest.rows.iter().zip(p) {
        let label = model.label(pa);
        let keep = label == 1;
        overall.add(keep);
        let key = row.outcome.map_or("unknown", |o| o.as_str()).to_string();
        per.entry(key).or_default().add(keep);
        pseudo.push(PseudoLabel {
            path: row.path.clone(),
            p_acceptable: pa,
            label: QualityLabel {
                value: label,
                source: LabelSource::Pseudo,
            },
        });
        if keep {
            kept.push(row.clone());
        } else {
            removed.push(row.clone());
        }
    }
    GateResult {
        kept: manifest.with_rows(kept),
        removed: manifest.with_rows(removed),
        report: GateReport {
            total: overall.total,
            kept: overall.kept,
            removed: overall.removed,
            removed_fraction: overall.removed_fraction,
            per_outcome_counts: per,
        },
        pseudo_labels: pseudo,
    }
}

/// Scores every recording of the manifest and splits it into kept and removed rows.
pub fn gate_manifest(model: &QualityModel, manifest: &Manifest) -> Result<GateResult, QualityError> {
    let x = feature_matrix(&load_recordings(manifest)?, model.pad_seconds)?;
    let p = model.score_matrix(&x)?;
    Ok(gate_with_scores(model, manifest, &p))
}

/// Pseudo-label CSV `path,p_acceptable,label,source`. Pseudo labels are kept out of manifests
/// so they can never flow back into quality-model training.
pub fn write_pseudo_labels(labels: &[PseudoLabel], path: &Path) -> Result<(), QualityError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["path", "p_acceptable", "label", "source"])?;
    for l in labels {
        w.write_record([
            l.path.as_str(),
            &format!("{:?}", l.p_acceptable),
            CLASS_NAMES[l.label.value as usize],
            "pseudo",
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn score_mapping() {
        assert_eq!(map_score(3).unwrap().value, 0);
        assert_eq!(map_score(4).unwrap().value, 1);
        assert!(matches!(map_score(0), Err(QualityError::OutOfRange(0))));
        assert!(matches!(map_score(6), Err(QualityError::OutOfRange(6))));
        let labels: Vec<u8> = (1..=5).map(|s| map_score(s).unwrap().value).collect();
        assert!(labels.windows(2).all(|w| w[0] <= w[1]));
    }

    fn manifest(scores: &[u8]) -> Manifest {
        let rows = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let mut r = ManifestRow::new(format!("r{i}.wav"));
                r.quality_score = Some(s);
                r
            })
            .collect();
        Manifest::new(rows, ".").unwrap()
    }

    #[test]
    fn split_counts_per_class() {
        let scores: Vec<u8> = (0..100).map(|i| if i < 60 { 5 } else { 2 }).collect();
        let m = manifest(&scores);
        let (train, test) = stratified_split(&m, 0.2, 7).unwrap();
        let yt = manifest_labels(&test).unwrap();
        assert_eq!(yt.iter().filter(|&&v| v == 1).count(), 12);
        assert_eq!(yt.iter().filter(|&&v| v == 0).count(), 8);
        assert_eq!(train.len() + test.len(), 100);
        let (_, again) = stratified_split(&m, 0.2, 7).unwrap();
        assert_eq!(again, test);
        assert!(stratified_split(&manifest(&[5, 5, 5, 1]), 0.2, 0).is_err());
        let mut unlabeled = manifest(&[5, 1]);
        unlabeled.rows[0].quality_score = None;
        assert!(matches!(manifest_labels(&unlabeled), Err(QualityError::BadScore { row: 1, .. })));
    }

    proptest! {
        #[test]
        fn split_is_partition_and_proportional(scores in proptest::collection::vec(1u8..=5, 10..200), seed in 0u64..50) {
            let m = manifest(&scores);
            let y = manifest_labels(&m).unwrap();
            let pos = y.iter().filter(|&&v| v == 1).count();
            prop_assume!(pos >= 2 && y.len() - pos >= 2);
            let (train, test) = stratified_split(&m, 0.2, seed).unwrap();
            let mut all: Vec<String> = train.rows.iter().chain(&test.rows).map(|r| r.path.clone()).collect();
            all.sort();
            let mut orig: Vec<String> = m.rows.iter().map(|r| r.path.clone()).collect();
            orig.sort();
            prop_assert_eq!(all, orig);
            let tp = manifest_labels(&test).unwrap().iter().filter(|&&v| v == 1).count() as f64;
            let expected = pos as f64 / y.len() as f64 * test.len() as f64;
            prop_assert!((tp - expected).abs() <= 1.0);
        }
    }

    #[test]
    fn gate_partitions_and_counts() {
        use crate::select::SelectionModel;
        use crate::tabular::{fit_voting, GbModel, Member};
        let constant = |p: f64| GbModel {
            n_features: 1,
            init_score: (p / (1.0 - p)).ln(),
            trees: vec![],
            train_loss: vec![],
            single_class: false,
        };
        let model = QualityModel {
            operating_rate_hz: 1000,
            pad_seconds: 6.0,
            decision_threshold: 0.5,
            feature_schema: vec!["a".into()],
            selection: SelectionModel {
                ranked_names: vec!["a".into()],
                mi_scores: vec![0.0],
                keep_fraction: 1.0,
                n_bins: 10,
                selected_indices: vec![0],
            },
            ensemble: fit_voting(vec![Member::Gb(constant(0.5)), Member::Gb(constant(0.5))]).unwrap(),
        };
        let m = manifest(&[5, 5, 1, 1, 3]);
        let r = gate_with_scores(&model, &m, &[0.9, 0.5, 0.2, 0.51, 0.0]);
        assert_eq!(r.report.total, 5);
        assert_eq!(r.report.kept + r.report.removed, 5);
        assert_eq!(r.kept.len(), 2);
        // p exactly at the threshold is removed
        assert!(r.removed.rows.iter().any(|row| row.path == "r1.wav"));
        assert_eq!(r.report.per_outcome_counts["unknown"].total, 5);
        assert!(r.pseudo_labels.iter().all(|l| l.label.source == LabelSource::Pseudo));
        assert_eq!(model.label(0.5), 0);
    }
}
