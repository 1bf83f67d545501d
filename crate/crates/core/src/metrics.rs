//! Binary classification metrics and the expert-screening cost model.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("{0} labels but {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("no samples")]
    Empty,
    #[error("AUROC needs both classes among the labels")]
    SingleClass,
    #[error("prediction ids do not match the truth manifest: {0}")]
    IdMismatch(String),
    #[error("bad cost configuration: {0}")]
    BadCostConfig(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn n(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Counts with label 1 as the positive class.
pub fn confusion(labels: &[u8], predictions: &[u8]) -> Result<ConfusionCounts, MetricsError> {
    if labels.len() != predictions.len() {
        return Err(MetricsError::LengthMismatch(labels.len(), predictions.len()));
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut c = ConfusionCounts::default();
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y != 0, p != 0) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BasicMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    /// Metrics whose denominator was zero and were set to 0.
    pub undefined: Vec<String>,
}

pub fn basic_metrics(c: &ConfusionCounts) -> BasicMetrics {
    let mut undefined = Vec::new();
    let mut ratio = |name: &str, num: u64, den: u64| {
        if den == 0 {
            undefined.push(name.to_string());
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let accuracy = ratio("accuracy", c.tp + c.tn, c.n());
    let precision = ratio("precision", c.tp, c.tp + c.fp);
    let recall = ratio("recall", c.tp, c.tp + c.fn_);
    let specificity = ratio("specificity", c.tn, c.tn + c.fp);
    let f1 = ratio("f1", 2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    BasicMetrics {
        accuracy,
        precision,
        recall,
        specificity,
        f1,
        undefined,
    }
}

/// Mann-Whitney AUROC: the fraction of (positive, negative) pairs ranked correctly, ties
/// counting one half. Counting is done in integers and divided once at the end.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(labels.len(), scores.len()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = labels.iter().filter(|&&y| y != 0).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    // twice the Mann-Whitney U statistic
    let mut u2: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group = &order[i..j];
        let pos = group.iter().filter(|&&k| labels[k] != 0).count() as u128;
        let neg = group.len() as u128 - pos;
        u2 += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

/// Expert-screening cost model. Defaults follow the published challenge definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub c_algorithm: f64,
    pub c_treatment: f64,
    pub c_error: f64,
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub a4: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            c_algorithm: 10.0,
            c_treatment: 10_000.0,
            c_error: 50_000.0,
            a0: 25.0,
            a1: 397.0,
            a2: -1718.0,
            a4: 11_296.0,
        }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let all = [self.c_algorithm, self.c_treatment, self.c_error, self.a0, self.a1, self.a2, self.a4];
        if all.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(MetricsError::BadCostConfig("coefficients must be finite".into()))
        }
    }

    /// Expert cost per patient as a function of the referral fraction.
    pub fn expert_rate(&self, x: f64) -> f64 {
        self.a0 + self.a1 * x + self.a2 * x * x + self.a4 * x.powi(4)
    }
}

/// `c_alg*t + expert(s/t)*t + c_treat*tp + c_err*fn` with `s = tp + fp` referrals and `t = n`.
pub fn screening_cost(c: &ConfusionCounts, cfg: &CostConfig) -> f64 {
    let t = c.n() as f64;
    if t == 0.0 {
        return 0.0;
    }
    let x = (c.tp + c.fp) as f64 / t;
    cfg.c_algorithm * t + cfg.expert_rate(x) * t + cfg.c_treatment * c.tp as f64 + cfg.c_error * c.fn_ as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    /// Fraction of this class's samples predicted as this class.
    pub accuracy: f64,
    /// F1 with this class taken as positive.
    pub f1: f64,
    pub support: u64,
}

/// Per-class accuracy and F1 for a two-class problem; keys are the class names.
pub fn per_class(c: &ConfusionCounts, names: [&str; 2]) -> BTreeMap<String, ClassMetrics> {
    let flipped = ConfusionCounts {
        tp: c.tn,
        tn: c.tp,
        fp: c.fn_,
        fn_: c.fp,
    };
    let mut out = BTreeMap::new();
    for (name, counts) in [(names[0], flipped), (names[1], *c)] {
        let m = basic_metrics(&counts);
        out.insert(
            name.to_string(),
            ClassMetrics {
                accuracy: m.recall,
                f1: m.f1,
                support: counts.tp + counts.fn_,
            },
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Name of the class counted as positive (label 1).
    pub positive_class: String,
    pub n: u64,
    pub confusion: ConfusionCounts,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub undefined_metrics: Vec<String>,
    pub auroc: Option<f64>,
    pub per_class: BTreeMap<String, ClassMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_per_patient: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_config: Option<CostConfig>,
}

/// Full report for scores/labels; `class_names` are `[negative, positive]`.
pub fn evaluate_scores(
    labels: &[u8],
    scores: &[f64],
    predictions: &[u8],
    class_names: [&str; 2],
    cost: Option<&CostConfig>,
) -> Result<EvaluationReport, MetricsError> {
    let c = confusion(labels, predictions)?;
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(labels.len(), scores.len()));
    }
    let m = basic_metrics(&c);
    let auc = match auroc(scores, labels) {
        Ok(v) => Some(v),
        Err(MetricsError::SingleClass) => None,
        Err(e) => return Err(e),
    };
    if let Some(cfg) = cost {
        cfg.validate()?;
    }
    let total_cost = cost.map(|cfg| screening_cost(&c, cfg));
    Ok(EvaluationReport {
        positive_class: class_names[1].to_string(),
        n: c.n(),
        confusion: c,
        accuracy: m.accuracy,
        precision: m.precision,
        recall: m.recall,
        specificity: m.specificity,
        f1: m.f1,
        undefined_metrics: m.undefined,
        auroc: auc,
        per_class: per_class(&c, class_names),
        cost: total_cost,
        cost_per_patient: total_cost.map(|v| v / c.n() as f64),
        cost_config: cost.cloned(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub score: f64,
    pub label: u8,
}

/// Prediction CSV with header `id,<score_name>,label`.
pub fn write_predictions(rows: &[PredictionRow], score_name: &str, path: &Path) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", score_name, "label"])?;
    for r in rows {
        w.write_record([r.id.as_str(), &format!("{:?}", r.score), &r.label.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `id,score,label` by position; the score column may carry any name.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>, MetricsError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| MetricsError::IdMismatch(format!("row {}: bad {what}", i + 1));
        let id = rec.get(0).ok_or_else(|| bad("id"))?.to_string();
        let score = rec.get(1).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad("score"))?;
        let label = rec.get(2).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad("label"))?;
        out.push(PredictionRow { id, score, label });
    }
    Ok(out)
}

/// Joins predictions to truth labels by id and evaluates. Unmatched ids on either side are
/// an error; matching is exact.
pub fn evaluate_run(
    predictions: &[PredictionRow],
    truth: &[(String, u8)],
    class_names: [&str; 2],
    cost: Option<&CostConfig>,
) -> Result<EvaluationReport, MetricsError> {
    let by_id: HashMap<&str, &PredictionRow> = predictions.iter().map(|p| (p.id.as_str(), p)).collect();
    let matched: Vec<(&PredictionRow, u8)> = truth
        .iter()
        .filter_map(|(id, y)| by_id.get(id.as_str()).map(|p| (*p, *y)))
        .collect();
    if matched.is_empty() {
        return Err(MetricsError::IdMismatch("no prediction id appears in the truth set".into()));
    }
    if matched.len() != truth.len() || matched.len() != predictions.len() {
        return Err(MetricsError::IdMismatch(format!(
            "{} predictions, {} truth rows, {} matched",
            predictions.len(),
            truth.len(),
            matched.len()
        )));
    }
    let labels: Vec<u8> = matched.iter().map(|(_, y)| *y).collect();
    let scores: Vec<f64> = matched.iter().map(|(p, _)| p.score).collect();
    let preds: Vec<u8> = matched.iter().map(|(p, _)| p.label).collect();
    evaluate_scores(&labels, &scores, &preds, class_names, cost)
}
