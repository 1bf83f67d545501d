//! Binary classifiers with probability outputs: CART trees, random forest, gradient boosting,
//! an SMO-trained SVM with Platt calibration, and a soft-voting ensemble over them.

mod boost;
mod forest;
mod svm;
mod tree;

pub use boost::{fit_gb, GbModel, GbParams};
pub use forest::{fit_rf, RfModel, RfParams};
pub use svm::{fit_platt, fit_svm, platt_prob, Kernel, KernelKind, SvmModel, SvmParams};
pub use tree::{fit_tree, DecisionTree, TreeNode, TreeParams};

use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TabularError {
    #[error("no training rows or no features")]
    EmptyData,
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("sample weights must be finite and non-negative, one per row")]
    BadWeights,
    #[error("non-finite value in feature matrix")]
    NonFinite,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("ensemble needs at least two members, got {0}")]
    TooFewMembers(usize),
    #[error("unsupported model schema version {0}")]
    SchemaVersion(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_xy(x: ArrayView2<f64>, y: &[u8]) -> Result<(), TabularError> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(TabularError::EmptyData);
    }
    if x.nrows() != y.len() {
        return Err(TabularError::LengthMismatch {
            rows: x.nrows(),
            labels: y.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(TabularError::NonFinite);
    }
    Ok(())
}

/// Independent ChaCha stream `stream` of `seed`.
pub(crate) fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Hyperparameters of the three ensemble members.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub svm: SvmParams,
    pub rf: RfParams,
    pub gb: GbParams,
}

/// Fits SVM, random forest and gradient boosting and combines them by soft voting.
pub fn fit_default_ensemble(
    x: ArrayView2<f64>,
    y: &[u8],
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<EnsembleModel, TabularError> {
    let svm = fit_svm(x, y, &cfg.svm)?;
    let rf = fit_rf(x, y, &cfg.rf, seed)?;
    let gb = fit_gb(x, y, &cfg.gb)?;
    fit_voting(vec![Member::Svm(svm), Member::Rf(rf), Member::Gb(gb)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "lowercase")]
pub enum Member {
    Svm(SvmModel),
    Rf(RfModel),
    Gb(GbModel),
}

impl Member {
    pub fn n_features(&self) -> usize {
        match self {
            Member::Svm(m) => m.n_features,
            Member::Rf(m) => m.n_features,
            Member::Gb(m) => m.n_features,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Member::Svm(_) => "svm",
            Member::Rf(_) => "rf",
            Member::Gb(_) => "gb",
        }
    }

    /// Class-1 probability per row.
    pub fn predict_p1(&self, x: ArrayView2<f64>) -> Vec<f64> {
        match self {
            Member::Svm(m) => m.predict_p1(x),
            Member::Rf(m) => m.predict_p1(x),
            Member::Gb(m) => m.predict_p1(x),
        }
    }
}

/// Soft-voting ensemble: the class-1 probability is the mean over members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub members: Vec<Member>,
}

pub fn fit_voting(members: Vec<Member>) -> Result<EnsembleModel, TabularError> {
    if members.len() < 2 {
        return Err(TabularError::TooFewMembers(members.len()));
    }
    let d = members[0].n_features();
    if let Some(m) = members.iter().find(|m| m.n_features() != d) {
        return Err(TabularError::SchemaMismatch(format!(
            "{} member expects {} features, first member {d}",
            m.kind(),
            m.n_features()
        )));
    }
    Ok(EnsembleModel { members })
}

impl EnsembleModel {
    pub fn n_features(&self) -> usize {
        self.members[0].n_features()
    }

    /// `[p0, p1]` per row.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Vec<[f64; 2]>, TabularError> {
        if x.ncols() != self.n_features() {
            return Err(TabularError::SchemaMismatch(format!(
                "model expects {} features, got {}",
                self.n_features(),
                x.ncols()
            )));
        }
        let per_member: Vec<Vec<f64>> = self.members.iter().map(|m| m.predict_p1(x)).collect();
        Ok(soft_vote(&per_member))
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<u8>, TabularError> {
        Ok(self.predict_proba(x)?.iter().map(|p| argmax_class0_ties(*p)).collect())
    }
}

/// Mean of member class-1 probabilities, returned as `[p0, p1]`.
pub fn soft_vote(per_member: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = per_member.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| {
            let p1 = (per_member.iter().map(|m| m[i]).sum::<f64>() / per_member.len() as f64).clamp(0.0, 1.0);
            [1.0 - p1, p1]
        })
        .collect()
}

/// Class 1 only when strictly more probable; ties go to class 0.
pub fn argmax_class0_ties(p: [f64; 2]) -> u8 {
    (p[1] > p[0]) as u8
}

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    schema_version: u32,
    model: T,
}

pub fn save_model_json<T: Serialize>(model: &T, path: &Path) -> Result<(), TabularError> {
    let v = Versioned {
        schema_version: MODEL_SCHEMA_VERSION,
        model,
    };
    std::fs::write(path, serde_json::to_vec_pretty(&v)?)?;
    Ok(())
}

pub fn load_model_json<T: DeserializeOwned>(path: &Path) -> Result<T, TabularError> {
    let bytes = std::fs::read(path)?;
    let mut de = serde_json::Deserializer::from_slice(&bytes);
    // fully grown forest trees can nest deeper than serde_json's default limit
    de.disable_recursion_limit();
    let v: Versioned<T> = Versioned::deserialize(&mut de)?;
    if v.schema_version != MODEL_SCHEMA_VERSION {
        return Err(TabularError::SchemaVersion(v.schema_version));
    }
    Ok(v.model)
}
