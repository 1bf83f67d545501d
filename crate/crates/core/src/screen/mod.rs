//! Outcome classifier: demographic encoding, fusion and the classification head.

mod demographics;
mod head;

pub use demographics::{acbmi_category, bmi, encode_demographics, AcBmi, AcBmiCutoffs, AgeGroup, DemographicRecord, Sex, DEMO_DIM};
pub use head::{
    cross_entropy, fuse, head_inputs, label_from_p, train_finetune, train_head, Fusion, HeadConfig, HeadModel, HeadTrainLog, InputScaler, ScreenModel,
    TrainMode,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScreenError {
    #[error("bad acBMI cutoff table: {0}")]
    BadCutoffTable(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("no training examples")]
    Empty,
    #[error("modality mismatch: {0}")]
    ModalityMismatch(String),
    #[error("bad head configuration: {0}")]
    BadConfig(String),
    #[error("checkpoint load error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Byol(#[from] crate::byol::ByolError),
    #[error(transparent)]
    Mel(#[from] crate::mel::MelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<crate::nn::CheckpointError> for ScreenError {
    fn from(e: crate::nn::CheckpointError) -> Self {
        match e {
            crate::nn::CheckpointError::Load(m) => ScreenError::Checkpoint(m),
            crate::nn::CheckpointError::Io(e) => ScreenError::Io(e),
            crate::nn::CheckpointError::Json(e) => ScreenError::Json(e),
        }
    }
}
