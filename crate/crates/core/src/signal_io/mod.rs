//! Recording container, WAV I/O, resampling and the length-normalizing
//! preprocessing steps applied before feature extraction.

mod manifest;
mod resample;
mod wav;

pub use manifest::{read_manifest, write_manifest, Manifest, ManifestRow, OutcomeLabel, MANIFEST_COLUMNS};
pub use resample::{resample, TAPS_PER_PHASE};
pub use wav::{load_wav, write_wav, WavEncoding};

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt WAV header in {path}: {reason}")]
    CorruptHeader { path: PathBuf, reason: String },
    #[error("recording contains no samples")]
    EmptyAudio,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("sample rate must be positive")]
    BadRate,
    #[error("manifest is missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: quality score `{value}` is not an integer in 1..=5")]
    BadScore { row: usize, value: String },
    #[error("row {row}: bad value `{value}` for column `{column}`")]
    BadLabel { row: usize, column: String, value: String },
    #[error("duplicate manifest path `{0}`")]
    DuplicatePath(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Mono PCG recording with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcgRecording {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub source_id: String,
    pub subject_id: Option<String>,
}

impl PcgRecording {
    /// Builds a recording, enforcing the non-empty / finite / positive-rate invariants.
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32, source_id: impl Into<String>) -> Result<Self, SignalError> {
        if sample_rate_hz == 0 {
            return Err(SignalError::BadRate);
        }
        if samples.is_empty() {
            return Err(SignalError::EmptyAudio);
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(SignalError::NonFinite(i));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            source_id: source_id.into(),
            subject_id: None,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    fn with_samples(&self, samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        Self {
            samples,
            sample_rate_hz,
            source_id: self.source_id.clone(),
            subject_id: self.subject_id.clone(),
        }
    }
}

/// Number of samples needed to cover `seconds` at `rate_hz`, rounded up.
pub(crate) fn samples_for(seconds: f64, rate_hz: u32) -> usize {
    let exact = seconds * rate_hz as f64;
    // absorb representation error so that e.g. 6.0 s at 1 kHz is 6000, not 6001
    (exact - 1e-9 * exact.abs().max(1.0)).ceil().max(0.0) as usize
}

/// Appends whole copies of the signal until it lasts at least `min_seconds`.
pub fn pad_by_replication(rec: &PcgRecording, min_seconds: f64) -> PcgRecording {
    let min_len = samples_for(min_seconds, rec.sample_rate_hz);
    let n = rec.len();
    if n == 0 || n >= min_len {
        return rec.clone();
    }
    let copies = min_len.div_ceil(n);
    let mut samples = Vec::with_capacity(copies * n);
    for _ in 0..copies {
        samples.extend_from_slice(&rec.samples);
    }
    rec.with_samples(samples, rec.sample_rate_hz)
}

/// Splits into consecutive non-overlapping chunks; a trailing partial chunk is dropped.
pub fn chunk(rec: &PcgRecording, chunk_seconds: f64) -> Vec<PcgRecording> {
    assert!(chunk_seconds > 0.0, "chunk length must be positive");
    let chunk_len = (chunk_seconds * rec.sample_rate_hz as f64).round() as usize;
    if chunk_len == 0 {
        return Vec::new();
    }
    rec.samples
        .chunks_exact(chunk_len)
        .enumerate()
        .map(|(i, part)| PcgRecording {
            samples: part.to_vec(),
            sample_rate_hz: rec.sample_rate_hz,
            source_id: format!("{}_{:04}", rec.source_id, i),
            subject_id: rec.subject_id.clone(),
        })
        .collect()
}
