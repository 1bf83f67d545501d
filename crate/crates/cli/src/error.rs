use pcgkit::byol::ByolError;
use pcgkit::config::ConfigError;
use pcgkit::metrics::MetricsError;
use pcgkit::quality::QualityError;
use pcgkit::screen::ScreenError;
use pcgkit::signal_io::SignalError;
use pcgkit::synth::SynthError;
use pcgkit::tabular::TabularError;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("row {row} ({path}) has no outcome label")]
    MissingOutcome { row: usize, path: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Tabular(#[from] TabularError),
    #[error(transparent)]
    Byol(#[from] ByolError),
    #[error(transparent)]
    Screen(#[from] ScreenError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Variants that only forward an inner error; the reported kind is the inner variant.
const WRAPPERS: &[&str] = &[
    "Config", "Signal", "Synth", "Quality", "Tabular", "Byol", "Screen", "Metrics", "Select", "Mel", "Checkpoint",
];

/// Innermost meaningful variant name, read off the `Debug` rendering.
pub fn error_kind(err: &CliError) -> String {
    let dbg = format!("{err:?}");
    let mut rest = dbg.as_str();
    loop {
        let end = rest.find(|c: char| !(c.is_alphanumeric() || c == '_')).unwrap_or(rest.len());
        let ident = &rest[..end];
        let after = &rest[end..];
        if WRAPPERS.contains(&ident) && after.starts_with('(') {
            let inner = &after[1..];
            if inner.starts_with(|c: char| c.is_ascii_uppercase()) {
                rest = inner;
                continue;
            }
        }
        return ident.to_string();
    }
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    error: &'a str,
    message: &'a str,
}

pub fn error_json(kind: &str, message: &str) -> String {
    serde_json::to_string(&ErrorJson { error: kind, message }).expect("error serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_descend_through_wrappers() {
        let e = CliError::Quality(QualityError::BadScore {
            row: 3,
            path: "a.wav".into(),
        });
        assert_eq!(error_kind(&e), "BadScore");
        let e = CliError::Screen(ScreenError::ModalityMismatch("x".into()));
        assert_eq!(error_kind(&e), "ModalityMismatch");
        let e = CliError::Usage("bad".into());
        assert_eq!(error_kind(&e), "Usage");
        let e = CliError::Quality(QualityError::Io(std::io::Error::other("x")));
        assert_eq!(error_kind(&e), "Io");
    }

    #[test]
    fn error_json_shape() {
        let v: serde_json::Value = serde_json::from_str(&error_json("BadScore", "row 1")).unwrap();
        assert_eq!(v["error"], "BadScore");
        assert_eq!(v["message"], "row 1");
    }
}
