use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] inpaint_attack::Error),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization failure: {0}")]
    Json(#[from] serde_json::Error),
}

/// Machine-readable failure description written as `error.json`.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        use inpaint_attack::Error as E;
        match self {
            CliError::Config(_) => "config",
            CliError::Input(_) => "input",
            CliError::Io(_) => "io",
            CliError::Json(_) => "serialization",
            CliError::Core(e) => match e {
                E::MissingFile(_) => "missing_file",
                E::MalformedHeader(_) | E::UnsupportedEncoding(_) => "audio_format",
                E::Io(_) => "io",
                E::InvalidParameter(_) => "invalid_parameter",
                E::LengthMismatch { .. } | E::SampleRateMismatch { .. } => "mismatch",
                E::TrackTooShort { .. } | E::SegmentOutOfBounds { .. } => "bounds",
                E::CapabilityRequired => "capability",
                E::UnknownLayer(_) => "unknown_layer",
                E::InvalidLabel { .. } => "invalid_label",
                E::EmptyHeatmap | E::EmptyMask | E::NoContext { .. } => "mask",
                E::InsufficientBudget { .. } => "budget",
                E::IncompatibleEmbeddings(_) | E::RankDeficient(_) | E::NoCorrectClips => "evaluation",
                E::Json(_) => "serialization",
            },
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord {
            kind: self.kind().into(),
            message: self.to_string(),
        }
    }
}
