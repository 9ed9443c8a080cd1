use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across the pipeline, from shape errors in the
/// network core up to report I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid metric input: {0}")]
    MetricInput(String),

    #[error("training diverged at epoch {epoch}, batch {batch} ({context})")]
    TrainingDiverged {
        epoch: usize,
        batch: usize,
        context: String,
    },

    #[error(
        "infeasible forget request: tightest achievable fraction {achievable:.4} \
         lies outside [{lo:.4}, {hi:.4}]"
    )]
    InfeasibleForgetRequest { achievable: f64, lo: f64, hi: f64 },

    #[error("unknown speaker {0}")]
    UnknownSpeaker(u32),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid timing: {0}")]
    Timing(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl Error {
    /// True for failures that abort a single unlearning run rather than the
    /// whole experiment; the harness records these as failed rows.
    pub fn is_run_failure(&self) -> bool {
        matches!(
            self,
            Error::TrainingDiverged { .. } | Error::NonFinite { .. }
        )
    }
}
