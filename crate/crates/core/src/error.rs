use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("NARMA recursion diverged at index {index}")]
    Diverged { index: usize },

    #[error("challenge generation failed after {attempts} attempts (seed {seed})")]
    ChallengeGeneration { seed: u64, attempts: u32 },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("code parameter error: {0}")]
    CodeParameter(String),

    #[error("uncorrectable word")]
    Uncorrectable,

    #[error("key rejected: {0}")]
    Rejected(String),

    #[error("sequence too short for {test}: need {min} bits, have {len}")]
    NotApplicable {
        test: &'static str,
        min: usize,
        len: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
