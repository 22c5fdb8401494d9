use std::path::PathBuf;

use thiserror::Error;

/// Every failure surfaced by the library. Variants map onto distinct CLI exit codes
/// through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("insufficient calibration levels: {usable} usable, at least {required} required")]
    InsufficientLevels { usable: usize, required: usize },
    #[error("non-physical noise fit: gain {gain}")]
    NonPhysicalFit { gain: f64 },
    #[error("noise model does not cover the image: {0}")]
    ModelMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("wrong bit depth: expected {expected}, got {actual}")]
    WrongBitDepth { expected: u8, actual: u8 },
    #[error("encode failure: {0}")]
    EncodeFailure(String),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("feature recipe mismatch: {0}")]
    RecipeMismatch(String),
    #[error("degenerate spread: sigma_raw is zero")]
    DegenerateSpread,
    #[error("empty pairing")]
    EmptyPairing,
    #[error("too few replicates: {got} (need at least {need})")]
    TooFewReplicates { got: usize, need: usize },
    #[error("organ mask is empty")]
    EmptyOrgan,
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("fit diverged: {0}")]
    FitDiverged(String),
    #[error("profile has no peak")]
    NoPeak,
    #[error("degenerate profile: {0}")]
    DegenerateProfile(String),
    #[error("fitted curve has no positive root")]
    NoRoot,
    #[error("image is not square: {width}x{height}")]
    NonSquare { width: usize, height: usize },
    #[error("too few projection angles: {got} (need at least {need})")]
    TooFewAngles { got: usize, need: usize },
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure { path: path.into(), source }
    }

    /// Tags an error with the pipeline stage that raised it.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage: stage.to_string(), source: Box::new(e) },
        }
    }

    /// Innermost error, looking through stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code for this error class. 0 and 1 are reserved for success and
    /// unclassified failures (argument parsing, panics).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::IoFailure { .. } => 10,
            Error::UnsupportedFormat(_) => 11,
            Error::CorruptFile(_) => 12,
            Error::Json(_) => 13,
            Error::InvalidSpec(_) => 20,
            Error::DimMismatch(_) => 21,
            Error::WrongBitDepth { .. } => 22,
            Error::RecipeMismatch(_) => 23,
            Error::GeometryMismatch(_) => 24,
            Error::NonSquare { .. } => 25,
            Error::TooFewReplicates { .. } => 30,
            Error::TooFewAngles { .. } => 31,
            Error::InsufficientLevels { .. } => 32,
            Error::DegenerateLabels(_) => 33,
            Error::EmptyOrgan => 34,
            Error::EmptyPairing => 35,
            Error::ModelMismatch(_) => 40,
            Error::NonPhysicalFit { .. } => 41,
            Error::FitDiverged(_) => 42,
            Error::NoPeak => 43,
            Error::DegenerateProfile(_) => 44,
            Error::NoRoot => 45,
            Error::DegenerateSpread => 46,
            Error::EncodeFailure(_) => 50,
            Error::SchemaViolation(_) => 51,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
