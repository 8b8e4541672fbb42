use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension {dim} exceeds the configured cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("space mismatch: {0}")]
    SpaceMismatch(String),

    #[error("factor index {index} out of range for {factors} factors")]
    FactorIndex { index: usize, factors: usize },

    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),

    #[error("multiplicity mismatch: {0} vs {1}")]
    Multiplicity(usize, usize),

    #[error("channel {channel} out of range for multiplicity {n}")]
    Channel { channel: usize, n: usize },

    #[error("SLH triple fails validation: {0}")]
    InvalidTriple(String),

    #[error("operator is not Hermitian: {0}")]
    NotHermitian(&'static str),

    #[error("invalid parameter {name}: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("record kind mismatch: {0}")]
    RecordKind(String),

    #[error("convolution kernel has {kernel} samples but the record needs {needed}")]
    KernelTooShort { kernel: usize, needed: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("state is not normalised (norm {0})")]
    NotNormalized(f64),

    #[error("jump probability {probability} at step {step} exceeds 0.1; reduce dt")]
    JumpProbability { step: usize, probability: f64 },

    #[error("adaptedness violation at step {step}: coefficients act on bin {bin}")]
    Adaptedness { step: usize, bin: usize },

    #[error("degenerate parameters: {0}")]
    Degenerate(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}: {reason}")]
    Scenario { path: String, reason: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Failures raised while integrating or factorising, as opposed to rejected input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::JumpProbability { .. } | Error::Numeric(_) | Error::Io(_)
        )
    }

    /// Attach a scenario field path to an input error.
    pub fn at(self, path: impl Into<String>) -> Error {
        if self.is_numeric() {
            return self;
        }
        match self {
            Error::Scenario { .. } => self,
            other => Error::Scenario { path: path.into(), reason: other.to_string() },
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
