use alloc::string::String;
use core::fmt;

/// Errors surfaced by the burst-processing core.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoreError {
    /// Image or tensor dimensions do not satisfy an operation's contract.
    Dimension(String),
    /// Wrong channel count for an operation (e.g. grayscale conversion of a
    /// non-3-channel frame).
    Channel(String),
    /// Malformed manifest or species-map text; `line` is 1-based.
    Parse { line: usize, message: String },
    /// A raw label has no entry in the species map.
    Mapping(String),
    /// Invalid configuration (split fractions, too few sites, empty splits).
    Config(String),
    /// A split has zero members of one class and cannot be balanced.
    Balance(String),
    /// An API contract was violated (missing features, missing role tags,
    /// parameter/shape mismatch).
    Contract(String),
    /// Non-finite values where finite ones are required.
    Numeric(String),
    /// A metric is undefined for the given input (e.g. single-class ROC AUC).
    UndefinedMetric(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Dimension(m) => write!(f, "dimension error: {m}"),
            CoreError::Channel(m) => write!(f, "channel error: {m}"),
            CoreError::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            CoreError::Mapping(m) => write!(f, "mapping error: {m}"),
            CoreError::Config(m) => write!(f, "configuration error: {m}"),
            CoreError::Balance(m) => write!(f, "balance error: {m}"),
            CoreError::Contract(m) => write!(f, "contract error: {m}"),
            CoreError::Numeric(m) => write!(f, "numeric error: {m}"),
            CoreError::UndefinedMetric(m) => write!(f, "undefined metric: {m}"),
        }
    }
}

impl core::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;
