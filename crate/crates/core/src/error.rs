use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in parameter vector at index {index}")]
    NonFiniteParameter { index: usize },

    #[error("objective returned a non-finite value ({value}) at batch slot {slot}")]
    EvaluationFailed { slot: usize, value: f64 },

    #[error("gradient evaluation failed at {}: value {value}", match .column { Some(c) => format!("perturbation column {c}"), None => "the base point".to_string() })]
    GradientEvaluation { column: Option<usize>, value: f64 },

    #[error("perturbation matrix is rank deficient (rank {rank} < {dim})")]
    RankDeficient { rank: usize, dim: usize },

    #[error("matrix is singular")]
    Singular,

    #[error(
        "direction vectors are not mutually orthogonal (|cos| = {cosine:.3e} between {i} and {j})"
    )]
    NonOrthogonal { i: usize, j: usize, cosine: f64 },

    #[error("zero-length direction")]
    ZeroDirection,

    #[error("epidemic data: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
