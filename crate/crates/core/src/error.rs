use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A primitive received operands whose shapes it cannot combine.
    #[error("{op}: incompatible shapes {shapes:?}")]
    Shape {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },

    #[error("target label {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("checkpoint parse error at byte {offset}: {message}")]
    Checkpoint { offset: usize, message: String },

    /// `unique` was executed over a set that is not a singleton.
    #[error("ambiguous referent: unique over {count} objects")]
    AmbiguousReferent { count: usize },

    /// The scene cannot support the requested question; draw another scene.
    #[error("scene unusable for this question subtype")]
    Retry,

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("infeasible dataset request: {0}")]
    Infeasible(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
