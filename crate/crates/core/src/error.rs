use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("projector bank uses v2 aggregation but has no scaler for category `{0}`")]
    MissingScaler(String),

    #[error("generation produced no delimiter-separated question")]
    EmptyGeneration,

    #[error("decode failed: {0}")]
    Decode(String),

    #[error("variant {variant}: expected {expected}, found {actual}")]
    VariantMismatch {
        variant: String,
        expected: String,
        actual: String,
    },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("stage {stage} requires `{field}` supervision but record {record} has none")]
    MissingSupervision {
        stage: String,
        field: String,
        record: String,
    },

    #[error("decoded token `{token}` is not one of {allowed:?}")]
    UnknownLabelToken { token: String, allowed: Vec<String> },

    #[error("no transcript rule matched and the pipeline is in strict mode")]
    NoLabelMatch,

    #[error("category slice `{0}` is empty")]
    EmptyCategorySlice(String),

    #[error("schema error in record {record}, field `{field}`: {message}")]
    Schema {
        record: String,
        field: String,
        message: String,
    },

    #[error("confounder triplet error for image {image}: {message}")]
    Triplet { image: String, message: String },

    #[error("unknown category `{0}`")]
    Category(String),

    #[error("length mismatch: {predictions} predictions vs {golds} golds")]
    LengthMismatch { predictions: usize, golds: usize },

    #[error("checkpoint missing: {0}")]
    CheckpointMissing(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("rule error: {0}")]
    Rule(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Attaches the identity of the pipeline stage that produced this error.
    pub fn in_stage(self, stage: impl ToString) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// Usage-class errors map to exit code 2, everything else to 1.
    pub fn is_usage(&self) -> bool {
        matches!(
            self.root(),
            Error::VariantMismatch { .. } | Error::Config(_) | Error::Category(_)
        )
    }
}
