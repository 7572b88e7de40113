use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("box {index} has zero area")]
    ZeroAreaBox { index: usize },

    #[error("detection {id} has no logit for its own class {class}")]
    MissingLogits { id: u64, class: usize },

    #[error("scene map '{image_id}' contains no labels")]
    EmptySceneMap { image_id: String },

    #[error("rule has no applicable evidence (n = 0)")]
    NoEvidence,

    #[error("total evidence probability is zero")]
    DegenerateEvidence,

    #[error("schema error at {context}: {message}")]
    Schema { context: String, message: String },

    #[error("weight {value} out of [0, 1] at {context}")]
    WeightOutOfRange { context: String, value: f64 },

    #[error("unknown class '{name}' ({context})")]
    UnknownClass { name: String, context: String },

    #[error("conflicting relations between '{subject}' and '{object}'")]
    ConflictingRelation { subject: String, object: String },

    #[error("size relations form a cycle through '{class}'")]
    CyclicRelation { class: String },

    #[error("negative shape count at {context}")]
    NegativeCount { context: String },

    #[error("invalid counts: {0}")]
    InvalidCounts(String),

    #[error("provenance mismatch: {0}")]
    ProvenanceMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("network error: {0}")]
    Network(String),

    #[error("authentication rejected: {0}")]
    Auth(String),

    #[error("knowledge document rejected: {0}")]
    Validation(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure category used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Schema,
    Config,
    Client,
    Other,
}

impl Error {
    pub fn schema(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            context: context.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Schema { .. }
            | Error::WeightOutOfRange { .. }
            | Error::UnknownClass { .. }
            | Error::ConflictingRelation { .. }
            | Error::CyclicRelation { .. }
            | Error::NegativeCount { .. }
            | Error::ZeroAreaBox { .. }
            | Error::MissingLogits { .. }
            | Error::EmptySceneMap { .. }
            | Error::ProvenanceMismatch(_) => ErrorKind::Schema,
            Error::Config(_) | Error::InvalidCounts(_) => ErrorKind::Config,
            Error::Network(_) | Error::Auth(_) | Error::Validation(_) => ErrorKind::Client,
            Error::NoEvidence | Error::DegenerateEvidence | Error::Io { .. } => ErrorKind::Other,
        }
    }

    /// Exit status for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Schema => 2,
            ErrorKind::Config => 3,
            ErrorKind::Client => 4,
            ErrorKind::Other => 1,
        }
    }
}
