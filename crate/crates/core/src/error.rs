use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("report `{0}` is already stored")]
    DuplicateReport(String),

    #[error("invalid frame token {0:?}")]
    InvalidFrame(String),

    #[error("report `{0}` has no frames")]
    EmptyFrames(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid generator config: {0}")]
    InvalidGenerator(String),

    #[error("unknown similarity model `{0}`")]
    UnknownModel(String),

    #[error("unknown kernel `{0}`")]
    UnknownKernel(String),

    #[error("invalid k-NN configuration: {0}")]
    InvalidKnn(String),

    #[error("cannot extract features from an empty group")]
    EmptyGroup,

    #[error("no trainable query: every query opened a new group")]
    NoTrainableQuery,

    #[error("report `{0}` has no group label")]
    Unlabeled(String),

    #[error("model schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("model was trained with similarity `{trained}` but `{requested}` was requested")]
    ModelMismatch { trained: String, requested: String },

    #[error("malformed model file: {0}")]
    Model(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
