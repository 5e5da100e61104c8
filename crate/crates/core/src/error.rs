use std::io;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at byte offset {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("shape mismatch at layer {layer}: expected {expected}, got {actual}")]
    LayerShape {
        layer: usize,
        expected: String,
        actual: String,
    },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("backward called before forward at layer {0}")]
    BackwardBeforeForward(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("training labels contain a single class")]
    SingleClass,

    #[error("no embedding for contract {0}")]
    MissingEmbedding(String),

    #[error("illicit window from contract {0} in autoencoder training set")]
    IllicitInTraining(String),

    #[error("invalid record: {0}")]
    Data(String),

    #[error("duplicate contract address {0}")]
    DuplicateAddress(String),

    #[error("transport error on {endpoint}: {msg}")]
    Transport { endpoint: String, msg: String },

    #[error("api error on {endpoint}: {msg}")]
    Api { endpoint: String, msg: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
