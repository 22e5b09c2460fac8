use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("vertex {0} has no neighbours")]
    IsolatedVertex(usize),

    #[error("vertex {0} has zero total incident face area")]
    DegenerateNormal(usize),

    #[error("mesh is not closed: edge ({0}, {1}) is on the boundary")]
    OpenMesh(usize, usize),

    #[error("mesh has no pair of faces sharing an edge")]
    NoSharedEdge,

    #[error("empty point set")]
    EmptyPointSet,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("negative loss weight {name} = {value}")]
    NegativeWeight { name: &'static str, value: f64 },

    #[error("non-finite value in {stage} (layer {layer})")]
    NonFinite { stage: &'static str, layer: usize },

    #[error("non-finite loss at epoch {epoch}, shape {shape}")]
    NonFiniteLoss { epoch: usize, shape: String },

    #[error("cluster {0} has zero total weight and zero smoothing; atlas update is undefined")]
    DegenerateCluster(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model is untrained")]
    Untrained,

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
