use std::path::PathBuf;

/// Errors produced anywhere in the reconstruction pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(String),

    #[error("surface point list is empty")]
    EmptySurface,

    #[error("normal-offset sampling requested but the source has no per-point normals")]
    MissingNormals,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("trace does not match network: {0}")]
    TraceMismatch(String),

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("objective returned a non-finite value at the starting point")]
    NonFiniteObjective,

    #[error("training diverged at epoch {epoch}: loss {loss:e} exceeds 1e6 x initial {initial:e}")]
    DivergenceDetected { epoch: usize, loss: f64, initial: f64 },

    #[error("mesh has no triangles")]
    EmptyMesh,

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
