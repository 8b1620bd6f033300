use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("unsupported mesh format for {0} (expected .obj or .ply)")]
    UnsupportedFormat(PathBuf),

    #[error("mesh is empty")]
    EmptyMesh,

    #[error("triangle {triangle} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange {
        triangle: usize,
        index: usize,
        count: usize,
    },

    #[error("mesh is not watertight; re-run with voxel remeshing (--remesh) to close it")]
    NotWatertight,

    #[error("mesh has zero extent along its longest axis")]
    ZeroExtent,

    #[error("voxel remesh found no closed region")]
    NoClosedRegion,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("linear system is singular: {0}")]
    Singular(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("checksum mismatch: file is truncated or corrupt")]
    Checksum,

    #[error("unsupported file version {found} (expected {expected})")]
    Version { expected: u16, found: u16 },

    #[error("no primitive hit the removed-area target after {draws} draws")]
    FractureBudget { draws: usize },

    #[error("ground-truth consistency drop rate {rate:.4} exceeds {limit}")]
    DropRate { rate: f64, limit: f64 },

    #[error("training diverged at epoch {epoch}: loss {loss} vs initial {initial}")]
    Diverged { epoch: usize, loss: f64, initial: f64 },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
