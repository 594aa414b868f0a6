use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid coordinate (lon={lon}, lat={lat})")]
    InvalidCoord { lon: f64, lat: f64 },

    #[error("grid resolution must be positive")]
    InvalidResolution,

    #[error("cell index {index} out of range for grid with {n_cells} cells")]
    CellOutOfRange { index: usize, n_cells: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient in parameter tensor {tensor}")]
    NonFiniteGradient { tensor: usize },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("bad magic: not a SINR model file")]
    BadMagic,

    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("checkpoint does not match the training configuration: {0}")]
    CheckpointMismatch(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("coordinate (lon={lon}, lat={lat}) lies outside the raster bounds")]
    OutsideRaster { lon: f64, lat: f64 },

    #[error("environmental input requested but no raster stack was provided")]
    MissingRasters,

    #[error("unknown species `{0}`")]
    UnknownSpecies(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("linear system is singular")]
    Singular,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
