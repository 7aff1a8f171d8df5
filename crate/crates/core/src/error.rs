use thiserror::Error;

/// Energy components `(H, T, V, C)` attached to divergence diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySnapshot {
    pub total: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub confinement: f64,
}

#[derive(Debug, Error)]
pub enum ChluError {
    #[error("non-finite state")]
    NonFiniteState,

    #[error("undefined massless gradient at origin")]
    MasslessOrigin,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("output dimension must be 1 (got {0})")]
    OutputDimension(usize),

    #[error("invalid layer dimensions: {0}")]
    InvalidLayers(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("integration diverged at step {step}: {energy:?}")]
    Diverged { step: usize, energy: Option<EnergySnapshot> },

    #[error("gradient diverged")]
    GradientDiverged,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("bad magic 0x{found:08x} at byte offset {offset}")]
    BadMagic { found: u32, offset: usize },

    #[error("unexpected end of data at byte offset {offset} (needed {needed} bytes)")]
    UnexpectedEof { offset: usize, needed: usize },

    #[error("invalid IDX header: {0}")]
    BadHeader(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("probe requires 2-dimensional latent (got {0})")]
    ProbeDimension(usize),

    #[error("unsupported checkpoint format_version {0}")]
    CheckpointVersion(i64),

    #[error("shape inconsistency: {0}")]
    ShapeInconsistency(String),

    #[error("unreadable checkpoint: {0}")]
    Unreadable(String),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl ChluError {
    /// True for failures of the numerical dynamics rather than of inputs.
    pub fn is_divergence(&self) -> bool {
        matches!(self, ChluError::Diverged { .. } | ChluError::GradientDiverged)
    }
}

pub type Result<T, E = ChluError> = std::result::Result<T, E>;
