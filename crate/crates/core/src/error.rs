//! Crate-wide error type.

/// Errors reported by the statistics, imaging, and pipeline modules.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A test statistic could not be formed (e.g. no comparable events).
    #[error("degenerate test: {0}")]
    DegenerateTest(String),

    /// A metric is undefined on the given data (e.g. no comparable pairs).
    #[error("degenerate metric: {0}")]
    DegenerateMetric(String),

    /// The partial likelihood does not exist because no event was observed.
    #[error("no events in data: {0}")]
    NoEvents(String),

    /// The design matrix cannot support a fit (e.g. a constant column).
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    /// A computation produced non-finite intermediate values.
    #[error("numeric overflow: {0}")]
    Overflow(String),

    /// Array or volume shapes do not agree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A masked region was empty where voxels were required.
    #[error("empty region: {0}")]
    EmptyRegion(String),

    /// Texture statistics are undefined (no valid in-mask voxel pairs).
    #[error("degenerate texture: {0}")]
    DegenerateTexture(String),

    /// Input data admits no meaningful result (e.g. zero variance).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// No primary-tumor voxels are present in the mask.
    #[error("no primary-tumor region present")]
    NoTumor,

    /// Column names or order do not match the expected schema.
    #[error("schema mismatch: {0}")]
    Schema(String),

    /// Malformed or contradictory ingested records (e.g. duplicate ids).
    #[error("ingestion error: {0}")]
    Ingestion(String),
}

pub type Result<T> = std::result::Result<T, Error>;
