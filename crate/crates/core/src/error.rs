use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("no generator set reaches resolution {min_resolution} for {n_factors} factors in 3^{n_basic} runs (searched {searched} candidate sets)")]
    InfeasibleDesign {
        n_factors: usize,
        n_basic: usize,
        min_resolution: usize,
        searched: u64,
    },

    #[error("design is not regular: generator columns are absent")]
    NotRegular,

    #[error("design strength {found} is below the required {required}")]
    InsufficientStrength { required: usize, found: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("aggregation mask selects nothing")]
    EmptyMask,

    #[error("mesh {from} m does not nest into mesh {to} m")]
    NonNestedGrids { from: f64, to: f64 },

    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },

    #[error("degenerate data: every column is constant")]
    DegenerateData,

    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),

    #[error("partitions cover different objects ({0} vs {1})")]
    ObjectMismatch(usize, usize),

    #[error("degenerate contingency table: {0}")]
    DegenerateTable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
