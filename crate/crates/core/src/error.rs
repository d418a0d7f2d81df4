use thiserror::Error;

/// Errors raised by the HEM library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },

    /// Component `k` received total responsibility below the degeneracy floor.
    #[error("degenerate component {k}: total responsibility {mass:e} below floor")]
    DegenerateComponent { k: usize, mass: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("finite-difference oracle produced a non-finite loss at coordinate {index}")]
    Oracle { index: usize },

    #[error("training error: {0}")]
    Training(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, expected: impl Into<String>, actual: impl Into<String>) -> Error {
    Error::Shape {
        op,
        expected: expected.into(),
        actual: actual.into(),
    }
}
