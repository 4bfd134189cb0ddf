use thiserror::Error;

/// Errors produced by model construction, evaluation and simulation.
#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the domain it must belong to.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numeric procedure failed (quadrature, factorization, non-finite value).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A linear system that the theory guarantees solvable turned out singular.
    #[error("singular system in {context} (condition estimate {cond:.3e})")]
    Singular { context: String, cond: f64 },

    /// Invalid run configuration (CLI or JSON spec).
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
