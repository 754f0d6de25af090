use thiserror::Error;

/// Errors surfaced by the numeric and geometric layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Geometry or index-domain violation (empty box, vertex outside a
    /// domain, mismatched index sets, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A bad-conductance cluster whose clipped boundary is empty, so the
    /// boundary average that defines the hat operation does not exist.
    #[error("degenerate cluster: {0}")]
    DegenerateCluster(String),

    /// Direct factorization hit a non-positive pivot.
    #[error("factorization failure at unknown {index}: pivot {pivot:.3e}")]
    Factorization { index: usize, pivot: f64 },

    /// Iterative solve did not reach the requested tolerance.
    #[error("solver did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    SolverDiverged {
        residual: f64,
        iterations: usize,
        history: Vec<f64>,
    },

    /// Not enough Monte Carlo samples for the requested statistic.
    #[error("insufficient samples: got {got}, need at least {required}")]
    InsufficientSamples { got: usize, required: usize },

    /// Configuration rejected with a field-level message.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("snapshot format error: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
