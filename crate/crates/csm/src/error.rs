//! Error type shared across the crate.

/// Errors raised by distributions, the sampler, the robustness lab and the
/// simulation harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument fell outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent dimensions between inputs.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A numerical routine failed (decomposition, wall-hit resolution, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Adaptive quadrature did not reach the requested tolerance.
    #[error("quadrature failure: {0}")]
    Quadrature(String),

    /// Invalid run configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The requested quantity is not defined for this chain or model kind.
    #[error("unsupported operation: {0}")]
    Unsupported(String),
}

impl Error {
    /// Attach an iteration index to a sampler error.
    pub fn at_sweep(self, sweep: usize) -> Error {
        Error::Numerical(format!("sweep {sweep}: {self}"))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
