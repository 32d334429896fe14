//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Invalid user-supplied configuration (geometry spec, scenario file,
    /// conflicting boundary conditions, ...). Exit code 2 territory.
    #[error("configuration error: {0}")]
    Config(String),

    /// Geometry that cannot support the nonlocal operators (empty families,
    /// singular shape tensors, ...).
    #[error("geometry error: {0}")]
    Geometry(String),

    /// A material point reached an inadmissible state (J <= 0). The solver
    /// treats this as a line-search / step-cut trigger rather than a fatal
    /// error.
    #[error("inverted state at point {point}: J = {jacobian:.3e}")]
    InvertedState { point: usize, jacobian: f64 },

    /// Local constitutive (return map) iteration failed to converge at a
    /// point. Bubbled to the global solver for a step cut.
    #[error("return map did not converge at point {point} after {iterations} iterations (|f| = {residual:.3e})")]
    ReturnMap {
        point: usize,
        iterations: usize,
        residual: f64,
    },

    /// Linear solver breakdown (singular pivot, Krylov stagnation).
    #[error("linear solver failure: {0}")]
    LinearSolve(String),

    /// Newton or time marching gave up after the allowed cuts.
    #[error("solver abort: {0}")]
    SolverAbort(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn geometry(msg: impl Into<String>) -> Self {
        Error::Geometry(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures the time marcher may retry with a smaller step.
    pub fn is_recoverable(&self) -> bool {
        matches!(self, Error::InvertedState { .. } | Error::ReturnMap { .. })
    }
}
