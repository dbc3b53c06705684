use thiserror::Error;

/// Errors surfaced by the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Internal consistency failure, e.g. a non-conforming interface.
    #[error("internal consistency error: {0}")]
    Inconsistent(String),

    #[error("linear solver failed in {step}: {detail}")]
    SolverFailure { step: String, detail: String },

    #[error("time step {time_index} failed: {source}")]
    StepFailure {
        time_index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("problem size {dofs} DOFs exceeds the {limit}-DOF guard: {hint}")]
    SizeGuard {
        dofs: usize,
        limit: usize,
        hint: String,
    },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn at_step(self, time_index: usize) -> Self {
        Error::StepFailure {
            time_index,
            source: Box::new(self),
        }
    }
}
