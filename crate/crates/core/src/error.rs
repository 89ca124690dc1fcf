use thiserror::Error;

/// Failure modes shared by every pipeline in the crate.
///
/// The variants are grouped so that a front end can map them onto process
/// exit codes without inspecting messages: input problems, violated
/// preconditions, and numerical non-convergence.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular configuration: {0}")]
    Singular(String),

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("chart coordinates {norm:.3e} outside validity radius {radius:.3e}")]
    ChartDomain { norm: f64, radius: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("spiral regime: {0}")]
    SpiralRegime(String),

    #[error("search failed after {iterations} iterations (best residual {residual:.3e})")]
    SearchFailure { iterations: usize, residual: f64 },

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("trajectory diverged: {0}")]
    Divergence(String),

    #[error("non-regular crossing: {0}")]
    NonRegularCrossing(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("not converged: {0}")]
    NotConverged(String),
}

impl Error {
    /// True for failures caused by numerics rather than by the caller.
    pub fn is_convergence_failure(&self) -> bool {
        matches!(
            self,
            Error::SearchFailure { .. }
                | Error::Integration(_)
                | Error::Divergence(_)
                | Error::NotConverged(_)
                | Error::NonRegularCrossing(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
