use thiserror::Error;

/// Errors raised by model construction, solving, stepping and experiments.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Model parameters outside the regime where the model is well posed.
    #[error("parameter regime violation: {0}")]
    ParameterRegime(String),

    /// Lotka-Volterra interaction matrix with λ_max(A+Aᵀ) ≥ 0.
    #[error("stability condition violated: λ_max(A+Aᵀ)={lambda_max:.6} must be < 0")]
    StabilityCondition { lambda_max: f64 },

    /// Evaluation of a coefficient outside the model's state domain.
    #[error("domain violation: state {state:?} is outside the model domain ({domain})")]
    DomainViolation { state: Vec<f64>, domain: &'static str },

    /// A step size or θ that breaks an admissibility inequality.
    #[error("inadmissible configuration: {0}")]
    Admissibility(String),

    /// Malformed or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// An iterative solve ran out of iterations.
    #[error("solver did not converge after {iterations} iterations (best residual {best_residual:.3e}, target {tolerance:.3e})")]
    SolverFailure {
        iterations: usize,
        best_residual: f64,
        tolerance: f64,
    },

    /// A solver failure with the step of the path it happened on.
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    /// A post-hoc residual audit found a step whose root missed the tolerance.
    #[error("residual audit failed at step {step}: residual {residual:.3e} > tolerance {tolerance:.3e}")]
    ResidualAudit { step: usize, residual: f64, tolerance: f64 },

    /// An implicit path blew up during a study that requires bounded paths.
    #[error("path {path} blew up at step {step} (|x|={norm:.3e})")]
    BlowUp { path: usize, step: usize, norm: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Error {
        match self {
            e @ Error::Step { .. } => e,
            e => Error::Step {
                step,
                source: Box::new(e),
            },
        }
    }
}
