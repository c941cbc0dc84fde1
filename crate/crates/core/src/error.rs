use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (dimensions, ranges).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value while evaluating {0}")]
    NumericDomain(String),

    #[error("inertia matrix is numerically singular (condition estimate {condition:.3e})")]
    SingularInertia { condition: f64 },

    #[error("integration failed after {steps} steps at t = {t:.6e}: {reason}")]
    IntegrationFailure { steps: usize, t: f64, reason: String },

    #[error("0 is not a regular value: minimum boundary gradient norm {sigma:.3e}")]
    NotRegularValue { sigma: f64 },

    #[error("projection onto the safe set did not converge after {iterations} iterations")]
    ProjectionNonConvergence { iterations: usize },

    /// The decrement constraint admits no input: the barrier is not an SD-CBF at this state.
    #[error("SD-CBF condition violated: minimum decrement residual over the input box is {min_residual:.6e}")]
    SdcbfViolation { min_residual: f64 },

    #[error("solver failure: {reason} (trace: {trace:?})")]
    Solver { reason: String, trace: Vec<(f64, f64)> },

    #[error("sampling failure: acceptance rate {rate:.3e} after {attempts} draws")]
    Sampling { rate: f64, attempts: usize },

    #[error("configuration error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::Config { line: None, message: message.into() }
    }

    pub(crate) fn config_at(line: usize, message: impl Into<String>) -> Self {
        Error::Config { line: Some(line), message: message.into() }
    }

    /// Process exit code for the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Contract(_) => 2,
            Error::Solver { .. } | Error::SdcbfViolation { .. } => 3,
            Error::IntegrationFailure { .. } | Error::NumericDomain(_) | Error::SingularInertia { .. } => 4,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
