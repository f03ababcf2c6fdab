use thiserror::Error;

/// Errors raised across the crate.
///
/// Variants are grouped into three classes (configuration, numeric, IO) which the
/// command-line front end maps onto exit codes 2, 3 and 4.
#[derive(Debug, Error)]
pub enum ArfiltError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("lineage mismatch: expected config hash {expected}, found {found}")]
    LineageMismatch { expected: String, found: String },
    #[error("unstable system: {0}")]
    Instability(String),
    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },
    #[error("no feasible gamma in the search grid")]
    NoFeasibleGamma,
    #[error("degenerate polynomial: maximum over the sample points is zero")]
    DegeneratePolynomial,
    #[error("insufficient history: burn-in {burn_in} is shorter than filter length {r}")]
    InsufficientHistory { burn_in: usize, r: usize },
    #[error("simulation overflow at step {step}: |y| = {value:e}")]
    Overflow { step: usize, value: f64 },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {message}")]
    Format { path: String, message: String },
}

impl ArfiltError {
    /// Process exit code for the error class: 2 = config, 3 = numeric, 4 = IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            ArfiltError::InvalidInput(_)
            | ArfiltError::Config(_)
            | ArfiltError::LineageMismatch { .. } => 2,
            ArfiltError::Instability(_)
            | ArfiltError::ConvergenceFailure { .. }
            | ArfiltError::NoFeasibleGamma
            | ArfiltError::DegeneratePolynomial
            | ArfiltError::InsufficientHistory { .. }
            | ArfiltError::Overflow { .. } => 3,
            ArfiltError::Io { .. } | ArfiltError::Format { .. } => 4,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        ArfiltError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, ArfiltError>;

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(ArfiltError::InvalidInput(format!(
            "{what} has a non-finite entry at index {i}"
        ))),
        None => Ok(()),
    }
}
