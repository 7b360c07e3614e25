use std::fmt;

/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the simulator.
#[derive(Debug)]
pub enum Error {
    /// A matrix inverse or solve was refused because the operand is
    /// (numerically) singular: estimated condition number above the
    /// guard threshold, or a factorization failed outright.
    SingularMatrix {
        context: &'static str,
    },
    /// A matrix expected to be Hermitian was not, beyond tolerance.
    NotHermitian {
        max_asym: f64,
        scale: f64,
    },
    /// Scenario geometry is inconsistent (e.g. user disc not inside the
    /// transmitter circle).
    InvalidGeometry(String),
    /// Scenario parameters violate a model precondition.
    InvalidScenario(String),
    /// Estimated long-term statistics failed their spectral sanity check,
    /// which signals insufficient sampling or a model bug.
    StatsOutOfRange(String),
    /// The requested diagnostic is not defined for this scheme's
    /// information structure.
    UnsupportedScheme(String),
    /// An SINR denominator came out non-positive, which means the moment
    /// estimates feeding it are broken.
    DegenerateDenominator {
        user: usize,
        value: f64,
    },
    /// The dual power allocation produced a meaningfully negative power.
    NegativePower {
        user: usize,
        value: f64,
    },
    /// Division by a zero vector norm where the model assumes continuous
    /// fading (probability-zero event).
    DivisionByZero {
        context: &'static str,
    },
    /// Experiment configuration is invalid.
    Config(String),
    Io(std::io::Error),
    Json(serde_json::Error),
    /// Any of the above, annotated with where in an experiment it happened.
    Context {
        context: String,
        source: Box<Error>,
    },
}

impl Error {
    /// Process exit code for the CLI: 2 for configuration problems,
    /// 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io(_) | Error::Json(_) => 2,
            Error::Context { source, .. } => source.exit_code(),
            _ => 3,
        }
    }

    /// Wrap the error with a short location note, e.g. the realization and
    /// scheme an experiment was working on when it failed.
    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::SingularMatrix { context } => {
                write!(f, "singular or ill-conditioned matrix in {context}")
            }
            Error::NotHermitian { max_asym, scale } => write!(
                f,
                "matrix is not Hermitian: max |A - A^H| = {max_asym:.3e} at scale {scale:.3e}"
            ),
            Error::InvalidGeometry(msg) => write!(f, "invalid geometry: {msg}"),
            Error::InvalidScenario(msg) => write!(f, "invalid scenario: {msg}"),
            Error::StatsOutOfRange(msg) => write!(f, "long-term statistics out of range: {msg}"),
            Error::UnsupportedScheme(msg) => write!(f, "unsupported scheme: {msg}"),
            Error::DegenerateDenominator { user, value } => write!(
                f,
                "degenerate SINR denominator for user {user}: {value:.3e}"
            ),
            Error::NegativePower { user, value } => {
                write!(f, "negative allocated power for user {user}: {value:.3e}")
            }
            Error::DivisionByZero { context } => write!(f, "division by zero in {context}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
            Error::Context { context, source } => write!(f, "{context}: {source}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            Error::Context { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
