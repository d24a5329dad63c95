use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// Each variant maps onto one CLI exit code (see [`Error::exit_code`]) and
/// one FFI status code, so the three surfaces report failures consistently.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: {kind}: {message}")]
    Parse {
        line: usize,
        kind: ParseErrorKind,
        message: String,
    },

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("factorization breakdown at pivot {index} (|pivot| = {pivot:e})")]
    Breakdown { index: usize, pivot: f64 },

    #[error("singular Jacobian (condition estimate {condition:e})")]
    SingularJacobian { condition: f64 },

    #[error("eigensolver did not converge: {converged}/{wanted} eigenpairs after {iterations} Lanczos steps")]
    EigenNonConvergence {
        iterations: usize,
        converged: usize,
        wanted: usize,
    },

    #[error("Newton iteration limit reached: {iterations} iterations, residual {residual:e}")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("Newton converged to the trivial solution (core mass {core_mass:e})")]
    ConvergedToZero { core_mass: f64 },

    #[error("continuation lost the branch at schedule index {index}: {reason}")]
    BranchLost { index: usize, reason: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable tag used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } | Error::Graph(_) | Error::UnknownVertex(_) => "parse",
            Error::Precondition(_) | Error::DimensionMismatch { .. } => "validation",
            Error::Breakdown { .. }
            | Error::SingularJacobian { .. }
            | Error::EigenNonConvergence { .. }
            | Error::MaxIterations { .. }
            | Error::ConvergedToZero { .. }
            | Error::BranchLost { .. } => "solver",
            Error::Invariant(_) => "invariant",
            Error::Io(_) => "io",
        }
    }

    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "parse" => 3,
            "validation" => 2,
            "solver" => 4,
            "invariant" => 5,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

/// Distinguishes the ways a graph description can be rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    DuplicateName,
    UnknownVertex,
    InvalidLength,
    Disconnected,
}

impl std::fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ParseErrorKind::Syntax => "syntax error",
            ParseErrorKind::DuplicateName => "duplicate name",
            ParseErrorKind::UnknownVertex => "unknown vertex",
            ParseErrorKind::InvalidLength => "invalid length",
            ParseErrorKind::Disconnected => "disconnected graph",
        };
        f.write_str(s)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
