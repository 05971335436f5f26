use thiserror::Error;

/// Crate-wide error type.
///
/// Variants correspond to the pipeline exit codes: data errors exit with 2,
/// fit failures with 3, numeric divergence with 4 and degenerate statistics
/// with 5. Invalid arguments are treated as data/configuration problems.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("data error{}: {message}", row_suffix(.row))]
    Data { row: Option<usize>, message: String },

    #[error("series too short: {rows} rows, need at least {min}")]
    TooShort { rows: usize, min: usize },

    #[error("fit failure: {0}")]
    FitFailure(String),

    #[error("numeric error{}: {message}", step_suffix(.step))]
    Numeric {
        step: Option<usize>,
        message: String,
    },

    #[error("degenerate statistics: {0}")]
    Degenerate(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn row_suffix(row: &Option<usize>) -> String {
    match row {
        Some(r) => format!(" at row {r}"),
        None => String::new(),
    }
}

fn step_suffix(step: &Option<usize>) -> String {
    match step {
        Some(s) => format!(" at step {s}"),
        None => String::new(),
    }
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn data(row: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Data {
            row,
            message: msg.into(),
        }
    }

    pub fn numeric(step: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Numeric {
            step,
            message: msg.into(),
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Data { .. } | Error::TooShort { .. } => 2,
            Error::FitFailure(_) => 3,
            Error::Numeric { .. } => 4,
            Error::Degenerate(_) => 5,
            Error::Io(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
