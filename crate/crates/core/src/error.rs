use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("solver diverged: {0}")]
    Divergence(String),
    /// `row` is the 1-based line number (header is line 1), or 0 for whole-file problems.
    #[error("parse error{}: {message}", at_line(*row))]
    Parse { row: usize, message: String },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn at_line(row: usize) -> String {
    if row == 0 {
        String::new()
    } else {
        format!(" at line {row}")
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// True for errors caused by bad user input rather than the environment.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}
