use std::fmt;

/// Errors produced while parsing tables, building filters or running lookups.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{}", ParseDisplay(*line, message))]
    Parse {
        line: Option<usize>,
        message: String,
    },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error(
        "k \u{2265} {required} required (tree height {height} + n_bits {n_bits}), got k = {got}"
    )]
    HashCountTooSmall {
        required: u32,
        got: u32,
        height: u32,
        n_bits: u32,
    },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("bad snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        Error::Parse {
            line: None,
            message: msg.into(),
        }
    }

    /// Attach a 1-based line number to a parse error.
    pub fn at_line(self, line: usize) -> Self {
        match self {
            Error::Parse { message, .. } => Error::Parse {
                line: Some(line),
                message,
            },
            other => other,
        }
    }

    /// True for errors caused by a violated sizing constraint rather than bad input.
    pub fn is_constraint(&self) -> bool {
        matches!(self, Error::Capacity(_) | Error::HashCountTooSmall { .. })
    }
}

struct ParseDisplay<'a>(Option<usize>, &'a str);

impl fmt::Display for ParseDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(line) => write!(f, "parse error at line {}: {}", line, self.1),
            None => write!(f, "parse error: {}", self.1),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
