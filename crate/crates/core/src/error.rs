use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("configuration error: {0}")]
    Config(ConfigErrors),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn invalid_state(msg: impl Into<String>) -> Self {
        Error::InvalidState(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config(ConfigErrors(vec![ConfigIssue::Domain {
            field: field.into(),
            message: message.into(),
        }]))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the experiment description rather than the run.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

/// One problem found while validating an experiment configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigIssue {
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    UnknownKey {
        path: String,
    },
    Type {
        field: String,
        expected: String,
    },
    Domain {
        field: String,
        message: String,
    },
    Missing {
        field: String,
    },
}

impl ConfigIssue {
    /// Dotted path of the offending field, when the issue is tied to one.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigIssue::Syntax { .. } => None,
            ConfigIssue::UnknownKey { path } => Some(path),
            ConfigIssue::Type { field, .. }
            | ConfigIssue::Domain { field, .. }
            | ConfigIssue::Missing { field } => Some(field),
        }
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigIssue::Syntax {
                line,
                column,
                message,
            } => write!(f, "syntax error at line {line}, column {column}: {message}"),
            ConfigIssue::UnknownKey { path } => write!(f, "unknown key `{path}`"),
            ConfigIssue::Type { field, expected } => {
                write!(f, "`{field}` has the wrong type, expected {expected}")
            }
            ConfigIssue::Domain { field, message } => write!(f, "`{field}` {message}"),
            ConfigIssue::Missing { field } => write!(f, "missing required key `{field}`"),
        }
    }
}

/// Every issue found in a configuration, in document order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl ConfigErrors {
    pub fn issues(&self) -> &[ConfigIssue] {
        &self.0
    }

    pub fn mentions(&self, field: &str) -> bool {
        self.0.iter().any(|i| i.field() == Some(field))
    }
}

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}
