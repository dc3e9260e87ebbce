use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("models belong to different tasks ({expected} vs {got})")]
    TaskMismatch { expected: usize, got: usize },

    #[error("aggregation weights do not lie on the simplex (sum = {sum})")]
    NotSimplex { sum: f64 },

    #[error("dataset for task {task} is empty")]
    EmptyDataset { task: usize },

    #[error("gradient tape was recorded against an older parameter version")]
    StaleTape,

    #[error("unknown baseline `{0}`")]
    UnknownBaseline(String),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument { name, reason: reason.into() }
    }
}

/// One failed validation rule, addressed by a dotted field path such as
/// `scenario.num_users`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

/// Every validation failure found in a configuration, not just the first.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ConfigError {
    pub errors: Vec<FieldError>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration:")?;
        for e in &self.errors {
            write!(f, " {}: {};", e.field, e.message)?;
        }
        Ok(())
    }
}

/// Accumulates field errors while a config is being checked.
#[derive(Debug, Default)]
pub(crate) struct Validator {
    prefix: String,
    errors: Vec<FieldError>,
}

impl Validator {
    pub(crate) fn new(prefix: &str) -> Self {
        Self { prefix: prefix.to_string(), errors: Vec::new() }
    }

    pub(crate) fn check(&mut self, ok: bool, field: &str, message: impl Into<String>) {
        if !ok {
            let field = if self.prefix.is_empty() {
                field.to_string()
            } else {
                format!("{}.{}", self.prefix, field)
            };
            self.errors.push(FieldError { field, message: message.into() });
        }
    }

    pub(crate) fn positive(&mut self, value: f64, field: &str) {
        self.check(value.is_finite() && value > 0.0, field, format!("must be positive and finite, got {value}"));
    }

    pub(crate) fn extend(&mut self, other: ConfigError) {
        self.errors.extend(other.errors);
    }

    pub(crate) fn finish(self) -> Result<(), ConfigError> {
        if self.errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { errors: self.errors })
        }
    }
}
