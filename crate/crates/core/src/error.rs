use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape violations: wrong vector lengths, unknown feature names,
    /// malformed ads.
    #[error("structural error: {0}")]
    Structural(String),

    /// Semantic configuration problems, reported with the offending field path.
    #[error("configuration error at `{field}`: {message}")]
    Config { field: String, message: String },

    /// A multi-value feature with no values; callers must supply a sentinel
    /// value or drop the feature.
    #[error("multi-value feature `{0}` has no values")]
    EmptyFeature(String),

    #[error("serving error: {0}")]
    Serving(String),

    /// Malformed snapshot, table, catalog, event-log, or config file.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
