use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, out of range, or inconsistent.
    #[error("configuration error in `{key}`: {message}")]
    Config { key: String, message: String },

    /// Two tensors or vectors that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A NaN or infinity reached a numeric routine.
    #[error("non-finite value: {0}")]
    Numeric(String),

    /// Training failed on a particular client.
    #[error("client {client}: {source}")]
    Client {
        client: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn shape(message: impl Into<String>) -> Self {
        Error::Shape(message.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn for_client(self, client: usize) -> Self {
        Error::Client {
            client,
            source: Box::new(self),
        }
    }
}
