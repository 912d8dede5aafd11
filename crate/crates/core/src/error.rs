use thiserror::Error;

/// Errors raised by the simulator library.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown library entry `{0}`")]
    UnknownOp(String),

    #[error("configuration error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("energy audit failed: residual {residual:.6e} J exceeds {limit:.6e} J ({breakdown})")]
    Audit {
        residual: f64,
        limit: f64,
        breakdown: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SimError {
    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        SimError::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
