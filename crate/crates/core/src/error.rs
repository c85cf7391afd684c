use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("inertia matrix singular or ill-conditioned (condition number {cond:.3e})")]
    SingularInertia { cond: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("LMI problem infeasible: {0}")]
    Infeasible(String),

    #[error("LMI solver did not converge: {0}")]
    NoConvergence(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("result file does not match the run: {0}")]
    Mismatch(String),

    #[error("reference infeasible: {0}")]
    Reference(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}
