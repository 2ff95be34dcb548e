use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("axis {axis} out of range for a {dim}-dimensional grid")]
    Axis { axis: usize, dim: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid metric: {0}")]
    Metric(String),
    #[error("flow blew up at t = {t:.6}: {reason}")]
    BlowUp { t: f64, reason: String },
    #[error("numerical failure in {module}: {reason}")]
    Numerical { module: &'static str, reason: String },
    #[error("precondition failed in {module}: {reason}")]
    Precondition { module: &'static str, reason: String },
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn numerical(module: &'static str, reason: impl Into<String>) -> Self {
        Error::Numerical { module, reason: reason.into() }
    }

    pub fn precondition(module: &'static str, reason: impl Into<String>) -> Self {
        Error::Precondition { module, reason: reason.into() }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::BlowUp { .. } | Error::Numerical { .. } => 3,
            Error::Precondition { .. } => 1,
            _ => 3,
        }
    }
}
