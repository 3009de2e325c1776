use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric blow-up in {component} at t = {t} s")]
    NumericBlowup { component: &'static str, t: f64 },

    #[error("synthesis failed: {0}")]
    Synthesis(String),

    #[error("controller fault: {0}")]
    ControllerFault(String),

    #[error("genome codec: {0}")]
    Codec(String),

    #[error("region calibration: {0}")]
    Calibration(String),

    #[error("region: {0}")]
    Region(String),

    #[error("metric: {0}")]
    Metric(String),

    #[error("report: {0}")]
    Report(String),

    #[error("config syntax error at line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },

    #[error("config validation failed for {path}: {message}")]
    ConfigValidation { path: String, message: String },

    #[error("i/o on {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
