use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("steering angle magnitude {0} rad at or beyond pi/2")]
    SteeringSingularity(f64),

    #[error("sensitivity function not trained for mode `{0}`")]
    UntrainedMode(crate::control::Mode),

    #[error("look-ahead {t_look} s exceeds trained horizon {horizon} s")]
    HorizonExceeded { t_look: f64, horizon: f64 },

    #[error("time grids do not match: {0}")]
    GridMismatch(String),

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("no overlap between truth samples and tube window")]
    EmptyOverlap,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    TomlParse(#[from] toml::de::Error),

    #[error("toml: {0}")]
    TomlEmit(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 config, 3 missing artifacts, 4 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidInput(_) | Error::TomlParse(_) => 2,
            Error::MissingArtifact(_) => 3,
            _ => 4,
        }
    }
}
