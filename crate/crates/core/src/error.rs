use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("tile grid is empty: {0}")]
    EmptyGrid(String),

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("degenerate normalization: {0}")]
    DegenerateNormalization(String),

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("training diverged: {0}")]
    TrainingDivergence(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("degenerate bootstrap: {0}")]
    DegenerateBootstrap(String),

    #[error("no signal: {0}")]
    NoSignal(String),

    #[error("degenerate effect size: {0}")]
    DegenerateEffect(String),

    #[error("placement error: {0}")]
    Placement(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::TrainingDivergence(_)
                | Error::DegenerateFit(_)
                | Error::DegenerateNormalization(_)
                | Error::DegenerateBootstrap(_)
        )
    }
}
