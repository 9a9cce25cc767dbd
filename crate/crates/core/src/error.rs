use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no observations in arm {0}")]
    EmptyArm(u8),

    #[error("restriction time {tau} beyond last event {last_event}")]
    Extrapolation { tau: f64, last_event: f64 },

    #[error("rank-deficient design: column `{column}` is collinear with earlier columns")]
    RankDeficient { column: String },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("did not converge after {iterations} iterations (last step {last_step:e})")]
    NonConvergence {
        iterations: usize,
        last_step: f64,
        last_iterate: Vec<f64>,
    },

    #[error("evaluation point {t} outside [{lo}, {hi}]")]
    OutsideSupport { t: f64, lo: f64, hi: f64 },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("too many failed replicates: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    /// True for errors caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular(_)
                | Error::NonConvergence { .. }
                | Error::RankDeficient { .. }
                | Error::Calibration(_)
                | Error::TooManyFailures { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
