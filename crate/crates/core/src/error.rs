use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid environment law: {0}")]
    InvalidLaw(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("lambda is zero; the jump matrix is undefined")]
    ZeroLambda,

    #[error("lambda is zero at site {site}")]
    ZeroLambdaAtSite { site: i64 },

    #[error("mu^L is zero; B is not invertible")]
    ZeroMuL,

    #[error("environment law violates the standing conditions: {}", .0.join("; "))]
    ConditionsViolated(Vec<String>),

    #[error("normalization factor vanished (underflow) at step {step}")]
    NumericalUnderflow { step: u64 },

    #[error("power iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: u64 },

    #[error("state {state} has zero total rate (absorbing)")]
    AbsorbedState { state: i64 },

    #[error("environment window cannot be extended to site {index}")]
    WindowOverflow { index: i64 },

    #[error("path is not a first-passage path to 1: {0}")]
    PathNotFirstPassage(String),

    #[error("branching realization was censored before extinction")]
    CensoredRealization,

    #[error("empty sample")]
    EmptySample,

    #[error("excess censoring: direct {direct}, reconstructed {reconstructed} (limit 1%)")]
    ExcessCensoring { direct: f64, reconstructed: f64 },
}
