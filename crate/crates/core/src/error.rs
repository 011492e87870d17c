use thiserror::Error;

/// Errors raised anywhere in the simulation, estimation and reporting stack.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid grid, parameters, config keys or mismatched inputs.
    #[error("configuration error: {0}")]
    Config(String),

    /// Time step too coarse for the fast scale.
    #[error("stability error: dt = {dt} exceeds eps/10 = {limit} (eps = {eps})")]
    Stability { dt: f64, eps: f64, limit: f64 },

    /// A state component became NaN or infinite.
    #[error("divergence at step {step}: non-finite state")]
    Divergence { step: usize },

    /// A model function left its admissible range (e.g. an intensity outside (0,1)).
    #[error("model error: {0}")]
    Model(String),

    /// Every particle weight underflowed.
    #[error("filter degeneracy at step {step}: all weights underflow")]
    Degeneracy { step: usize },

    /// Density mass collapsed below the representable range.
    #[error("underflow: {0}")]
    Underflow(String),

    /// Slope fit could not be performed.
    #[error("fit error: {0}")]
    Fit(String),

    /// An experiment exceeded its abort quota.
    #[error("experiment failure: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
