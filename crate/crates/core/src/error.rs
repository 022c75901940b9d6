use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The model parameters violate a structural assumption (kernel sign,
    /// normalization, nonlinearity shape, preconditions of an operation).
    #[error("invalid model input: {0}")]
    InvalidModel(String),

    /// The N-th moment of the kernel diverges, so no finite semi-wave speed
    /// exists and spreading is accelerated.
    #[error("infinite speed: (J1) fails, the kernel N-th moment diverges (tail exponent {beta} <= N+1 = {limit})")]
    InfiniteSpeed { beta: f64, limit: f64 },

    /// A numerical scheme did not converge or produced an inadmissible state.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("cache file error: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidModel(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// True for errors caused by the inputs rather than by the numerics.
    pub fn is_model_input(&self) -> bool {
        matches!(
            self,
            Error::InvalidModel(_) | Error::InfiniteSpeed { .. } | Error::Config(_)
        )
    }
}
