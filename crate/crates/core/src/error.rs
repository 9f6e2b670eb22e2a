use thiserror::Error;

/// Errors raised by the regression toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The covariance matrix could not be factorised.
    #[error("covariance matrix is not positive definite (alpha={alpha}, lengthscales={lengthscales:?}, noise_variance={noise_variance}); {hint}")]
    IllConditioned {
        alpha: f64,
        lengthscales: Vec<f64>,
        noise_variance: f64,
        hint: String,
    },

    #[error("log marginal likelihood is not finite at the initial hyperparameters")]
    NonFiniteObjective,

    #[error("virtual point grid of {requested} points exceeds the cap of {cap}; place virtual points manually")]
    VirtualGridTooLarge { requested: usize, cap: usize },

    #[error("region approximation kind mismatch: expected {expected}, found {found}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("region has zero volume")]
    ZeroVolume,

    #[error("no interior cells at grid resolution {resolution}; increase the resolution")]
    NoInteriorCells { resolution: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
