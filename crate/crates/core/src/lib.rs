//! Gaussian-process regression on binned data.
//!
//! Observations are noisy definite integrals of a latent function over bins
//! (hyperrectangles, or arbitrary polytopes approximated by points or filled
//! rectangles). The crate recovers the latent function, predicts new bin
//! integrals, optionally constrains the latent function to be non-negative,
//! and provides a Laplace mechanism for producing differentially private
//! training histograms.
//!
//! Modules:
//!
//! * [`kernel`] closed-form integral covariances and their gradients,
//! * [`gp`] Gram assembly, marginal likelihood, fitting and prediction,
//! * [`nonneg`] non-negativity via probit virtual points and EP,
//! * [`polytope`] point- and rectangle-based approximations for
//!   non-rectangular regions,
//! * [`privacy`] the Laplace mechanism.

pub mod error;
pub mod gp;
pub mod kernel;
pub mod linalg;
pub mod nonneg;
pub mod parallel;
pub mod polytope;
pub mod privacy;
pub mod special;
pub mod support;

pub use error::{Error, Result};
pub use gp::{BinnedDataset, FitConfig, FitResult, Posterior};
pub use kernel::{Hyperparameters, Hyperrectangle, Interval, LatentPoint};
pub use parallel::Execution;
pub use support::Support;
