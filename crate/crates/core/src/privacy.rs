//! Laplace mechanism for histogram releases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DPConfig {
    pub epsilon: f64,
    /// Change in one bin count from adding or removing one individual.
    pub sensitivity: f64,
    /// Set negative noisy counts to zero.
    pub clamp_negative: bool,
}

impl DPConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        let cfg = DPConfig {
            epsilon,
            sensitivity: 1.0,
            clamp_negative: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidInput(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.sensitivity > 0.0 && self.sensitivity.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sensitivity must be positive, got {}",
                self.sensitivity
            )));
        }
        Ok(())
    }

    /// Laplace scale `b = sensitivity / epsilon`.
    pub fn scale(&self) -> f64 {
        self.sensitivity / self.epsilon
    }
}

/// One Laplace(0, b) draw by inversion.
pub fn laplace<R: Rng + ?Sized>(b: f64, rng: &mut R) -> f64 {
    // u in (-1/2, 1/2]; the open end keeps ln finite
    let u: f64 = 0.5 - rng.random::<f64>();
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Adds independent Laplace noise to every count, clamping negatives when
/// configured.
pub fn privatize<R: Rng + ?Sized>(y: &[f64], cfg: &DPConfig, rng: &mut R) -> Result<Vec<f64>> {
    cfg.validate()?;
    let b = cfg.scale();
    Ok(y.iter()
        .map(|v| {
            let out = v + laplace(b, rng);
            if cfg.clamp_negative {
                out.max(0.0)
            } else {
                out
            }
        })
        .collect())
}

/// Variance `2 (sensitivity / epsilon)^2` of the injected noise.
pub fn dp_noise_variance(cfg: &DPConfig) -> f64 {
    2.0 * cfg.scale() * cfg.scale()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn variance_formula() {
        assert_eq!(dp_noise_variance(&DPConfig::new(1.0).unwrap()), 2.0);
        assert!((dp_noise_variance(&DPConfig::new(0.1).unwrap()) - 200.0).abs() < 1e-9);
    }

    #[test]
    fn vanishing_noise_and_clamping() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        let y = [3.0, 0.0, 10.0];
        let out = privatize(&y, &DPConfig::new(1e9).unwrap(), &mut rng).unwrap();
        assert!(out.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-6));
        let cfg = DPConfig {
            clamp_negative: true,
            ..DPConfig::new(0.1).unwrap()
        };
        let out = privatize(&[0.0; 100], &cfg, &mut rng).unwrap();
        assert!(out.iter().all(|v| *v >= 0.0));
        assert!(DPConfig::new(0.0).is_err());
    }
}
