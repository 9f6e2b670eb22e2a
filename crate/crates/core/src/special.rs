//! Error function and standard-normal helpers.
//!
//! `erf`/`erfc` are the FreeBSD msun routines (via `libm`), accurate to
//! about one ulp over the whole real line.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub const SQRT_PI: f64 = 1.772_453_850_905_516;

#[inline]
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

#[inline]
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF, accurate in both tails.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// log Φ(z), stable for very negative z.
pub fn log_normal_cdf(z: f64) -> f64 {
    if z > -20.0 {
        normal_cdf(z).ln()
    } else {
        // Φ(z) = φ(z)/|z| · (1 - 1/z² + 3/z⁴ - 15/z⁶ + 105/z⁸ ...)
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2)
            + 105.0 / (z2 * z2 * z2 * z2);
        -0.5 * z2 - 0.5 * (2.0 * PI).ln() - (-z).ln() + series.ln()
    }
}

/// Inverse Mills ratio φ(z)/Φ(z).
pub fn inverse_mills(z: f64) -> f64 {
    if z > -20.0 {
        normal_pdf(z) / normal_cdf(z)
    } else {
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2)
            + 105.0 / (z2 * z2 * z2 * z2);
        -z / series
    }
}
