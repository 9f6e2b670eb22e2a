//! Closed-form covariances for integrals of a latent exponentiated-quadratic GP.
//!
//! The latent kernel is `k(u, u') = alpha * prod_i exp(-(u_i - u'_i)^2 / l_i^2)`.
//! Note there is no factor of 2 in the denominator: a lengthscale `l` here
//! corresponds to `l / sqrt(2)` in the more common `exp(-r^2 / (2 l^2))`
//! parameterisation (see [`Hyperparameters::standard_lengthscales`]).
//!
//! Three covariances are provided, each with hyperparameter gradients:
//!
//! * latent/latent ([`eq_kernel`]),
//! * integral/integral over two hyperrectangles ([`integral_cov`]),
//! * integral/latent, the cross-covariance ([`cross_cov`]).
//!
//! Multi-dimensional covariances are products of one-dimensional factors
//! computed with unit variance; `alpha` is applied once to the product so the
//! latent prior variance is `alpha` regardless of dimension.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::special::{erf, erfc, SQRT_PI};

/// Kernel variance, per-dimension lengthscales and Gaussian noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub alpha: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl Hyperparameters {
    pub fn new(alpha: f64, lengthscales: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let hp = Hyperparameters {
            alpha,
            lengthscales,
            noise_variance,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn isotropic(alpha: f64, lengthscale: f64, dims: usize, noise_variance: f64) -> Result<Self> {
        Self::new(alpha, vec![lengthscale; dims], noise_variance)
    }

    pub fn dims(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidHyperparameters(format!(
                "alpha must be positive and finite, got {}",
                self.alpha
            )));
        }
        if self.lengthscales.is_empty() {
            return Err(Error::InvalidHyperparameters("no lengthscales".into()));
        }
        if let Some(l) = self
            .lengthscales
            .iter()
            .find(|l| !(**l > 0.0 && l.is_finite()))
        {
            return Err(Error::InvalidHyperparameters(format!(
                "lengthscales must be positive and finite, got {l}"
            )));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::InvalidHyperparameters(format!(
                "noise variance must be non-negative, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }

    /// Lengthscales in the `exp(-r^2 / (2 l^2))` convention.
    pub fn standard_lengthscales(&self) -> Vec<f64> {
        self.lengthscales
            .iter()
            .map(|l| l / std::f64::consts::SQRT_2)
            .collect()
    }
}

/// Closed interval `[s, t]`; `t == s` is a legal zero-width bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub s: f64,
    pub t: f64,
}

impl Interval {
    pub fn new(s: f64, t: f64) -> Result<Self> {
        if !(s.is_finite() && t.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "interval bounds must be finite, got [{s}, {t}]"
            )));
        }
        if t < s {
            return Err(Error::InvalidInput(format!(
                "interval upper bound {t} is below lower bound {s}"
            )));
        }
        Ok(Interval { s, t })
    }

    pub fn width(&self) -> f64 {
        self.t - self.s
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.s + self.t)
    }

    fn overlap(&self, other: &Interval) -> f64 {
        (self.t.min(other.t) - self.s.max(other.s)).max(0.0)
    }
}

/// Axis-aligned box, one interval per input dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperrectangle {
    pub intervals: Vec<Interval>,
}

impl Hyperrectangle {
    pub fn new(intervals: Vec<Interval>) -> Self {
        Hyperrectangle { intervals }
    }

    /// Builds from `(lower, upper)` pairs, validating each.
    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self> {
        bounds
            .iter()
            .map(|&(s, t)| Interval::new(s, t))
            .collect::<Result<Vec<_>>>()
            .map(Hyperrectangle::new)
    }

    pub fn dims(&self) -> usize {
        self.intervals.len()
    }

    pub fn volume(&self) -> f64 {
        self.intervals.iter().map(Interval::width).product()
    }

    pub fn centroid(&self) -> LatentPoint {
        LatentPoint::new(self.intervals.iter().map(Interval::midpoint).collect())
    }
}

/// A location in input space where the latent function is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPoint {
    pub coords: Vec<f64>,
}

impl LatentPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        LatentPoint { coords }
    }

    pub fn dims(&self) -> usize {
        self.coords.len()
    }
}

/// `g(z) = z sqrt(pi) erf(z) + exp(-z^2)`.
pub fn g_support(z: f64) -> f64 {
    z * SQRT_PI * erf(z) + (-z * z).exp()
}

/// `h(z) = z sqrt(pi)/2 erf(z) + exp(-z^2)`, used by the lengthscale gradient
/// of the integral covariance.
pub fn h_support(z: f64) -> f64 {
    0.5 * z * SQRT_PI * erf(z) + (-z * z).exp()
}

/// `d(z) = sqrt(pi)/2 erf(z) - z exp(-z^2)`, used by the lengthscale
/// gradient of the cross-covariance. Odd in `z`.
pub fn d_support(z: f64) -> f64 {
    0.5 * SQRT_PI * erf(z) - z * (-z * z).exp()
}

// g(z) = |z| sqrt(pi) + g_tail(z); the tail decays like exp(-z^2) / (2 z^2).
#[inline]
fn g_tail(z: f64) -> f64 {
    let a = z.abs();
    (-a * a).exp() - a * SQRT_PI * erfc(a)
}

// h(z) = |z| sqrt(pi)/2 + h_tail(z).
#[inline]
fn h_tail(z: f64) -> f64 {
    let a = z.abs();
    (-a * a).exp() - 0.5 * a * SQRT_PI * erfc(a)
}

/// erf(a) + erf(b) without cancellation when the signs differ.
#[inline]
fn erf_sum(a: f64, b: f64) -> f64 {
    if a >= 0.0 && b >= 0.0 || a <= 0.0 && b <= 0.0 {
        erf(a) + erf(b)
    } else if a < 0.0 {
        erfc(-a) - erfc(b)
    } else {
        erfc(-b) - erfc(a)
    }
}

/// The four support arguments, ordered `[+, +, -, -]`.
#[inline]
fn bracket_args(a: &Interval, b: &Interval, l: f64) -> [f64; 4] {
    [
        (a.t - b.s) / l,
        (b.t - a.s) / l,
        (a.t - b.t) / l,
        (a.s - b.s) / l,
    ]
}

/// Widths below this fraction of the lengthscale are integrated numerically.
///
/// For such intervals the four support terms are O(1) while their combination
/// is O(w_a w_b / l^2), so the bracket loses digits. Gauss-Legendre over the
/// narrow interval is exact to rounding there: the n-point error scales like
/// (w/l)^(2n+1) (n!)^3 / (2n)!^2, below 1e-17 for 6 points at w = l/4 and for
/// 4 points at w = l/20.
const NARROW: f64 = 0.25;
const VERY_NARROW: f64 = 0.05;

// Positive halves of the 4- and 6-point Gauss-Legendre rules on [-1, 1].
const GL4: ([f64; 2], [f64; 2]) = (
    [0.339_981_043_584_856_3, 0.861_136_311_594_052_6],
    [0.652_145_154_862_546_1, 0.347_854_845_137_453_9],
);
#[allow(clippy::excessive_precision)]
const GL6: ([f64; 3], [f64; 3]) = (
    [0.238_619_186_083_196_9, 0.661_209_386_466_264_5, 0.932_469_514_203_152_1],
    [0.467_913_934_572_691, 0.360_761_573_048_138_6, 0.171_324_492_379_170_4],
);

#[inline]
fn gauss_legendre<F: Fn(f64) -> f64>(iv: &Interval, l: f64, f: F) -> f64 {
    let c = iv.midpoint();
    let h = 0.5 * iv.width();
    if h == 0.0 {
        return 0.0;
    }
    let (xs, ws): (&[f64], &[f64]) = if iv.width() < VERY_NARROW * l {
        (&GL4.0, &GL4.1)
    } else {
        (&GL6.0, &GL6.1)
    };
    h * xs
        .iter()
        .zip(ws)
        .map(|(x, w)| w * (f(c - h * x) + f(c + h * x)))
        .sum::<f64>()
}

/// Puts a pair in a fixed order so symmetric quantities are bitwise
/// symmetric.
#[inline]
fn ordered<'a>(a: &'a Interval, b: &'a Interval) -> (&'a Interval, &'a Interval) {
    if (a.s, a.t) <= (b.s, b.t) {
        (a, b)
    } else {
        (b, a)
    }
}

/// Unit-variance integral covariance.
fn unit_integral_cov(a: &Interval, b: &Interval, l: f64) -> f64 {
    let (a, b) = ordered(a, b);
    match (a.width() < NARROW * l, b.width() < NARROW * l) {
        (true, true) => gauss_legendre(a, l, |u| {
            gauss_legendre(b, l, |v| {
                let z = (u - v) / l;
                (-z * z).exp()
            })
        }),
        (true, false) => gauss_legendre(a, l, |u| unit_cross_cov(b, u, l)),
        (false, true) => gauss_legendre(b, l, |v| unit_cross_cov(a, v, l)),
        (false, false) => {
            // The linear parts of the four g terms sum to 2 * overlap / l
            // exactly, so only the decaying tails are combined numerically.
            let z = bracket_args(a, b, l);
            let positive = 2.0 * SQRT_PI * a.overlap(b) / l + (g_tail(z[0]) + g_tail(z[1]));
            let negative = g_tail(z[2]) + g_tail(z[3]);
            0.5 * l * l * (positive - negative)
        }
    }
}

/// Unit-variance d/dl of the integral covariance.
fn unit_integral_cov_grad_l(a: &Interval, b: &Interval, l: f64) -> f64 {
    let (a, b) = ordered(a, b);
    match (a.width() < NARROW * l, b.width() < NARROW * l) {
        (true, true) => gauss_legendre(a, l, |u| {
            gauss_legendre(b, l, |v| {
                let z = (u - v) / l;
                2.0 * z * z * (-z * z).exp() / l
            })
        }),
        (true, false) => gauss_legendre(a, l, |u| unit_cross_cov_grad_l(b, u, l)),
        (false, true) => gauss_legendre(b, l, |v| unit_cross_cov_grad_l(a, v, l)),
        (false, false) => {
            let z = bracket_args(a, b, l);
            let positive = SQRT_PI * a.overlap(b) / l + (h_tail(z[0]) + h_tail(z[1]));
            let negative = h_tail(z[2]) + h_tail(z[3]);
            l * (positive - negative)
        }
    }
}

#[inline]
fn unit_cross_cov(a: &Interval, tprime: f64, l: f64) -> f64 {
    0.5 * SQRT_PI * l * erf_sum((a.t - tprime) / l, (tprime - a.s) / l)
}

#[inline]
fn unit_cross_cov_grad_l(a: &Interval, tprime: f64, l: f64) -> f64 {
    let za = (a.t - tprime) / l;
    let zb = (tprime - a.s) / l;
    0.5 * SQRT_PI * erf_sum(za, zb) - za * (-za * za).exp() - zb * (-zb * zb).exp()
}

/// Covariance between the integrals of the latent function over `a` and `b`:
/// `(alpha l^2 / 2) [g((t-s')/l) + g((t'-s)/l) - g((t-t')/l) - g((s-s')/l)]`.
pub fn integral_cov_1d(a: &Interval, b: &Interval, alpha: f64, l: f64) -> f64 {
    alpha * unit_integral_cov(a, b, l)
}

/// Covariance between the integral over `a` and the latent value at `tprime`.
pub fn cross_cov_1d(a: &Interval, tprime: f64, alpha: f64, l: f64) -> f64 {
    alpha * unit_cross_cov(a, tprime, l)
}

/// d/dl of [`integral_cov_1d`].
pub fn integral_cov_grad_l_1d(a: &Interval, b: &Interval, alpha: f64, l: f64) -> f64 {
    alpha * unit_integral_cov_grad_l(a, b, l)
}

/// d/dl of [`cross_cov_1d`].
pub fn cross_cov_grad_l_1d(a: &Interval, tprime: f64, alpha: f64, l: f64) -> f64 {
    alpha * unit_cross_cov_grad_l(a, tprime, l)
}

/// Gradient with respect to `alpha` of any of the kernels: they are all
/// linear in `alpha`.
pub fn grad_alpha(kernel_value: f64, alpha: f64) -> Result<f64> {
    if alpha > 0.0 {
        Ok(kernel_value / alpha)
    } else {
        Err(Error::InvalidHyperparameters(format!(
            "alpha must be positive, got {alpha}"
        )))
    }
}

/// Latent exponentiated-quadratic kernel.
pub fn eq_kernel(u: &[f64], u2: &[f64], hp: &Hyperparameters) -> Result<f64> {
    check_dims(hp.dims(), u.len())?;
    check_dims(hp.dims(), u2.len())?;
    Ok(eq_kernel_unchecked(u, u2, hp))
}

#[inline]
pub(crate) fn eq_kernel_unchecked(u: &[f64], u2: &[f64], hp: &Hyperparameters) -> f64 {
    let r2: f64 = u
        .iter()
        .zip(u2)
        .zip(&hp.lengthscales)
        .map(|((a, b), l)| {
            let z = (a - b) / l;
            z * z
        })
        .sum();
    hp.alpha * (-r2).exp()
}

/// Gradient of [`eq_kernel`] over `(alpha, l_1, ..., l_d)`.
pub fn eq_kernel_grad(u: &[f64], u2: &[f64], hp: &Hyperparameters) -> Result<Vec<f64>> {
    check_dims(hp.dims(), u.len())?;
    check_dims(hp.dims(), u2.len())?;
    Ok(eq_kernel_grad_unchecked(u, u2, hp))
}

pub(crate) fn eq_kernel_grad_unchecked(u: &[f64], u2: &[f64], hp: &Hyperparameters) -> Vec<f64> {
    let k = eq_kernel_unchecked(u, u2, hp);
    let mut grad = Vec::with_capacity(hp.dims() + 1);
    grad.push(k / hp.alpha);
    for ((a, b), l) in u.iter().zip(u2).zip(&hp.lengthscales) {
        let diff = a - b;
        grad.push(k * 2.0 * diff * diff / (l * l * l));
    }
    grad
}

/// Integral/integral covariance between two hyperrectangles.
pub fn integral_cov(a: &Hyperrectangle, b: &Hyperrectangle, hp: &Hyperparameters) -> Result<f64> {
    check_dims(hp.dims(), a.dims())?;
    check_dims(hp.dims(), b.dims())?;
    Ok(integral_cov_unchecked(a, b, hp))
}

#[inline]
pub(crate) fn integral_cov_unchecked(a: &Hyperrectangle, b: &Hyperrectangle, hp: &Hyperparameters) -> f64 {
    hp.alpha
        * a.intervals
            .iter()
            .zip(&b.intervals)
            .zip(&hp.lengthscales)
            .map(|((ia, ib), &l)| integral_cov_1d(ia, ib, 1.0, l))
            .product::<f64>()
}

/// Integral/latent cross-covariance between a hyperrectangle and a point.
pub fn cross_cov(a: &Hyperrectangle, p: &LatentPoint, hp: &Hyperparameters) -> Result<f64> {
    check_dims(hp.dims(), a.dims())?;
    check_dims(hp.dims(), p.dims())?;
    Ok(cross_cov_unchecked(a, &p.coords, hp))
}

#[inline]
pub(crate) fn cross_cov_unchecked(a: &Hyperrectangle, p: &[f64], hp: &Hyperparameters) -> f64 {
    hp.alpha
        * a.intervals
            .iter()
            .zip(p)
            .zip(&hp.lengthscales)
            .map(|((ia, &x), &l)| cross_cov_1d(ia, x, 1.0, l))
            .product::<f64>()
}

/// Product-rule gradient over `(alpha, l_1, ..., l_d)` given per-dimension
/// unit-variance factors and their lengthscale derivatives.
fn product_grad(alpha: f64, factors: &[f64], dfactors: &[f64]) -> Vec<f64> {
    let d = factors.len();
    let mut grad = Vec::with_capacity(d + 1);
    grad.push(factors.iter().product());
    for (j, df) in dfactors.iter().enumerate() {
        let others: f64 = factors
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != j)
            .map(|(_, f)| f)
            .product();
        grad.push(alpha * df * others);
    }
    grad
}

/// Gradient of [`integral_cov`] over `(alpha, l_1, ..., l_d)`.
pub fn integral_cov_grad(a: &Hyperrectangle, b: &Hyperrectangle, hp: &Hyperparameters) -> Result<Vec<f64>> {
    check_dims(hp.dims(), a.dims())?;
    check_dims(hp.dims(), b.dims())?;
    Ok(integral_cov_grad_unchecked(a, b, hp))
}

pub(crate) fn integral_cov_grad_unchecked(
    a: &Hyperrectangle,
    b: &Hyperrectangle,
    hp: &Hyperparameters,
) -> Vec<f64> {
    let (factors, dfactors): (Vec<f64>, Vec<f64>) = a
        .intervals
        .iter()
        .zip(&b.intervals)
        .zip(&hp.lengthscales)
        .map(|((ia, ib), &l)| (integral_cov_1d(ia, ib, 1.0, l), integral_cov_grad_l_1d(ia, ib, 1.0, l)))
        .unzip();
    product_grad(hp.alpha, &factors, &dfactors)
}

/// Gradient of [`cross_cov`] over `(alpha, l_1, ..., l_d)`.
pub fn cross_cov_grad(a: &Hyperrectangle, p: &LatentPoint, hp: &Hyperparameters) -> Result<Vec<f64>> {
    check_dims(hp.dims(), a.dims())?;
    check_dims(hp.dims(), p.dims())?;
    Ok(cross_cov_grad_unchecked(a, &p.coords, hp))
}

pub(crate) fn cross_cov_grad_unchecked(a: &Hyperrectangle, p: &[f64], hp: &Hyperparameters) -> Vec<f64> {
    let (factors, dfactors): (Vec<f64>, Vec<f64>) = a
        .intervals
        .iter()
        .zip(p)
        .zip(&hp.lengthscales)
        .map(|((ia, &x), &l)| (cross_cov_1d(ia, x, 1.0, l), cross_cov_grad_l_1d(ia, x, 1.0, l)))
        .unzip();
    product_grad(hp.alpha, &factors, &dfactors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(s: f64, t: f64) -> Interval {
        Interval::new(s, t).unwrap()
    }

    fn rect(b: &[(f64, f64)]) -> Hyperrectangle {
        Hyperrectangle::from_bounds(b).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn eq_kernel_examples() {
        let hp = Hyperparameters::new(3.0, vec![1.0], 0.0).unwrap();
        assert_eq!(eq_kernel(&[0.0], &[0.0], &hp).unwrap(), 3.0);
        let hp = Hyperparameters::new(1.0, vec![1.0], 0.0).unwrap();
        assert!((eq_kernel(&[0.0], &[1.0], &hp).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        let hp = Hyperparameters::new(1.0, vec![1.0, 2.0], 0.0).unwrap();
        let per_axis = (-1.0f64).exp() * (-(2.0f64 / 2.0).powi(2)).exp();
        assert!((eq_kernel(&[0.0, 0.0], &[1.0, 2.0], &hp).unwrap() - per_axis).abs() < 1e-15);
        assert!(matches!(
            eq_kernel(&[0.0], &[0.0, 1.0], &hp),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn support_functions() {
        assert_eq!(g_support(0.0), 1.0);
        assert!((g_support(1.0) - 1.861_527_706_796_296_4).abs() < 1e-14);
        assert_eq!(g_support(-1.0), g_support(1.0));
        // tail decomposition reproduces the direct form
        for &z in &[0.0f64, 0.3, -1.7, 4.0, 9.5] {
            assert!((z.abs() * SQRT_PI + g_tail(z) - g_support(z)).abs() < 1e-13);
            assert!((0.5 * z.abs() * SQRT_PI + h_tail(z) - h_support(z)).abs() < 1e-13);
        }
    }

    #[test]
    fn integral_cov_1d_examples() {
        assert_eq!(integral_cov_1d(&iv(0.0, 0.0), &iv(0.0, 1.0), 1.0, 1.0), 0.0);
        let unit = integral_cov_1d(&iv(0.0, 1.0), &iv(0.0, 1.0), 1.0, 1.0);
        assert!((unit - 0.861_527_706_796_296_4).abs() < 1e-14);
        let w = 1e-3;
        let tiny = integral_cov_1d(&iv(0.0, w), &iv(0.0, w), 1.0, 1.0);
        assert!(rel(tiny, w * w) < 1e-6);
        // symmetric
        let (a, b) = (iv(-1.2, 0.4), iv(0.1, 3.0));
        assert_eq!(
            integral_cov_1d(&a, &b, 2.0, 0.7),
            integral_cov_1d(&b, &a, 2.0, 0.7)
        );
    }

    #[test]
    fn distant_bins_do_not_cancel_catastrophically() {
        // exp(-(u-u')^2) between [0,1] and [30,31] is ~exp(-29^2): no spurious noise
        let v = integral_cov_1d(&iv(0.0, 1.0), &iv(30.0, 31.0), 1.0, 1.0);
        assert!((0.0..1e-300).contains(&v));
        // references from 50-digit nested quadrature
        let v = integral_cov_1d(&iv(0.0, 1.0), &iv(4.0, 5.0), 1.0, 1.0);
        assert!(rel(v, 2.970_092_802_104_870_4e-6) < 1e-12);
        let v = integral_cov_1d(&iv(0.0, 1.0), &iv(8.0, 9.0), 1.0, 1.0);
        assert!(rel(v, 2.596_958_592_573_450_7e-24) < 1e-10);
    }

    #[test]
    fn cross_cov_1d_examples() {
        assert_eq!(cross_cov_1d(&iv(0.0, 0.0), 5.0, 1.0, 1.0), 0.0);
        let v = cross_cov_1d(&iv(0.0, 1.0), 0.5, 1.0, 1.0);
        assert!((v - SQRT_PI * erf(0.5)).abs() < 1e-15);
        let v = cross_cov_1d(&iv(-10.0, 10.0), 0.0, 1.0, 1.0);
        assert!((v - SQRT_PI).abs() < 1e-14);
    }

    fn central<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn lengthscale_gradients_match_finite_differences() {
        let (a, b) = (iv(0.0, 1.0), iv(0.0, 1.0));
        let fd = central(|l| integral_cov_1d(&a, &b, 1.0, l), 1.0, 1e-5);
        assert!(rel(integral_cov_grad_l_1d(&a, &b, 1.0, 1.0), fd) < 1e-6);
        let fd = central(|l| cross_cov_1d(&a, 0.5, 1.0, l), 1.0, 1e-5);
        assert!(rel(cross_cov_grad_l_1d(&a, 0.5, 1.0, 1.0), fd) < 1e-6);

        assert_eq!(integral_cov_grad_l_1d(&iv(0.0, 0.0), &iv(0.0, 1.0), 1.0, 1.0), 0.0);
        assert_eq!(cross_cov_grad_l_1d(&iv(2.0, 2.0), 0.3, 1.0, 0.8), 0.0);

        let g1 = integral_cov_grad_l_1d(&iv(-0.3, 1.1), &iv(0.5, 2.0), 1.0, 0.9);
        let g2 = integral_cov_grad_l_1d(&iv(-0.3, 1.1), &iv(0.5, 2.0), 2.0, 0.9);
        assert!((g2 - 2.0 * g1).abs() <= 1e-15 * g2.abs());
        let c1 = cross_cov_grad_l_1d(&iv(-0.3, 1.1), 0.2, 1.0, 0.9);
        let c3 = cross_cov_grad_l_1d(&iv(-0.3, 1.1), 0.2, 3.0, 0.9);
        assert!((c3 - 3.0 * c1).abs() <= 1e-15 * c3.abs());
    }

    #[test]
    fn d_support_is_odd() {
        for &z in &[0.1, 0.7, 2.3, 5.0] {
            assert!((d_support(z) + d_support(-z)).abs() < 1e-14);
            assert_eq!(h_support(z), h_support(-z));
        }
    }

    #[test]
    fn alpha_gradient() {
        let unit = integral_cov_1d(&iv(0.0, 1.0), &iv(0.0, 1.0), 1.0, 1.0);
        assert_eq!(grad_alpha(unit, 1.0).unwrap(), unit);
        let two = integral_cov_1d(&iv(0.0, 1.0), &iv(0.0, 1.0), 2.0, 1.0);
        assert!((grad_alpha(two, 2.0).unwrap() - unit).abs() < 1e-15);
        let fd = central(|al| integral_cov_1d(&iv(0.0, 1.0), &iv(0.0, 1.0), al, 1.0), 1.0, 1e-5);
        assert!(rel(fd, unit) < 1e-8);
        assert!(grad_alpha(1.0, 0.0).is_err());
    }

    #[test]
    fn nd_covariances() {
        let hp = Hyperparameters::isotropic(1.0, 1.0, 2, 0.0).unwrap();
        let sq = rect(&[(0.0, 1.0), (0.0, 1.0)]);
        let v = integral_cov(&sq, &sq, &hp).unwrap();
        assert!((v - 0.861_527_706_796_296_4f64.powi(2)).abs() < 1e-14);
        let flat = rect(&[(0.0, 1.0), (0.5, 0.5)]);
        assert_eq!(integral_cov(&flat, &sq, &hp).unwrap(), 0.0);
        assert_eq!(integral_cov(&sq, &flat, &hp).unwrap(), 0.0);
        let c = cross_cov(&sq, &LatentPoint::new(vec![0.5, 0.5]), &hp).unwrap();
        assert!((c - (SQRT_PI * erf(0.5)).powi(2)).abs() < 1e-14);

        let hp1 = Hyperparameters::new(1.7, vec![0.6], 0.0).unwrap();
        let a = rect(&[(0.2, 1.4)]);
        let c = cross_cov(&a, &LatentPoint::new(vec![0.9]), &hp1).unwrap();
        assert_eq!(c, cross_cov_1d(&a.intervals[0], 0.9, 1.7, 0.6));
        assert!(integral_cov(&a, &sq, &hp).is_err());
    }

    #[test]
    fn nd_gradients_match_finite_differences() {
        let hp = Hyperparameters::new(1.3, vec![0.8, 1.9], 0.0).unwrap();
        let a = rect(&[(0.0, 1.0), (-0.5, 0.7)]);
        let b = rect(&[(0.4, 2.0), (0.1, 1.1)]);
        let p = LatentPoint::new(vec![0.3, 1.4]);
        let ga = integral_cov_grad(&a, &b, &hp).unwrap();
        let gc = cross_cov_grad(&a, &p, &hp).unwrap();
        let ge = eq_kernel_grad(&p.coords, &[1.0, -0.2], &hp).unwrap();
        for j in 0..2 {
            let f = |l: f64| {
                let mut h = hp.clone();
                h.lengthscales[j] = l;
                (
                    integral_cov(&a, &b, &h).unwrap(),
                    cross_cov(&a, &p, &h).unwrap(),
                    eq_kernel(&p.coords, &[1.0, -0.2], &h).unwrap(),
                )
            };
            let l = hp.lengthscales[j];
            let h = 1e-5 * l;
            let (p1, m1) = (f(l + h), f(l - h));
            assert!(rel(ga[j + 1], (p1.0 - m1.0) / (2.0 * h)) < 1e-5);
            assert!(rel(gc[j + 1], (p1.1 - m1.1) / (2.0 * h)) < 1e-5);
            assert!(rel(ge[j + 1], (p1.2 - m1.2) / (2.0 * h)) < 1e-5);
        }
        assert!(rel(ga[0] * hp.alpha, integral_cov(&a, &b, &hp).unwrap()) < 1e-15);

        let flat = rect(&[(0.0, 0.0), (0.0, 1.0)]);
        assert!(integral_cov_grad(&flat, &b, &hp)
            .unwrap()
            .iter()
            .all(|g| *g == 0.0));
        let one = Hyperparameters::new(1.0, vec![1.0], 0.0).unwrap();
        let g = integral_cov_grad(&rect(&[(0.0, 1.0)]), &rect(&[(0.0, 1.0)]), &one).unwrap();
        assert_eq!(g[1], integral_cov_grad_l_1d(&iv(0.0, 1.0), &iv(0.0, 1.0), 1.0, 1.0));
    }

    #[test]
    fn invalid_inputs() {
        assert!(Interval::new(1.0, 0.0).is_err());
        assert!(Interval::new(f64::NAN, 0.0).is_err());
        assert!(Hyperparameters::new(0.0, vec![1.0], 0.0).is_err());
        assert!(Hyperparameters::new(1.0, vec![-1.0], 0.0).is_err());
        assert!(Hyperparameters::new(1.0, vec![1.0], -1.0).is_err());
        let hp = Hyperparameters::new(1.0, vec![2.0], 0.0).unwrap();
        assert!((hp.standard_lengthscales()[0] - std::f64::consts::SQRT_2).abs() < 1e-15);
    }
}
