//! Gram assembly, marginal likelihood, hyperparameter fitting and posterior
//! prediction for integral observations.
//!
//! With `K = K_FF + diag(sigma^2 * noise_scale)` the posterior at a query `*`
//! is
//!
//! ```text
//! mean = k_F*^T K^{-1} y
//! var  = k_** - k_F*^T K^{-1} k_F*
//! ```
//!
//! where `k_F*` is the cross-covariance (latent queries) or the integral
//! covariance (bin queries) and `k_**` the matching prior variance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::kernel::{Hyperparameters, Hyperrectangle, LatentPoint};
use crate::linalg::Cholesky;
use crate::parallel::Execution;
use crate::support::{prior_variance, support_cov_grad_unchecked, support_cov_unchecked, Support};

/// Whether bin values are totals or per-bin means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationKind {
    Sum,
    Mean,
}

/// Observed regions with their integral outputs and optional per-observation
/// noise multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedDataset {
    dims: usize,
    supports: Vec<Support>,
    y: Vec<f64>,
    noise_scale: Option<Vec<f64>>,
}

impl BinnedDataset {
    /// Bins whose value is NaN (e.g. the mean of an empty bin) are dropped.
    pub fn new(dims: usize, supports: Vec<Support>, y: Vec<f64>) -> Result<Self> {
        if supports.len() != y.len() {
            return Err(Error::InvalidInput(format!(
                "{} regions but {} outputs",
                supports.len(),
                y.len()
            )));
        }
        for s in &supports {
            check_dims(dims, s.dims())?;
        }
        if let Some(v) = y.iter().find(|v| v.is_infinite()) {
            return Err(Error::InvalidInput(format!("non-finite output {v}")));
        }
        let (supports, y) = supports
            .into_iter()
            .zip(y)
            .filter(|(_, v)| !v.is_nan())
            .unzip();
        Ok(BinnedDataset {
            dims,
            supports,
            y,
            noise_scale: None,
        })
    }

    pub fn from_regions(regions: Vec<Hyperrectangle>, y: Vec<f64>) -> Result<Self> {
        let dims = regions.first().map_or(0, Hyperrectangle::dims);
        Self::new(dims, regions.into_iter().map(Support::Region).collect(), y)
    }

    pub fn from_points(points: Vec<LatentPoint>, y: Vec<f64>) -> Result<Self> {
        let dims = points.first().map_or(0, LatentPoint::dims);
        Self::new(dims, points.into_iter().map(Support::Point).collect(), y)
    }

    pub fn empty(dims: usize) -> Self {
        BinnedDataset {
            dims,
            supports: Vec::new(),
            y: Vec::new(),
            noise_scale: None,
        }
    }

    /// Sets per-observation noise multipliers (noise variance becomes
    /// `sigma^2 * scale_i`).
    pub fn with_noise_scale(mut self, scale: Vec<f64>) -> Result<Self> {
        if scale.len() != self.y.len() {
            return Err(Error::InvalidInput(format!(
                "{} noise scales for {} observations",
                scale.len(),
                self.y.len()
            )));
        }
        if let Some(s) = scale.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput(format!("invalid noise scale {s}")));
        }
        self.noise_scale = Some(scale);
        Ok(self)
    }

    /// Appends one observation (noise scale 1 unless scales are set, in
    /// which case `scale` is used).
    pub fn push(&mut self, support: Support, y: f64, scale: f64) -> Result<()> {
        check_dims(self.dims, support.dims())?;
        self.supports.push(support);
        self.y.push(y);
        if let Some(ns) = &mut self.noise_scale {
            ns.push(scale);
        } else if scale != 1.0 {
            let mut ns = vec![1.0; self.y.len() - 1];
            ns.push(scale);
            self.noise_scale = Some(ns);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn supports(&self) -> &[Support] {
        &self.supports
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn noise_scales(&self) -> Option<&[f64]> {
        self.noise_scale.as_deref()
    }

    pub fn noise_scale(&self, i: usize) -> f64 {
        self.noise_scale.as_ref().map_or(1.0, |s| s[i])
    }

    /// The rectangular bins of the dataset.
    pub fn regions(&self) -> impl Iterator<Item = &Hyperrectangle> {
        self.supports.iter().filter_map(|s| match s {
            Support::Region(r) => Some(r),
            _ => None,
        })
    }

    /// Centroid-baseline view: each region becomes a point at its centroid
    /// whose value is the bin density `y / volume`.
    pub fn to_centroids(&self) -> Result<BinnedDataset> {
        let points = self.supports.iter().map(|s| Support::Point(s.centroid())).collect();
        let y = self
            .supports
            .iter()
            .zip(&self.y)
            .map(|(s, y)| y / s.volume())
            .collect();
        BinnedDataset::new(self.dims, points, y)
    }
}

/// Noise multipliers for bin means (`1 / n_i`) or bin sums (`1`).
pub fn heteroscedastic_noise(
    data: &BinnedDataset,
    counts: &[f64],
    kind: ObservationKind,
) -> Result<BinnedDataset> {
    if counts.len() != data.len() {
        return Err(Error::InvalidInput(format!(
            "{} counts for {} observations",
            counts.len(),
            data.len()
        )));
    }
    if let Some(c) = counts.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
        return Err(Error::InvalidInput(format!("bin counts must be positive, got {c}")));
    }
    let scale = match kind {
        ObservationKind::Mean => counts.iter().map(|n| 1.0 / n).collect(),
        ObservationKind::Sum => vec![1.0; counts.len()],
    };
    data.clone().with_noise_scale(scale)
}

/// Posterior mean and variance per query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl Posterior {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Half-width of the central 95% interval.
    pub fn half_width(&self, i: usize) -> f64 {
        1.959_963_984_540_054 * self.variance[i].sqrt()
    }

    pub fn ci95(&self, i: usize) -> (f64, f64) {
        let h = self.half_width(i);
        (self.mean[i] - h, self.mean[i] + h)
    }

    /// Adds observation noise to every variance (predictive distribution of
    /// a new noisy measurement rather than of the latent quantity).
    pub fn with_added_variance(mut self, extra: f64) -> Self {
        self.variance.iter_mut().for_each(|v| *v += extra);
        self
    }
}

fn check_model(data: &BinnedDataset, hp: &Hyperparameters) -> Result<()> {
    hp.validate()?;
    check_dims(hp.dims(), data.dims())
}

fn ill_conditioned(hp: &Hyperparameters, hint: &str) -> Error {
    Error::IllConditioned {
        alpha: hp.alpha,
        lengthscales: hp.lengthscales.clone(),
        noise_variance: hp.noise_variance,
        hint: hint.to_string(),
    }
}

/// Upper-triangle index pairs `(i, j)` with `j >= i`.
fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect()
}

/// Covariance between two lists of supports.
pub fn cross_matrix(a: &[Support], b: &[Support], hp: &Hyperparameters, exec: Execution) -> DMatrix<f64> {
    let (n, m) = (a.len(), b.len());
    let vals = exec.map_range(n * m, |k| {
        support_cov_unchecked(&a[k / m], &b[k % m], hp, Execution::Sequential)
    });
    DMatrix::from_row_slice(n, m, &vals)
}

/// Noise-free symmetric covariance over one list of supports.
pub fn self_matrix(a: &[Support], hp: &Hyperparameters, exec: Execution) -> DMatrix<f64> {
    let n = a.len();
    let pairs = upper_pairs(n);
    let vals = exec.map_slice(&pairs, |&(i, j)| {
        support_cov_unchecked(&a[i], &a[j], hp, Execution::Sequential)
    });
    let mut k = DMatrix::zeros(n, n);
    for (&(i, j), v) in pairs.iter().zip(vals) {
        k[(i, j)] = v;
        k[(j, i)] = v;
    }
    k
}

/// `K_FF + diag(sigma^2 * noise_scale)`.
pub fn build_gram(data: &BinnedDataset, hp: &Hyperparameters) -> Result<DMatrix<f64>> {
    build_gram_with(data, hp, Execution::default())
}

pub fn build_gram_with(data: &BinnedDataset, hp: &Hyperparameters, exec: Execution) -> Result<DMatrix<f64>> {
    check_model(data, hp)?;
    if data.is_empty() {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    let mut k = self_matrix(data.supports(), hp, exec);
    for i in 0..data.len() {
        k[(i, i)] += hp.noise_variance * data.noise_scale(i);
    }
    Ok(k)
}

/// Log marginal likelihood and its gradient with respect to
/// `(ln alpha, ln l_1, ..., ln l_d, ln sigma^2)`.
///
/// The Gram matrix is factorised without jitter so the value is exactly the
/// model's evidence; a singular Gram is reported as
/// [`Error::IllConditioned`].
pub fn log_marginal_likelihood(data: &BinnedDataset, hp: &Hyperparameters) -> Result<(f64, Vec<f64>)> {
    log_marginal_likelihood_with(data, hp, Execution::default())
}

pub fn log_marginal_likelihood_with(
    data: &BinnedDataset,
    hp: &Hyperparameters,
    exec: Execution,
) -> Result<(f64, Vec<f64>)> {
    check_model(data, hp)?;
    let n = data.len();
    let d = hp.dims();
    if n == 0 {
        return Ok((0.0, vec![0.0; d + 2]));
    }
    let k = build_gram_with(data, hp, exec)?;
    let chol = Cholesky::new(&k).ok_or_else(|| {
        ill_conditioned(hp, "add observation noise or remove duplicated regions")
    })?;
    let y = DVector::from_column_slice(data.y());
    let a = chol.solve_vec(&y);
    let value = -0.5 * y.dot(&a) - 0.5 * chol.log_det() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // dL/dtheta = 1/2 tr((a a^T - K^{-1}) dK/dtheta)
    let kinv = chol.inverse();
    let w = |i: usize, j: usize| a[i] * a[j] - kinv[(i, j)];
    let pairs = upper_pairs(n);
    let supports = data.supports();
    let contributions = exec.map_slice(&pairs, |&(i, j)| {
        let g = support_cov_grad_unchecked(&supports[i], &supports[j], hp, Execution::Sequential);
        let weight = if i == j { w(i, i) } else { 2.0 * w(i, j) };
        g.into_iter().map(|v| weight * v).collect::<Vec<_>>()
    });
    let mut raw = vec![0.0; d + 1];
    for c in contributions {
        for (r, v) in raw.iter_mut().zip(c) {
            *r += v;
        }
    }
    let mut grad = Vec::with_capacity(d + 2);
    grad.push(0.5 * raw[0] * hp.alpha);
    for (j, l) in hp.lengthscales.iter().enumerate() {
        grad.push(0.5 * raw[j + 1] * l);
    }
    let noise_trace: f64 = (0..n).map(|i| w(i, i) * data.noise_scale(i)).sum();
    grad.push(0.5 * noise_trace * hp.noise_variance);
    Ok((value, grad))
}

/// Optimiser settings.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Stop when the objective changes by less than this...
    pub tol_objective: f64,
    /// ...and the projected log-space gradient is below this (max norm).
    pub tol_gradient: f64,
    /// Keep `noise_variance` at its initial value. Implied when it is zero.
    pub fix_noise: bool,
    /// Box constraints on every log-parameter.
    pub log_bounds: (f64, f64),
    /// Largest step (max norm, log units) attempted per iteration.
    pub max_step: f64,
    pub history: usize,
    pub exec: Execution,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 1000,
            tol_objective: 1e-6,
            tol_gradient: 1e-5,
            fix_noise: false,
            log_bounds: (-23.0, 23.0),
            max_step: 2.0,
            history: 8,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub hyperparameters: Hyperparameters,
    pub log_marginal_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Gradient of the objective in log-parameter space at the result.
    pub gradient: Vec<f64>,
}

/// Scale-aware starting point: a quarter of the input range per dimension,
/// `alpha = var(y / volume)`, `sigma^2 = 0.1 alpha`.
pub fn default_init(data: &BinnedDataset) -> Result<Hyperparameters> {
    let d = data.dims();
    if d == 0 {
        return Err(Error::InvalidInput("dataset has no dimensions".into()));
    }
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for s in data.supports() {
        for (k, (a, b)) in s.bounds().into_iter().enumerate() {
            lo[k] = lo[k].min(a);
            hi[k] = hi[k].max(b);
        }
    }
    let lengthscales = lo
        .iter()
        .zip(&hi)
        .map(|(a, b)| {
            let r = 0.25 * (b - a);
            if r > 0.0 && r.is_finite() {
                r
            } else {
                1.0
            }
        })
        .collect();
    let dens: Vec<f64> = data
        .supports()
        .iter()
        .zip(data.y())
        .map(|(s, y)| y / s.volume())
        .filter(|v| v.is_finite())
        .collect();
    let alpha = if dens.len() >= 2 {
        let m = dens.iter().sum::<f64>() / dens.len() as f64;
        dens.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / dens.len() as f64
    } else {
        dens.first().map_or(1.0, |v| v * v)
    };
    let alpha = if alpha > 0.0 && alpha.is_finite() { alpha } else { 1.0 };
    Hyperparameters::new(alpha, lengthscales, 0.1 * alpha)
}

fn to_log(hp: &Hyperparameters) -> Vec<f64> {
    let mut v = Vec::with_capacity(hp.dims() + 2);
    v.push(hp.alpha.ln());
    v.extend(hp.lengthscales.iter().map(|l| l.ln()));
    v.push(if hp.noise_variance > 0.0 {
        hp.noise_variance.ln()
    } else {
        f64::NEG_INFINITY
    });
    v
}

fn from_log(theta: &[f64], template: &Hyperparameters, free_noise: bool) -> Hyperparameters {
    let d = template.dims();
    Hyperparameters {
        alpha: theta[0].exp(),
        lengthscales: theta[1..=d].iter().map(|v| v.exp()).collect(),
        noise_variance: if free_noise {
            theta[d + 1].exp()
        } else {
            template.noise_variance
        },
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximises the log marginal likelihood over log-parameters.
///
/// Ascent directions come from limited-memory BFGS (falling back to the
/// plain gradient whenever the quasi-Newton direction is not an ascent
/// direction) with a backtracking Armijo line search. Only improving steps
/// are accepted, so the returned hyperparameters are the best visited.
pub fn fit(data: &BinnedDataset, init: &Hyperparameters, config: &FitConfig) -> Result<FitResult> {
    check_model(data, init)?;
    let free_noise = !config.fix_noise && init.noise_variance > 0.0;
    let objective = |theta: &[f64]| -> Option<(f64, Vec<f64>)> {
        let hp = from_log(theta, init, free_noise);
        match log_marginal_likelihood_with(data, &hp, config.exec) {
            Ok((v, mut g)) if v.is_finite() && g.iter().all(|x| x.is_finite()) => {
                if !free_noise {
                    g.truncate(g.len() - 1);
                }
                Some((v, g))
            }
            _ => None,
        }
    };

    let mut theta = to_log(init);
    if !free_noise {
        theta.truncate(theta.len() - 1);
    }
    let (lo, hi) = config.log_bounds;
    let (mut value, mut grad) = match log_marginal_likelihood_with(data, init, config.exec) {
        Ok((v, mut g)) if v.is_finite() => {
            if !free_noise {
                g.truncate(g.len() - 1);
            }
            (v, g)
        }
        Ok(_) => return Err(Error::NonFiniteObjective),
        Err(e) => return Err(e),
    };
    let projected = |theta: &[f64], g: &[f64]| -> Vec<f64> {
        theta
            .iter()
            .zip(g)
            .map(|(&t, &gi)| {
                if (t <= lo && gi < 0.0) || (t >= hi && gi > 0.0) {
                    0.0
                } else {
                    gi
                }
            })
            .collect()
    };
    let full_gradient = |theta: &[f64], g: &[f64]| -> Vec<f64> {
        let mut out = g.to_vec();
        if !free_noise {
            out.push(0.0);
        }
        let _ = theta;
        out
    };

    let mut memory: std::collections::VecDeque<(Vec<f64>, Vec<f64>)> = Default::default();
    let mut converged = false;
    let mut moved = false;
    let mut iterations = 0;
    while iterations < config.max_iters {
        iterations += 1;
        let pg = projected(&theta, &grad);

        // two-loop recursion on the negated objective
        let mut q: Vec<f64> = pg.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, yv) in memory.iter().rev() {
            let rho = 1.0 / dot(yv, s);
            let a = rho * dot(s, &q);
            q.iter_mut().zip(yv).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push((rho, a));
        }
        if let Some((s, yv)) = memory.back() {
            let gamma = dot(s, yv) / dot(yv, yv);
            q.iter_mut().for_each(|qi| *qi *= gamma);
        }
        for ((s, yv), (rho, a)) in memory.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(yv, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut direction: Vec<f64> = q.iter().map(|v| -v).collect();
        if dot(&direction, &pg) <= 0.0 || direction.iter().any(|v| !v.is_finite()) {
            direction = pg.clone();
            memory.clear();
        }
        let norm = direction.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if norm == 0.0 {
            converged = true;
            break;
        }
        if norm > config.max_step {
            direction.iter_mut().for_each(|v| *v *= config.max_step / norm);
        }

        let slope = dot(&direction, &pg);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let trial: Vec<f64> = theta
                .iter()
                .zip(&direction)
                .map(|(t, d)| (t + step * d).clamp(lo, hi))
                .collect();
            if let Some((v, g)) = objective(&trial) {
                if v >= value + 1e-4 * step * slope {
                    accepted = Some((trial, v, g));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((trial, new_value, new_grad)) = accepted else {
            if memory.is_empty() {
                // no ascent possible along the gradient: stationary to
                // working precision
                converged = projected(&theta, &grad)
                    .iter()
                    .all(|g| g.abs() < config.tol_gradient);
                break;
            }
            memory.clear();
            continue;
        };

        let s: Vec<f64> = trial.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| -(a - b)).collect();
        if dot(&s, &yv) > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() {
            memory.push_back((s, yv));
            if memory.len() > config.history {
                memory.pop_front();
            }
        }
        let change = new_value - value;
        moved = true;
        theta = trial;
        value = new_value;
        grad = new_grad;
        let gmax = projected(&theta, &grad)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if change.abs() < config.tol_objective && gmax < config.tol_gradient {
            converged = true;
            break;
        }
    }
    if config.max_iters == 0 {
        iterations = 0;
    }
    let hyperparameters = if moved {
        from_log(&theta, init, free_noise)
    } else {
        init.clone()
    };
    Ok(FitResult {
        hyperparameters,
        log_marginal_likelihood: value,
        iterations,
        converged,
        gradient: full_gradient(&theta, &grad),
    })
}

/// A conditioned GP: training data, hyperparameters and the factorised Gram
/// matrix. Immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct GpModel {
    data: BinnedDataset,
    hp: Hyperparameters,
    chol: Cholesky,
    weights: DVector<f64>,
    jitter: f64,
    exec: Execution,
}

impl GpModel {
    pub fn new(data: BinnedDataset, hp: Hyperparameters) -> Result<Self> {
        Self::with_execution(data, hp, Execution::default())
    }

    pub fn with_execution(data: BinnedDataset, hp: Hyperparameters, exec: Execution) -> Result<Self> {
        check_model(&data, &hp)?;
        let (chol, jitter) = if data.is_empty() {
            (Cholesky::new(&DMatrix::zeros(0, 0)).expect("empty"), 0.0)
        } else {
            let k = build_gram_with(&data, &hp, exec)?;
            Cholesky::with_jitter(&k)
                .ok_or_else(|| ill_conditioned(&hp, "Gram matrix is singular even with jitter"))?
        };
        let weights = chol.solve_vec(&DVector::from_column_slice(data.y()));
        Ok(GpModel {
            data,
            hp,
            chol,
            weights,
            jitter,
            exec,
        })
    }

    pub fn data(&self) -> &BinnedDataset {
        &self.data
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    /// Diagonal jitter that was needed to factorise the Gram matrix.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub(crate) fn factor(&self) -> &Cholesky {
        &self.chol
    }

    /// `K^{-1} y`.
    pub(crate) fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub(crate) fn execution(&self) -> Execution {
        self.exec
    }

    /// Posterior over arbitrary supports (points, boxes, approximations).
    pub fn predict(&self, queries: &[Support]) -> Result<Posterior> {
        for q in queries {
            check_dims(self.hp.dims(), q.dims())?;
        }
        let prior: Vec<f64> = self
            .exec
            .map_slice(queries, |q| prior_variance(q, &self.hp));
        if self.data.is_empty() {
            return Ok(Posterior {
                mean: vec![0.0; queries.len()],
                variance: prior,
            });
        }
        let kfq = cross_matrix(self.data.supports(), queries, &self.hp, self.exec);
        let mean = (kfq.transpose() * &self.weights).iter().copied().collect();
        let v = self.chol.solve_lower(&kfq);
        let variance = prior
            .iter()
            .enumerate()
            .map(|(j, p)| (p - v.column(j).norm_squared()).max(0.0))
            .collect();
        Ok(Posterior { mean, variance })
    }
}

/// Posterior of the latent function at points.
pub fn predict_latent(data: &BinnedDataset, hp: &Hyperparameters, points: &[LatentPoint]) -> Result<Posterior> {
    let queries: Vec<Support> = points.iter().cloned().map(Support::Point).collect();
    GpModel::new(data.clone(), hp.clone())?.predict(&queries)
}

/// Posterior of integrals over new bins.
pub fn predict_integral(
    data: &BinnedDataset,
    hp: &Hyperparameters,
    regions: &[Hyperrectangle],
) -> Result<Posterior> {
    let queries: Vec<Support> = regions.iter().cloned().map(Support::Region).collect();
    GpModel::new(data.clone(), hp.clone())?.predict(&queries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::integral_cov;

    fn rect1(s: f64, t: f64) -> Hyperrectangle {
        Hyperrectangle::from_bounds(&[(s, t)]).unwrap()
    }

    fn robot() -> BinnedDataset {
        BinnedDataset::from_regions(
            vec![rect1(0.0, 8.0), rect1(2.5, 3.5), rect1(4.0, 6.0), rect1(7.0, 8.0)],
            vec![33.47, 3.49, 9.56, 8.27],
        )
        .unwrap()
    }

    #[test]
    fn gram_examples() {
        let hp = Hyperparameters::new(1.0, vec![1.0], 0.0).unwrap();
        let r = rect1(0.0, 1.0);
        let one = BinnedDataset::from_regions(vec![r.clone()], vec![1.0]).unwrap();
        let k = build_gram(&one, &hp).unwrap();
        assert_eq!(k[(0, 0)], integral_cov(&r, &r, &hp).unwrap());

        let two = BinnedDataset::from_regions(vec![r.clone(), r.clone()], vec![1.0, 1.0]).unwrap();
        let k = build_gram(&two, &hp).unwrap();
        assert!(k.iter().all(|v| *v == k[(0, 0)]));

        let hp = Hyperparameters::new(12.9, vec![7.1], 0.6).unwrap();
        let k = build_gram(&robot(), &hp).unwrap();
        assert_eq!(k.shape(), (4, 4));
        assert!(Cholesky::new(&k).is_some());
        assert!(build_gram(&BinnedDataset::empty(1), &hp).is_err());
    }

    #[test]
    fn single_observation_likelihood_closed_form() {
        let hp = Hyperparameters::new(2.0, vec![0.5], 0.3).unwrap();
        let r = rect1(0.0, 1.5);
        let v = integral_cov(&r, &r, &hp).unwrap();
        let data = BinnedDataset::from_regions(vec![r], vec![0.0]).unwrap();
        let (l, _) = log_marginal_likelihood(&data, &hp).unwrap();
        let want = -0.5 * (2.0 * std::f64::consts::PI * (v + 0.3)).ln();
        assert!((l - want).abs() < 1e-14);
    }

    #[test]
    fn singular_gram_is_an_error() {
        let hp = Hyperparameters::new(1.0, vec![1.0], 0.0).unwrap();
        let r = rect1(0.0, 1.0);
        let data = BinnedDataset::from_regions(vec![r.clone(), r], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            log_marginal_likelihood(&data, &hp),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn max_iters_zero_returns_init() {
        let init = Hyperparameters::new(3.0, vec![2.0], 0.4).unwrap();
        let cfg = FitConfig {
            max_iters: 0,
            ..FitConfig::default()
        };
        let res = fit(&robot(), &init, &cfg).unwrap();
        assert_eq!(res.hyperparameters, init);
        assert!(!res.converged);
        assert_eq!(res.iterations, 0);
    }

    #[test]
    fn empty_dataset_predicts_prior() {
        let hp = Hyperparameters::new(2.5, vec![1.0], 0.1).unwrap();
        let post = predict_latent(&BinnedDataset::empty(1), &hp, &[LatentPoint::new(vec![3.0])]).unwrap();
        assert_eq!(post.mean, vec![0.0]);
        assert_eq!(post.variance, vec![2.5]);
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let hp = Hyperparameters::new(12.9, vec![7.1], 0.6).unwrap();
        let post = predict_latent(&robot(), &hp, &[LatentPoint::new(vec![7.1e3])]).unwrap();
        assert!(post.mean[0].abs() < 1e-6);
        assert!((post.variance[0] - 12.9).abs() < 1e-6);
    }

    #[test]
    fn heteroscedastic_scales() {
        let data = robot();
        let same = heteroscedastic_noise(&data, &[1.0; 4], ObservationKind::Mean).unwrap();
        assert_eq!(same.noise_scales().unwrap(), &[1.0; 4]);
        let mixed = heteroscedastic_noise(&data, &[1.0, 4.0, 2.0, 8.0], ObservationKind::Mean).unwrap();
        assert_eq!(mixed.noise_scale(1), 0.25);
        let hp = Hyperparameters::new(1.0, vec![2.0], 0.8).unwrap();
        let k0 = build_gram(&data, &Hyperparameters { noise_variance: 0.0, ..hp.clone() }).unwrap();
        let k = build_gram(&mixed, &hp).unwrap();
        for (i, n) in [1.0, 4.0, 2.0, 8.0].iter().enumerate() {
            assert!((k[(i, i)] - k0[(i, i)] - 0.8 / n).abs() < 1e-15);
        }
        let sums = heteroscedastic_noise(&data, &[3.0; 4], ObservationKind::Sum).unwrap();
        assert_eq!(sums.noise_scales().unwrap(), &[1.0; 4]);
        assert!(heteroscedastic_noise(&data, &[1.0, 0.0, 1.0, 1.0], ObservationKind::Mean).is_err());
    }

    #[test]
    fn undefined_bins_are_dropped() {
        let d = BinnedDataset::from_regions(vec![rect1(0.0, 1.0), rect1(1.0, 2.0)], vec![f64::NAN, 2.0]).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.y(), &[2.0]);
    }
}
