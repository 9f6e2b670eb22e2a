//! Non-negative latent functions through probit "virtual" observations.
//!
//! Each virtual point `v_j` contributes a likelihood `Phi(f(v_j) / nu)`,
//! pushing the latent function above zero there. The integral observations
//! stay Gaussian and are conditioned on exactly; only the probit sites are
//! approximated, by expectation propagation.
//!
//! Internally everything is expressed in the residual `g = f - mu_0` under
//! the data-conditioned prior `N(mu_0, Sigma_0)` over the virtual points, so
//! the EP algebra is the usual zero-mean one with shifted probit arguments.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::gp::{log_marginal_likelihood_with, BinnedDataset, FitResult, GpModel};
use crate::kernel::{Hyperparameters, Hyperrectangle, LatentPoint};
use crate::linalg::Cholesky;
use crate::parallel::Execution;
use crate::special::{inverse_mills, log_normal_cdf, normal_cdf};
use crate::support::{prior_variance, Support};
use crate::gp::{cross_matrix, self_matrix};

/// Probit steepness used when none is given, relative to `sqrt(alpha)`.
pub const DEFAULT_NU: f64 = 1e-2;
pub const DEFAULT_GRID_CAP: usize = 10_000;

/// Locations where the latent function is encouraged to be non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualPoints {
    pub locations: Vec<LatentPoint>,
    /// Probit steepness in units of the prior standard deviation
    /// `sqrt(alpha)`; the likelihood is `Phi(f / (nu * sqrt(alpha)))`.
    pub nu: f64,
}

impl VirtualPoints {
    pub fn new(locations: Vec<LatentPoint>, nu: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidInput(format!("nu must be positive, got {nu}")));
        }
        if let Some(d) = locations.first().map(LatentPoint::dims) {
            for p in &locations {
                check_dims(d, p.dims())?;
            }
        }
        Ok(VirtualPoints { locations, nu })
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// Probit steepness in output units.
    pub fn absolute_nu(&self, hp: &Hyperparameters) -> f64 {
        self.nu * hp.alpha.sqrt()
    }
}

/// Evenly spaced lattice over `domain`, including both endpoints of every
/// axis (a count of one places the midpoint).
pub fn place_virtual_grid(domain: &Hyperrectangle, counts: &[usize]) -> Result<VirtualPoints> {
    place_virtual_grid_capped(domain, counts, DEFAULT_GRID_CAP)
}

pub fn place_virtual_grid_capped(domain: &Hyperrectangle, counts: &[usize], cap: usize) -> Result<VirtualPoints> {
    check_dims(domain.dims(), counts.len())?;
    if counts.contains(&0) {
        return Err(Error::InvalidInput("grid counts must be at least 1".into()));
    }
    let total = counts
        .iter()
        .try_fold(1usize, |acc, &c| acc.checked_mul(c))
        .unwrap_or(usize::MAX);
    if total > cap {
        return Err(Error::VirtualGridTooLarge { requested: total, cap });
    }
    let axes: Vec<Vec<f64>> = domain
        .intervals
        .iter()
        .zip(counts)
        .map(|(iv, &c)| {
            if c == 1 {
                vec![iv.midpoint()]
            } else {
                (0..c)
                    .map(|k| iv.s + (iv.t - iv.s) * k as f64 / (c - 1) as f64)
                    .collect()
            }
        })
        .collect();
    let locations = (0..total)
        .map(|mut j| {
            LatentPoint::new(
                axes.iter()
                    .map(|a| {
                        let v = a[j % a.len()];
                        j /= a.len();
                        v
                    })
                    .collect(),
            )
        })
        .collect();
    VirtualPoints::new(locations, DEFAULT_NU)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EPConfig {
    /// Weight of the new site parameters in each damped update.
    pub damping: f64,
    /// Convergence threshold on the largest (prior-scaled) site change.
    pub tol: f64,
    pub max_sweeps: usize,
    pub exec: Execution,
}

impl Default for EPConfig {
    fn default() -> Self {
        EPConfig {
            damping: 0.8,
            tol: 1e-6,
            max_sweeps: 200,
            exec: Execution::default(),
        }
    }
}

/// Site approximations after EP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EPState {
    /// Log normalising constant of each site.
    pub site_log_z: Vec<f64>,
    /// Site means on the latent (f) scale.
    pub site_mu: Vec<f64>,
    /// Site variances; `+inf` for a site that never received an update.
    pub site_sigma2: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
    /// Site updates skipped because the cavity variance was not positive.
    pub skipped_updates: usize,
    /// EP approximation to `log p(z | y)` at the returned state.
    pub log_z: f64,
    /// `log_z` after every sweep.
    pub log_z_history: Vec<f64>,
    tau: Vec<f64>,
    nu_site: Vec<f64>,
}

impl EPState {
    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedPosterior {
    pub latent_mean: Vec<f64>,
    pub latent_variance: Vec<f64>,
    /// `E[Phi(f / nu)]`, in `[0, 1]`.
    pub link_mean: Vec<f64>,
}

/// `E[Phi(f / nu)]` under `f ~ N(mean, variance)`.
pub fn probit_link(mean: f64, variance: f64, nu: f64) -> f64 {
    normal_cdf(mean / (nu * nu + variance.max(0.0)).sqrt())
}

/// The data-conditioned prior over the virtual points.
struct Conditioned {
    model: GpModel,
    virtual_supports: Vec<Support>,
    mu0: DVector<f64>,
    sigma0: DMatrix<f64>,
    /// `L^{-1} K_FV` with `L` the Gram factor.
    solved_fv: DMatrix<f64>,
}

impl Conditioned {
    fn new(data: &BinnedDataset, hp: &Hyperparameters, vp: &VirtualPoints, exec: Execution) -> Result<Self> {
        for p in &vp.locations {
            check_dims(hp.dims(), p.dims())?;
        }
        let model = GpModel::with_execution(data.clone(), hp.clone(), exec)?;
        let virtual_supports: Vec<Support> = vp.locations.iter().cloned().map(Support::Point).collect();
        let mut sigma0 = self_matrix(&virtual_supports, hp, exec);
        let (mu0, solved_fv) = if data.is_empty() {
            (DVector::zeros(vp.len()), DMatrix::zeros(0, vp.len()))
        } else {
            let kfv = cross_matrix(data.supports(), &virtual_supports, hp, exec);
            let mu0 = kfv.transpose() * model.weights();
            let solved = model.factor().solve_lower(&kfv);
            sigma0 -= solved.transpose() * &solved;
            (mu0, solved)
        };
        Ok(Conditioned {
            model,
            virtual_supports,
            mu0,
            sigma0,
            solved_fv,
        })
    }

    /// Conditioned prior mean at the queries, cross-covariance with the
    /// virtual points (queries x virtual) and prior variances.
    fn queries(&self, queries: &[Support]) -> (DVector<f64>, DMatrix<f64>, Vec<f64>) {
        let hp = self.model.hyperparameters();
        let exec = self.model.execution();
        let data = self.model.data();
        let mut cross = cross_matrix(queries, &self.virtual_supports, hp, exec);
        let mut var: Vec<f64> = exec.map_slice(queries, |q| prior_variance(q, hp));
        let mean = if data.is_empty() {
            DVector::zeros(queries.len())
        } else {
            let kfq = cross_matrix(data.supports(), queries, hp, exec);
            let solved = self.model.factor().solve_lower(&kfq);
            cross -= solved.transpose() * &self.solved_fv;
            for (j, v) in var.iter_mut().enumerate() {
                *v -= solved.column(j).norm_squared();
            }
            kfq.transpose() * self.model.weights()
        };
        (mean, cross, var)
    }
}

/// Posterior over the residuals given site natural parameters.
struct SitePosterior {
    sigma: DMatrix<f64>,
    mu: DVector<f64>,
    /// Factor of `B = I + S^1/2 Sigma_0 S^1/2`.
    chol_b: Cholesky,
    sqrt_tau: DVector<f64>,
}

fn site_posterior(sigma0: &DMatrix<f64>, tau: &[f64], nu_site: &[f64]) -> Result<SitePosterior> {
    let m = tau.len();
    let sqrt_tau = DVector::from_iterator(m, tau.iter().map(|t| t.max(0.0).sqrt()));
    let mut b = DMatrix::identity(m, m);
    for i in 0..m {
        for j in 0..m {
            b[(i, j)] += sqrt_tau[i] * sigma0[(i, j)] * sqrt_tau[j];
        }
    }
    let (chol_b, _) = Cholesky::with_jitter(&b)
        .ok_or_else(|| Error::InvalidInput("EP site system is not positive definite".into()))?;
    let mut scaled = sigma0.clone();
    for i in 0..m {
        scaled.row_mut(i).scale_mut(sqrt_tau[i]);
    }
    let v = chol_b.solve_lower(&scaled);
    let sigma = sigma0 - v.transpose() * v;
    let mu = &sigma * DVector::from_column_slice(nu_site);
    Ok(SitePosterior {
        sigma,
        mu,
        chol_b,
        sqrt_tau,
    })
}

/// Cavity natural parameters `(tau, nu)` of site `i`.
fn cavity(post: &SitePosterior, tau: &[f64], nu_site: &[f64], i: usize) -> (f64, f64) {
    let s = post.sigma[(i, i)];
    (1.0 / s - tau[i], post.mu[i] / s - nu_site[i])
}

/// EP approximation of `log int prod_j Phi(f_j / nu) N(f; mu_0, Sigma_0) df`.
fn ep_log_z(post: &SitePosterior, tau: &[f64], nu_site: &[f64], mu0: &DVector<f64>, nu: f64) -> f64 {
    let m = tau.len();
    if m == 0 {
        return 0.0;
    }
    let nu_vec = DVector::from_column_slice(nu_site);
    let mut total = -post.chol_b.log_det() / 2.0 + nu_vec.dot(&(&post.sigma * &nu_vec)) / 2.0;
    for i in 0..m {
        let (tc, nc) = cavity(post, tau, nu_site, i);
        if tc.is_nan() || tc <= 0.0 {
            return f64::NAN;
        }
        let z = (nc / tc + mu0[i]) / (nu * nu + 1.0 / tc).sqrt();
        total += log_normal_cdf(z);
        total += nc * ((tau[i] / tc * nc - 2.0 * nu_site[i]) / (tau[i] + tc)) / 2.0;
        total -= nu_site[i] * nu_site[i] / (tc + tau[i]) / 2.0;
        total += (1.0 + tau[i] / tc).ln() / 2.0;
    }
    total
}

fn ep_iterate(cond: &Conditioned, nu: f64, cfg: &EPConfig) -> Result<EPState> {
    let m = cond.mu0.len();
    let mut tau = vec![0.0f64; m];
    let mut nu_site = vec![0.0f64; m];
    let mut sigma = cond.sigma0.clone();
    let mut mu = DVector::<f64>::zeros(m);
    let mut skipped = 0;
    let mut history = Vec::new();
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut converged = m == 0;
    let mut sweeps = 0;

    while !converged && sweeps < cfg.max_sweeps {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for i in 0..m {
            let s_ii = sigma[(i, i)];
            let tc = 1.0 / s_ii - tau[i];
            let nc = mu[i] / s_ii - nu_site[i];
            if tc.is_nan() || tc <= 0.0 {
                skipped += 1;
                continue;
            }
            let var_c = 1.0 / tc;
            let mean_c = nc * var_c;
            let denom2 = nu * nu + var_c;
            let denom = denom2.sqrt();
            let z = (mean_c + cond.mu0[i]) / denom;
            let r = inverse_mills(z);
            let mean_hat = mean_c + var_c * r / denom;
            let q = r * (z + r);
            let var_hat = var_c - var_c * var_c * q / denom2;
            if !(var_hat > 0.0 && var_hat.is_finite()) {
                skipped += 1;
                continue;
            }
            // 1/var_hat - 1/var_c without the cancellation for large z
            let tau_target = q / (denom2 - var_c * q);
            let nu_target = mean_hat / var_hat - nc;
            let tau_new = (cfg.damping * tau_target + (1.0 - cfg.damping) * tau[i]).max(0.0);
            let nu_new = cfg.damping * nu_target + (1.0 - cfg.damping) * nu_site[i];
            let d_tau = tau_new - tau[i];
            let s0 = cond.sigma0[(i, i)];
            max_change = max_change.max(d_tau.abs() * s0 + (nu_new - nu_site[i]).abs() * s0.sqrt());
            tau[i] = tau_new;
            nu_site[i] = nu_new;

            // rank-one update of the posterior covariance
            let col = sigma.column(i).clone_owned();
            let k = d_tau / (1.0 + d_tau * s_ii);
            sigma.ger(-k, &col, &col, 1.0);
            mu = &sigma * DVector::from_column_slice(&nu_site);
        }

        // refresh from scratch to stop rounding drift
        let post = site_posterior(&cond.sigma0, &tau, &nu_site)?;
        let log_z = ep_log_z(&post, &tau, &nu_site, &cond.mu0, nu);
        history.push(log_z);
        if log_z.is_finite() && best.as_ref().is_none_or(|b| log_z >= b.0) {
            best = Some((log_z, tau.clone(), nu_site.clone()));
        }
        sigma = post.sigma;
        mu = post.mu;
        converged = max_change < cfg.tol;
    }

    if !converged {
        if let Some((_, t, n)) = best {
            tau = t;
            nu_site = n;
        }
    }
    let post = site_posterior(&cond.sigma0, &tau, &nu_site)?;
    let log_z = ep_log_z(&post, &tau, &nu_site, &cond.mu0, nu);
    let mut site_log_z = Vec::with_capacity(m);
    let mut site_mu = Vec::with_capacity(m);
    let mut site_sigma2 = Vec::with_capacity(m);
    for i in 0..m {
        if tau[i] > 0.0 {
            let (tc, nc) = cavity(&post, &tau, &nu_site, i);
            let (var_c, mean_c) = (1.0 / tc, nc / tc);
            let (var_s, mean_s) = (1.0 / tau[i], nu_site[i] / tau[i]);
            let z = (mean_c + cond.mu0[i]) / (nu * nu + var_c).sqrt();
            site_log_z.push(
                log_normal_cdf(z)
                    + 0.5 * (2.0 * std::f64::consts::PI * (var_c + var_s)).ln()
                    + (mean_c - mean_s).powi(2) / (2.0 * (var_c + var_s)),
            );
            site_mu.push(mean_s + cond.mu0[i]);
            site_sigma2.push(var_s);
        } else {
            site_log_z.push(0.0);
            site_mu.push(cond.mu0[i]);
            site_sigma2.push(f64::INFINITY);
        }
    }
    Ok(EPState {
        site_log_z,
        site_mu,
        site_sigma2,
        converged,
        sweeps,
        skipped_updates: skipped,
        log_z,
        log_z_history: history,
        tau,
        nu_site,
    })
}

fn predict_from_state(
    cond: &Conditioned,
    state: &EPState,
    queries: &[Support],
    nu: f64,
) -> Result<ConstrainedPosterior> {
    let (mean0, cross, var0) = cond.queries(queries);
    let m = state.len();
    let (latent_mean, latent_variance): (Vec<f64>, Vec<f64>) = if m == 0 {
        (mean0.iter().copied().collect(), var0.iter().map(|v| v.max(0.0)).collect())
    } else {
        let post = site_posterior(&cond.sigma0, &state.tau, &state.nu_site)?;
        let nu_vec = DVector::from_column_slice(&state.nu_site);
        // weights = nu - S^1/2 B^{-1} S^1/2 Sigma_0 nu
        let inner = (&cond.sigma0 * &nu_vec).component_mul(&post.sqrt_tau);
        let solved = post.chol_b.solve_vec(&inner).component_mul(&post.sqrt_tau);
        let weights = nu_vec - solved;
        let mean = mean0 + &cross * weights;
        let mut scaled = cross.transpose();
        for i in 0..m {
            scaled.row_mut(i).scale_mut(post.sqrt_tau[i]);
        }
        let v = post.chol_b.solve_lower(&scaled);
        let var = var0
            .iter()
            .enumerate()
            .map(|(j, p)| (p - v.column(j).norm_squared()).max(0.0))
            .collect();
        (mean.iter().copied().collect(), var)
    };
    let link_mean = latent_mean
        .iter()
        .zip(&latent_variance)
        .map(|(m, v)| probit_link(*m, *v, nu))
        .collect();
    Ok(ConstrainedPosterior {
        latent_mean,
        latent_variance,
        link_mean,
    })
}

/// Runs EP over the virtual-point sites and returns the state together with
/// the approximate posterior at the virtual points.
pub fn ep_fit(
    data: &BinnedDataset,
    hp: &Hyperparameters,
    vp: &VirtualPoints,
    cfg: &EPConfig,
) -> Result<(EPState, ConstrainedPosterior)> {
    let cond = Conditioned::new(data, hp, vp, cfg.exec)?;
    let nu = vp.absolute_nu(hp);
    let state = ep_iterate(&cond, nu, cfg)?;
    let post = predict_from_state(&cond, &state, &cond.virtual_supports, nu)?;
    Ok((state, post))
}

/// Constrained posterior at arbitrary supports (latent points or bins).
pub fn predict_constrained(
    state: &EPState,
    data: &BinnedDataset,
    hp: &Hyperparameters,
    vp: &VirtualPoints,
    queries: &[Support],
) -> Result<ConstrainedPosterior> {
    if state.len() != vp.len() {
        return Err(Error::InvalidInput(format!(
            "EP state has {} sites but {} virtual points were given",
            state.len(),
            vp.len()
        )));
    }
    for q in queries {
        check_dims(hp.dims(), q.dims())?;
    }
    let cond = Conditioned::new(data, hp, vp, Execution::default())?;
    predict_from_state(&cond, state, queries, vp.absolute_nu(hp))
}

/// `log p(y) + log p(z | y)`: the Gaussian evidence of the bins plus the EP
/// estimate for the virtual observations.
pub fn ep_log_evidence(data: &BinnedDataset, hp: &Hyperparameters, vp: &VirtualPoints, cfg: &EPConfig) -> Result<f64> {
    let (gaussian, _) = log_marginal_likelihood_with(data, hp, cfg.exec)?;
    let (state, _) = ep_fit(data, hp, vp, cfg)?;
    Ok(gaussian + state.log_z)
}

/// Maximises [`ep_log_evidence`] with a Nelder-Mead simplex over the
/// log-hyperparameters (the noise variance stays fixed when it is zero).
pub fn fit_constrained(
    data: &BinnedDataset,
    init: &Hyperparameters,
    vp: &VirtualPoints,
    cfg: &EPConfig,
    max_evals: usize,
) -> Result<FitResult> {
    init.validate()?;
    let free_noise = init.noise_variance > 0.0;
    let d = init.dims();
    let unpack = |x: &[f64]| Hyperparameters {
        alpha: x[0].exp(),
        lengthscales: x[1..=d].iter().map(|v| v.exp()).collect(),
        noise_variance: if free_noise { x[d + 1].exp() } else { init.noise_variance },
    };
    let objective = |x: &[f64]| -> f64 {
        if x.iter().any(|v| v.abs() > 30.0) {
            return f64::NEG_INFINITY;
        }
        ep_log_evidence(data, &unpack(x), vp, cfg)
            .ok()
            .filter(|v| v.is_finite())
            .unwrap_or(f64::NEG_INFINITY)
    };
    let mut x0 = vec![init.alpha.ln()];
    x0.extend(init.lengthscales.iter().map(|l| l.ln()));
    if free_noise {
        x0.push(init.noise_variance.ln());
    }
    let start = objective(&x0);
    if !start.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let (x, value, evals, converged) = nelder_mead(objective, x0, start, 0.5, 1e-6, max_evals);
    Ok(FitResult {
        hyperparameters: unpack(&x),
        log_marginal_likelihood: value,
        iterations: evals,
        converged,
        gradient: Vec::new(),
    })
}

/// Maximises `f` from `x0`. Returns `(x, f(x), evaluations, converged)`.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: Vec<f64>,
    f0: f64,
    step: f64,
    tol: f64,
    max_evals: usize,
) -> (Vec<f64>, f64, usize, bool) {
    let n = x0.len();
    let mut simplex = vec![(x0.clone(), f0)];
    let mut evals = 1;
    for k in 0..n {
        let mut x = x0.clone();
        x[k] += step;
        let v = f(&x);
        evals += 1;
        simplex.push((x, v));
    }
    let mut converged = false;
    let blend = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
    };
    while evals < max_evals {
        simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
        let (best, worst) = (simplex[0].1, simplex[n].1);
        if (best - worst).abs() < tol {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|p| p.0[k]).sum::<f64>() / n as f64)
            .collect();
        let reflected = blend(&centroid, &simplex[n].0, -1.0);
        let fr = f(&reflected);
        evals += 1;
        if fr > best {
            let expanded = blend(&centroid, &simplex[n].0, -2.0);
            let fe = f(&expanded);
            evals += 1;
            simplex[n] = if fe > fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr > simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let contracted = blend(&centroid, &simplex[n].0, 0.5);
            let fc = f(&contracted);
            evals += 1;
            if fc > worst {
                simplex[n] = (contracted, fc);
            } else {
                let anchor = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    p.0 = blend(&anchor, &p.0, 0.5);
                    p.1 = f(&p.0);
                    evals += 1;
                }
            }
        }
    }
    simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
    let (x, v) = simplex.swap_remove(0);
    (x, v, evals, converged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::predict_latent;

    fn rect1(s: f64, t: f64) -> Hyperrectangle {
        Hyperrectangle::from_bounds(&[(s, t)]).unwrap()
    }

    #[test]
    fn grids() {
        let g = place_virtual_grid(&rect1(0.0, 10.0), &[3]).unwrap();
        let xs: Vec<f64> = g.locations.iter().map(|p| p.coords[0]).collect();
        assert_eq!(xs, vec![0.0, 5.0, 10.0]);
        let g = place_virtual_grid(&rect1(0.0, 52.0), &[53]).unwrap();
        assert!(g.locations.iter().enumerate().all(|(i, p)| p.coords[0] == i as f64));
        let sq = Hyperrectangle::from_bounds(&[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let g = place_virtual_grid(&sq, &[2, 2]).unwrap();
        assert_eq!(g.len(), 4);
        assert!(matches!(
            place_virtual_grid(&sq, &[101, 100]),
            Err(Error::VirtualGridTooLarge { .. })
        ));
    }

    #[test]
    fn link_symmetry_and_saturation() {
        assert_eq!(probit_link(0.0, 3.0, 0.1), 0.5);
        assert!(probit_link(1e6, 1.0, 0.1) > 1.0 - 1e-12);
    }

    #[test]
    fn no_sites_is_exact_gp() {
        let data = BinnedDataset::from_regions(
            vec![rect1(0.0, 2.0), rect1(2.0, 4.0), rect1(5.0, 6.0)],
            vec![1.0, -3.0, 0.5],
        )
        .unwrap();
        let hp = Hyperparameters::new(1.5, vec![1.2], 0.1).unwrap();
        let vp = VirtualPoints::new(Vec::new(), DEFAULT_NU).unwrap();
        let (state, _) = ep_fit(&data, &hp, &vp, &EPConfig::default()).unwrap();
        assert!(state.converged);
        let pts: Vec<LatentPoint> = (0..7).map(|i| LatentPoint::new(vec![i as f64])).collect();
        let queries: Vec<Support> = pts.iter().cloned().map(Support::Point).collect();
        let c = predict_constrained(&state, &data, &hp, &vp, &queries).unwrap();
        let exact = predict_latent(&data, &hp, &pts).unwrap();
        for i in 0..pts.len() {
            assert!((c.latent_mean[i] - exact.mean[i]).abs() < 1e-8);
            assert!((c.latent_variance[i] - exact.variance[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn single_site_log_z_is_exact() {
        // With one site EP is exact: log Z = log Phi(mu0 / sqrt(nu^2 + s0)).
        let data = BinnedDataset::from_regions(vec![rect1(0.0, 1.0)], vec![-0.4]).unwrap();
        let hp = Hyperparameters::new(1.0, vec![1.0], 0.05).unwrap();
        let vp = VirtualPoints::new(vec![LatentPoint::new(vec![0.5])], 0.3).unwrap();
        let (state, post) = ep_fit(&data, &hp, &vp, &EPConfig::default()).unwrap();
        assert!(state.converged);
        let prior = predict_latent(&data, &hp, &vp.locations).unwrap();
        let want = log_normal_cdf(prior.mean[0] / (0.09 + prior.variance[0]).sqrt());
        assert!((state.log_z - want).abs() < 1e-8, "{} vs {want}", state.log_z);
        assert!(post.latent_mean[0] > prior.mean[0]);
    }
}
