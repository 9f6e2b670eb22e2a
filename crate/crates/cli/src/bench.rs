//! Method comparison on synthetic scenarios.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use binned_gp::gp::{default_init, fit, BinnedDataset, FitConfig, GpModel};
use binned_gp::nonneg::{ep_fit, place_virtual_grid, predict_constrained, EPConfig};
use binned_gp::polytope::{fill_rectangles, sample_points, Polytope, Region, RegionApproximation};
use binned_gp::{Execution, Hyperparameters, Support};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::CliError;
use crate::scenarios::{generate, rebuild, BinnedProblem, PolygonProblem, Problem, Scenario, SynthOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Bin density read off and scaled to the query.
    Simple,
    /// Ordinary GP on bin centroids with density targets.
    Centroid,
    Integral,
    /// Integral kernel with virtual-point non-negativity; negative
    /// observations are clamped to zero first.
    Nonneg,
    Points,
    Rectangles,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Simple,
        Method::Centroid,
        Method::Integral,
        Method::Nonneg,
        Method::Points,
        Method::Rectangles,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Simple => "simple",
            Method::Centroid => "centroid",
            Method::Integral => "integral",
            Method::Nonneg => "nonneg",
            Method::Points => "points",
            Method::Rectangles => "rectangles",
        }
    }

    /// Methods a scenario can run when none are requested explicitly.
    pub fn defaults_for(scenario: Scenario) -> Vec<Method> {
        match scenario {
            Scenario::Histogram => vec![Method::Simple, Method::Centroid, Method::Integral, Method::Nonneg],
            Scenario::Polygons => vec![Method::Simple, Method::Centroid, Method::Points, Method::Rectangles],
            Scenario::Audience => vec![Method::Simple, Method::Centroid, Method::Integral],
            Scenario::Robot | Scenario::Sampled => vec![Method::Simple, Method::Centroid, Method::Integral],
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let known: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
            CliError::Usage(format!("unknown method '{s}' (expected one of {})", known.join(", ")))
        })
    }
}

#[derive(Debug, Clone)]
pub struct MethodOptions {
    pub max_iters: usize,
    /// Virtual points per dimension for the non-negative method; `None`
    /// picks 53 in one dimension and fewer per axis above that.
    pub virtual_grid: Option<usize>,
    /// Points per polygon for the point method.
    pub density: usize,
    /// Rectangles per polygon for the rectangle method.
    pub rects: usize,
    pub exec: Execution,
}

impl Default for MethodOptions {
    fn default() -> Self {
        MethodOptions {
            max_iters: FitConfig::default().max_iters,
            virtual_grid: None,
            density: 8,
            rects: 8,
            exec: Execution::default(),
        }
    }
}

impl MethodOptions {
    fn fit_config(&self) -> FitConfig {
        FitConfig {
            max_iters: self.max_iters,
            exec: self.exec,
            ..FitConfig::default()
        }
    }

    fn virtual_counts(&self, dims: usize) -> Vec<usize> {
        let per_axis = self
            .virtual_grid
            .unwrap_or_else(|| (53f64.powf(1.0 / dims as f64).floor() as usize).max(2));
        vec![per_axis; dims]
    }
}

/// Point predictions, with variances when the method has them.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub variance: Option<Vec<f64>>,
}

fn not_applicable(method: Method, what: &str) -> CliError {
    CliError::Usage(format!("method '{method}' does not apply to {what}"))
}

fn fitted_hyperparameters(data: &BinnedDataset, opts: &MethodOptions) -> Result<Hyperparameters, CliError> {
    Ok(fit(data, &default_init(data)?, &opts.fit_config())?.hyperparameters)
}

/// Density of the observation whose support contains `x`, if any.
fn read_off(data: &BinnedDataset, x: &[f64]) -> Option<f64> {
    data.supports()
        .iter()
        .zip(data.y())
        .find(|(s, _)| s.bounds().iter().zip(x).all(|((lo, hi), v)| v >= lo && v <= hi))
        .map(|(s, y)| y / s.volume())
}

fn mean_density(data: &BinnedDataset) -> f64 {
    let vol: f64 = data.supports().iter().map(Support::volume).sum();
    data.y().iter().sum::<f64>() / vol
}

pub fn predict_binned(method: Method, p: &BinnedProblem, opts: &MethodOptions) -> Result<Prediction, CliError> {
    match method {
        Method::Simple => {
            let fallback = mean_density(&p.data);
            let mean = p
                .queries
                .iter()
                .map(|q| read_off(&p.data, &q.centroid().coords).unwrap_or(fallback) * q.volume())
                .collect();
            Ok(Prediction { mean, variance: None })
        }
        Method::Centroid => {
            let centroids = p.data.to_centroids()?;
            let hp = fitted_hyperparameters(&centroids, opts)?;
            let model = GpModel::with_execution(centroids, hp, opts.exec)?;
            let points: Vec<Support> = p.queries.iter().map(|q| Support::Point(q.centroid())).collect();
            let post = model.predict(&points)?;
            let vol: Vec<f64> = p.queries.iter().map(Support::volume).collect();
            Ok(Prediction {
                mean: post.mean.iter().zip(&vol).map(|(m, v)| m * v).collect(),
                variance: Some(post.variance.iter().zip(&vol).map(|(s, v)| s * v * v).collect()),
            })
        }
        Method::Integral => {
            let hp = fitted_hyperparameters(&p.data, opts)?;
            let post = GpModel::with_execution(p.data.clone(), hp, opts.exec)?.predict(&p.queries)?;
            Ok(Prediction {
                mean: post.mean,
                variance: Some(post.variance),
            })
        }
        Method::Nonneg => {
            let clamped = rebuild(&p.data, p.data.y().iter().map(|y| y.max(0.0)).collect())?;
            let hp = fitted_hyperparameters(&clamped, opts)?;
            let vp = place_virtual_grid(&p.domain, &opts.virtual_counts(p.domain.dims()))?;
            let cfg = EPConfig {
                exec: opts.exec,
                ..EPConfig::default()
            };
            let (state, _) = ep_fit(&clamped, &hp, &vp, &cfg)?;
            let post = predict_constrained(&state, &clamped, &hp, &vp, &p.queries)?;
            Ok(Prediction {
                mean: post.latent_mean,
                variance: Some(post.latent_variance),
            })
        }
        Method::Points | Method::Rectangles => Err(not_applicable(method, "rectangular bins")),
    }
}

/// Rasterisation used by the rectangle method: at least 16 cells per axis
/// and two per requested rectangle.
pub fn rectangle_grid(n: usize) -> usize {
    16.max(2 * n)
}

fn approximate<R: Rng + ?Sized>(
    method: Method,
    area: &Polytope,
    opts: &MethodOptions,
    rng: &mut R,
) -> Result<RegionApproximation, CliError> {
    Ok(match method {
        Method::Points => sample_points(area, opts.density, rng)?,
        _ => fill_rectangles(area, opts.rects, rectangle_grid(opts.rects))?,
    })
}

/// Area indices of each observed group, recovered by matching simplexes.
fn group_members(p: &PolygonProblem) -> Vec<usize> {
    let mut owner = vec![0; p.tests.len()];
    for (a, area) in p.tests.iter().enumerate() {
        let first = &area.simplexes()[0];
        if let Some(g) = p.regions.iter().position(|r| r.simplexes().contains(first)) {
            owner[a] = g;
        }
    }
    owner
}

pub fn predict_polygons<R: Rng + ?Sized>(
    method: Method,
    p: &PolygonProblem,
    opts: &MethodOptions,
    rng: &mut R,
) -> Result<Prediction, CliError> {
    let dims = p.tests.first().map_or(2, Region::dims);
    match method {
        Method::Simple => {
            let owner = group_members(p);
            let mean = owner.iter().map(|&g| p.y[g] / p.regions[g].volume()).collect();
            Ok(Prediction { mean, variance: None })
        }
        Method::Centroid => {
            let centroid = |r: &Polytope| Support::Point(Support::Approx(Arc::new(centroid_approx(r))).centroid());
            let supports = p.regions.iter().map(centroid).collect();
            let y = p.y.iter().zip(&p.regions).map(|(y, r)| y / r.volume()).collect();
            let data = BinnedDataset::new(dims, supports, y)?;
            let hp = fitted_hyperparameters(&data, opts)?;
            let queries: Vec<Support> = p.tests.iter().map(centroid).collect();
            let post = GpModel::with_execution(data, hp, opts.exec)?.predict(&queries)?;
            Ok(Prediction {
                mean: post.mean,
                variance: Some(post.variance),
            })
        }
        Method::Points | Method::Rectangles => {
            let owner = group_members(p);
            let approx = p
                .tests
                .iter()
                .map(|a| approximate(method, a, opts, rng).map(Arc::new))
                .collect::<Result<Vec<_>, _>>()?;
            let mut supports = Vec::with_capacity(p.regions.len());
            for g in 0..p.regions.len() {
                let parts: Vec<RegionApproximation> = (0..p.tests.len())
                    .filter(|&a| owner[a] == g)
                    .map(|a| (*approx[a]).clone())
                    .collect();
                supports.push(Support::Approx(Arc::new(RegionApproximation::union(&parts)?)));
            }
            let data = BinnedDataset::new(dims, supports, p.y.clone())?;
            let hp = fitted_hyperparameters(&data, opts)?;
            let queries: Vec<Support> = approx.into_iter().map(Support::Approx).collect();
            let post = GpModel::with_execution(data, hp, opts.exec)?.predict(&queries)?;
            let vol: Vec<f64> = queries.iter().map(Support::volume).collect();
            Ok(Prediction {
                mean: post.mean.iter().zip(&vol).map(|(m, v)| m / v).collect(),
                variance: Some(post.variance.iter().zip(&vol).map(|(s, v)| s / (v * v)).collect()),
            })
        }
        Method::Integral | Method::Nonneg => Err(not_applicable(method, "polygon regions")),
    }
}

/// Exact centroid of a polytope as a single volume-weighted point.
fn centroid_approx(r: &Polytope) -> RegionApproximation {
    let d = r.dims();
    let mut c = vec![0.0; d];
    for s in r.simplexes() {
        let w = s.volume() / r.volume();
        for (ck, sk) in c.iter_mut().zip(s.centroid()) {
            *ck += w * sk;
        }
    }
    RegionApproximation::from_points(vec![c], r.volume()).expect("a polytope has positive volume")
}

pub fn predict<R: Rng + ?Sized>(
    method: Method,
    problem: &Problem,
    opts: &MethodOptions,
    rng: &mut R,
) -> Result<Prediction, CliError> {
    match problem {
        Problem::Binned(p) => predict_binned(method, p, opts),
        Problem::Polygons(p) => predict_polygons(method, p, opts, rng),
    }
}

pub fn truth(problem: &Problem) -> &[f64] {
    match problem {
        Problem::Binned(p) => &p.truth,
        Problem::Polygons(p) => &p.truth,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    /// Fraction of truths inside the 95% interval; `None` without variances.
    pub coverage: Option<f64>,
}

pub fn score(pred: &Prediction, truth: &[f64]) -> Metrics {
    let n = truth.len() as f64;
    let err: Vec<f64> = pred.mean.iter().zip(truth).map(|(m, t)| m - t).collect();
    let rmse = (err.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let mae = err.iter().map(|e| e.abs()).sum::<f64>() / n;
    let coverage = pred.variance.as_ref().map(|var| {
        let inside = err
            .iter()
            .zip(var)
            .filter(|(e, v)| e.abs() <= 1.96 * v.max(0.0).sqrt())
            .count();
        inside as f64 / n
    });
    Metrics { rmse, mae, coverage }
}

/// Mean over repeats with a percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

pub const DEFAULT_BOOTSTRAP: usize = 10_000;

pub fn bootstrap_mean<R: Rng + ?Sized>(values: &[f64], resamples: usize, rng: &mut R) -> Estimate {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 || resamples == 0 {
        return Estimate {
            mean,
            lower: mean,
            upper: mean,
        };
    }
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * resamples as f64) as usize).min(resamples - 1)];
    Estimate {
        mean,
        lower: at(0.025),
        upper: at(0.975),
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub scenario: Scenario,
    pub methods: Vec<Method>,
    pub repeats: usize,
    pub seed: u64,
    pub epsilon: Option<f64>,
    pub bootstrap: usize,
    pub options: MethodOptions,
}

impl BenchConfig {
    pub fn new(scenario: Scenario) -> Self {
        BenchConfig {
            scenario,
            methods: Method::defaults_for(scenario),
            repeats: 10,
            seed: 0,
            epsilon: None,
            bootstrap: DEFAULT_BOOTSTRAP,
            options: MethodOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: Method,
    pub rmse: Estimate,
    pub mae: Estimate,
    pub coverage: Option<Estimate>,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub scenario: Scenario,
    pub methods: Vec<Method>,
    /// `per_repeat[r][m]` scores method `methods[m]` on repeat `r`.
    pub per_repeat: Vec<Vec<Metrics>>,
    pub summary: Vec<MethodSummary>,
}

/// RNG for repeat `r`: stream `r` of the ChaCha generator keyed by `seed`.
pub fn repeat_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    rng
}

fn run_repeat(cfg: &BenchConfig, r: usize) -> Result<Vec<Metrics>, CliError> {
    let mut data_rng = repeat_rng(cfg.seed, r);
    let problem = generate(cfg.scenario, &SynthOptions { epsilon: cfg.epsilon }, &mut data_rng)?;
    let truth = truth(&problem);
    cfg.methods
        .iter()
        .map(|&m| {
            // every method sees the same randomness regardless of the list order
            let mut method_rng = repeat_rng(cfg.seed.wrapping_add(1), r);
            Ok(score(&predict(m, &problem, &cfg.options, &mut method_rng)?, truth))
        })
        .collect()
}

#[cfg(feature = "parallel")]
fn run_repeats(cfg: &BenchConfig) -> Vec<Result<Vec<Metrics>, CliError>> {
    use rayon::prelude::*;
    (0..cfg.repeats).into_par_iter().map(|r| run_repeat(cfg, r)).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_repeats(cfg: &BenchConfig) -> Vec<Result<Vec<Metrics>, CliError>> {
    (0..cfg.repeats).map(|r| run_repeat(cfg, r)).collect()
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport, CliError> {
    if cfg.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    if cfg.methods.is_empty() {
        return Err(CliError::Usage("no methods selected".into()));
    }
    let per_repeat = run_repeats(cfg).into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut boot_rng = repeat_rng(cfg.seed, usize::MAX);
    let summary = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(m, &method)| {
            let col = |f: &dyn Fn(&Metrics) -> Option<f64>| -> Option<Vec<f64>> {
                per_repeat.iter().map(|row| f(&row[m])).collect()
            };
            let rmse = col(&|x| Some(x.rmse)).unwrap_or_default();
            let mae = col(&|x| Some(x.mae)).unwrap_or_default();
            MethodSummary {
                method,
                rmse: bootstrap_mean(&rmse, cfg.bootstrap, &mut boot_rng),
                mae: bootstrap_mean(&mae, cfg.bootstrap, &mut boot_rng),
                coverage: col(&|x| x.coverage).map(|c| bootstrap_mean(&c, cfg.bootstrap, &mut boot_rng)),
            }
        })
        .collect();
    Ok(BenchReport {
        scenario: cfg.scenario,
        methods: cfg.methods.clone(),
        per_repeat,
        summary,
    })
}

impl BenchReport {
    /// Fraction of repeats in which `better` has a smaller value of `key`
    /// than `worse`.
    pub fn win_rate(&self, better: Method, worse: Method, key: fn(&Metrics) -> f64) -> Option<f64> {
        let b = self.methods.iter().position(|m| *m == better)?;
        let w = self.methods.iter().position(|m| *m == worse)?;
        let wins = self.per_repeat.iter().filter(|row| key(&row[b]) < key(&row[w])).count();
        Some(wins as f64 / self.per_repeat.len() as f64)
    }

    /// Tab-separated table, one row per method.
    pub fn to_table(&self) -> String {
        let mut out = String::from("method\trmse\trmse_lo\trmse_hi\tmae\tmae_lo\tmae_hi\tcoverage\tcoverage_lo\tcoverage_hi\n");
        for s in &self.summary {
            let cov = match s.coverage {
                Some(c) => format!("{:.4}\t{:.4}\t{:.4}", 100.0 * c.mean, 100.0 * c.lower, 100.0 * c.upper),
                None => "-\t-\t-".into(),
            };
            out.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
                s.method, s.rmse.mean, s.rmse.lower, s.rmse.upper, s.mae.mean, s.mae.lower, s.mae.upper, cov
            ));
        }
        out
    }
}
