//! Synthetic datasets for the reproduction experiments.
//!
//! Every generator draws from the supplied RNG only, so a seeded ChaCha
//! stream reproduces a scenario exactly.

use std::fmt;
use std::str::FromStr;

use binned_gp::gp::{self_matrix, BinnedDataset};
use binned_gp::linalg::Cholesky;
use binned_gp::polytope::{simplex_quadrature, Polytope, Region};
use binned_gp::privacy::{privatize, DPConfig};
use binned_gp::{Execution, Hyperparameters, Hyperrectangle, LatentPoint, Support};
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal, StandardNormal};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    Robot,
    Histogram,
    Audience,
    Polygons,
    /// Bins and test points drawn jointly from the GP prior.
    Sampled,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Robot,
        Scenario::Histogram,
        Scenario::Audience,
        Scenario::Polygons,
        Scenario::Sampled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Robot => "robot",
            Scenario::Histogram => "histogram",
            Scenario::Audience => "audience",
            Scenario::Polygons => "polygons",
            Scenario::Sampled => "sampled",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Scenario::ALL.iter().map(|s| s.name()).collect();
                CliError::Usage(format!("unknown scenario '{s}' (expected one of {})", known.join(", ")))
            })
    }
}

/// A binned training set with held-out queries and their true values.
///
/// A `Point` query is scored against the latent function; a `Region` query
/// against the true integral (a count, for population scenarios).
#[derive(Debug, Clone)]
pub struct BinnedProblem {
    pub data: BinnedDataset,
    pub queries: Vec<Support>,
    pub truth: Vec<f64>,
    /// Box over which virtual points are placed for the non-negative method.
    pub domain: Hyperrectangle,
}

/// Observations over unions of polygons, scored on the mean density of each
/// individual polygon.
#[derive(Debug, Clone)]
pub struct PolygonProblem {
    pub regions: Vec<Polytope>,
    pub y: Vec<f64>,
    pub tests: Vec<Polytope>,
    pub truth: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum Problem {
    Binned(BinnedProblem),
    Polygons(PolygonProblem),
}

#[derive(Debug, Clone, Default)]
pub struct SynthOptions {
    /// Privacy budget for the Laplace mechanism; `None` leaves counts exact.
    pub epsilon: Option<f64>,
}

pub fn generate<R: Rng + ?Sized>(scenario: Scenario, opts: &SynthOptions, rng: &mut R) -> Result<Problem, CliError> {
    let mut problem = match scenario {
        Scenario::Robot => Problem::Binned(robot(rng)?),
        Scenario::Histogram => Problem::Binned(histogram(rng)?),
        Scenario::Audience => Problem::Binned(audience(rng)?),
        Scenario::Polygons => Problem::Polygons(polygons(rng)?),
        Scenario::Sampled => Problem::Binned(sampled(rng)?),
    };
    if let Some(eps) = opts.epsilon {
        let cfg = DPConfig::new(eps)?;
        match &mut problem {
            Problem::Binned(p) => {
                let y = privatize(p.data.y(), &cfg, rng)?;
                p.data = rebuild(&p.data, y)?;
            }
            Problem::Polygons(p) => p.y = privatize(&p.y, &cfg, rng)?,
        }
    }
    Ok(problem)
}

/// Same supports and noise scales, new observations.
pub fn rebuild(data: &BinnedDataset, y: Vec<f64>) -> Result<BinnedDataset, CliError> {
    let out = BinnedDataset::new(data.dims(), data.supports().to_vec(), y)?;
    Ok(match data.noise_scales() {
        Some(s) => out.with_noise_scale(s.to_vec())?,
        None => out,
    })
}

fn rect(bounds: &[(f64, f64)]) -> Result<Hyperrectangle, CliError> {
    Ok(Hyperrectangle::from_bounds(bounds)?)
}

pub const ROBOT_INTERVALS: [(f64, f64); 4] = [(0.0, 8.0), (2.5, 3.5), (4.0, 6.0), (7.0, 8.0)];
/// The recorded distances the robot example is built on.
pub const ROBOT_DISTANCES: [f64; 4] = [33.47, 3.49, 9.56, 8.27];
const ROBOT_NOISE_VARIANCE: f64 = 0.6;

/// Distances travelled over four time windows by a robot whose speed is
/// `v(t) = t`, each with Gaussian noise.
pub fn robot<R: Rng + ?Sized>(rng: &mut R) -> Result<BinnedProblem, CliError> {
    let regions = ROBOT_INTERVALS
        .iter()
        .map(|&b| rect(&[b]))
        .collect::<Result<Vec<_>, _>>()?;
    let y = ROBOT_INTERVALS
        .iter()
        .map(|&(s, t)| {
            let z: f64 = rng.sample(StandardNormal);
            0.5 * (t * t - s * s) + ROBOT_NOISE_VARIANCE.sqrt() * z
        })
        .collect();
    let grid: Vec<f64> = (0..=40).map(|i| 0.25 * i as f64).collect();
    Ok(BinnedProblem {
        data: BinnedDataset::from_regions(regions, y)?,
        queries: grid.iter().map(|&t| Support::Point(LatentPoint::new(vec![t]))).collect(),
        truth: grid,
        domain: rect(&[(0.0, 10.0)])?,
    })
}

/// The recorded robot table itself (no randomness).
pub fn robot_recorded() -> Result<BinnedDataset, CliError> {
    let regions = ROBOT_INTERVALS
        .iter()
        .map(|&b| rect(&[b]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BinnedDataset::from_regions(regions, ROBOT_DISTANCES.to_vec())?)
}

pub const HISTOGRAM_POPULATION: usize = 20_000;
pub const HISTOGRAM_BIN_WIDTH: usize = 10;
const MAX_AGE: usize = 100;

/// Ages of a skewed unimodal population, in whole years below 100.
pub fn sample_ages<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let gamma = Gamma::new(4.0, 9.0).expect("valid gamma parameters");
    (0..n)
        .map(|_| loop {
            let a: f64 = gamma.sample(rng);
            if a < MAX_AGE as f64 {
                break a as usize;
            }
        })
        .collect()
}

/// Ten-year age bins of a synthetic population; queries are single years
/// scored against the true per-year counts.
pub fn histogram<R: Rng + ?Sized>(rng: &mut R) -> Result<BinnedProblem, CliError> {
    let ages = sample_ages(HISTOGRAM_POPULATION, rng);
    let mut per_year = vec![0.0; MAX_AGE];
    for a in ages {
        per_year[a] += 1.0;
    }
    let w = HISTOGRAM_BIN_WIDTH;
    let mut regions = Vec::new();
    let mut y = Vec::new();
    for b in 0..MAX_AGE / w {
        regions.push(rect(&[((b * w) as f64, ((b + 1) * w) as f64)])?);
        y.push(per_year[b * w..(b + 1) * w].iter().sum());
    }
    let queries = (0..MAX_AGE)
        .map(|a| Ok(Support::Region(rect(&[(a as f64, a as f64 + 1.0)])?)))
        .collect::<Result<_, CliError>>()?;
    Ok(BinnedProblem {
        data: BinnedDataset::from_regions(regions, y)?,
        queries,
        truth: per_year,
        domain: rect(&[(0.0, MAX_AGE as f64)])?,
    })
}

pub const AUDIENCE_POPULATION: usize = 5802;
pub const AUDIENCE_SURVEYS: (usize, usize) = (6, 19);
/// Join date in years, age in years, income in thousands.
pub const AUDIENCE_DOMAIN: [(f64, f64); 3] = [(0.0, 5.0), (18.0, 80.0), (0.0, 150.0)];

/// People as (join date, age, income). Older people tend to have joined
/// earlier.
pub fn audience_population<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<[f64; 3]> {
    let age_dist = Gamma::new(3.0, 8.0).expect("valid gamma parameters");
    let income_dist = LogNormal::new(50f64.ln(), 0.6).expect("valid lognormal parameters");
    let (dmax, (amin, amax), imax) = (AUDIENCE_DOMAIN[0].1, AUDIENCE_DOMAIN[1], AUDIENCE_DOMAIN[2].1);
    (0..n)
        .map(|_| {
            let age = loop {
                let a = amin + age_dist.sample(rng);
                if a < amax {
                    break a;
                }
            };
            let income = loop {
                // earnings rise with age up to the mid forties
                let boost = 1.0 + 0.4 * (1.0 - ((age - 45.0) / 27.0).powi(2)).max(0.0);
                let v = boost * income_dist.sample(rng);
                if v < imax {
                    break v;
                }
            };
            let skew = 0.5 + 1.5 * (age - amin) / (amax - amin);
            let date = dmax * (1.0 - rng.random::<f64>().powf(skew));
            [date, age, income]
        })
        .collect()
}

fn audience_survey<R: Rng + ?Sized>(rng: &mut R) -> [(f64, f64); 3] {
    let (amin, amax) = AUDIENCE_DOMAIN[1];
    let imax = AUDIENCE_DOMAIN[2].1;
    let date = rng.random_range(0.5..AUDIENCE_DOMAIN[0].1);
    let a0: f64 = rng.random_range(amin..amax - 5.0);
    let a1 = (a0 + rng.random_range(5.0..20.0)).min(amax);
    // targeting as in "any income", "at least $30k", "less than $40k", or a band
    let cut: f64 = rng.random_range(10.0..100.0);
    let income = match rng.random_range(0..4) {
        0 => (0.0, imax),
        1 => (cut, imax),
        2 => (0.0, cut),
        _ => (cut, (cut + rng.random_range(10.0..50.0)).min(imax)),
    };
    [(0.0, date), (a0, a1), income]
}

fn count_in(people: &[[f64; 3]], b: &[(f64, f64); 3]) -> f64 {
    people
        .iter()
        .filter(|p| p.iter().zip(b).all(|(x, (lo, hi))| *x >= *lo && *x < *hi))
        .count() as f64
}

/// A fresh population, between 6 and 19 past surveys (everyone eligible who
/// had joined by the survey date responds) and one new survey to predict.
pub fn audience<R: Rng + ?Sized>(rng: &mut R) -> Result<BinnedProblem, CliError> {
    let people = audience_population(AUDIENCE_POPULATION, rng);
    let k = rng.random_range(AUDIENCE_SURVEYS.0..=AUDIENCE_SURVEYS.1);
    let mut regions = Vec::with_capacity(k);
    let mut y = Vec::with_capacity(k);
    for _ in 0..k {
        let b = audience_survey(rng);
        regions.push(rect(&b)?);
        y.push(count_in(&people, &b));
    }
    let test = audience_survey(rng);
    Ok(BinnedProblem {
        data: BinnedDataset::from_regions(regions, y)?,
        queries: vec![Support::Region(rect(&test)?)],
        truth: vec![count_in(&people, &test)],
        domain: rect(&AUDIENCE_DOMAIN)?,
    })
}

pub const POLYGON_LATTICE: (usize, usize) = (10, 8);
const POLYGON_EXTENT: (f64, f64) = (10.0, 10.0);
const POLYGON_JITTER: f64 = 0.2;
const POLYGON_QUADRATURE_ORDER: usize = 8;
const POLYGON_NOISE_SD: f64 = 1.0;

/// True density: a Gaussian bump on a constant floor.
#[derive(Debug, Clone, Copy)]
pub struct BumpDensity {
    pub floor: f64,
    pub height: f64,
    pub center: [f64; 2],
    pub width: f64,
}

impl BumpDensity {
    pub fn at(&self, x: &[f64]) -> f64 {
        let r2 = (x[0] - self.center[0]).powi(2) + (x[1] - self.center[1]).powi(2);
        self.floor + self.height * (-0.5 * r2 / (self.width * self.width)).exp()
    }

    pub fn integral(&self, p: &Polytope) -> f64 {
        p.simplexes()
            .iter()
            .flat_map(|s| simplex_quadrature(s, POLYGON_QUADRATURE_ORDER))
            .map(|(x, w)| w * self.at(&x))
            .sum()
    }
}

/// Jittered quadrilateral tessellation of the plane region; interior lattice
/// vertices move, boundary vertices stay.
pub fn jittered_areas<R: Rng + ?Sized>(rng: &mut R) -> Result<Vec<Polytope>, CliError> {
    let (nx, ny) = POLYGON_LATTICE;
    let (hx, hy) = (POLYGON_EXTENT.0 / nx as f64, POLYGON_EXTENT.1 / ny as f64);
    let mut vertex = vec![[0.0; 2]; (nx + 1) * (ny + 1)];
    for j in 0..=ny {
        for i in 0..=nx {
            let mut v = [i as f64 * hx, j as f64 * hy];
            if i > 0 && i < nx {
                v[0] += rng.random_range(-POLYGON_JITTER..POLYGON_JITTER) * hx;
            }
            if j > 0 && j < ny {
                v[1] += rng.random_range(-POLYGON_JITTER..POLYGON_JITTER) * hy;
            }
            vertex[j * (nx + 1) + i] = v;
        }
    }
    let at = |i: usize, j: usize| vertex[j * (nx + 1) + i];
    let mut areas = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let quad = [at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)];
            areas.push(Polytope::convex_polygon(&quad)?);
        }
    }
    Ok(areas)
}

/// Eighty areas merged pairwise at random into forty observed groups, each
/// observed as its integral of a random bump density plus unit Gaussian
/// noise. Every area is a
/// test region scored on its mean density.
pub fn polygons<R: Rng + ?Sized>(rng: &mut R) -> Result<PolygonProblem, CliError> {
    let areas = jittered_areas(rng)?;
    let density = BumpDensity {
        floor: 20.0,
        height: 100.0,
        center: [rng.random_range(3.0..7.0), rng.random_range(3.0..7.0)],
        width: 2.0,
    };
    let mut order: Vec<usize> = (0..areas.len()).collect();
    order.shuffle(rng);
    let mut regions = Vec::with_capacity(areas.len() / 2);
    let mut y = Vec::with_capacity(areas.len() / 2);
    for pair in order.chunks(2) {
        let parts: Vec<Polytope> = pair.iter().map(|&i| areas[i].clone()).collect();
        let union = Polytope::union(&parts)?;
        let e: f64 = rng.sample(StandardNormal);
        y.push(density.integral(&union) + POLYGON_NOISE_SD * e);
        regions.push(union);
    }
    let truth = areas.iter().map(|a| density.integral(a) / a.volume()).collect();
    Ok(PolygonProblem {
        regions,
        y,
        tests: areas,
        truth,
    })
}

pub const SAMPLED_BINS: usize = 40;
const SAMPLED_EXTENT: f64 = 20.0;
const SAMPLED_QUERIES: usize = 41;

/// Hyperparameters the well-specified scenario is drawn from.
pub fn sampled_hyperparameters() -> Hyperparameters {
    Hyperparameters::new(1.0, vec![2.0], 0.01).expect("valid hyperparameters")
}

/// Half-unit bins and latent test points drawn jointly from the GP prior, the
/// bins with Gaussian observation noise.
pub fn sampled<R: Rng + ?Sized>(rng: &mut R) -> Result<BinnedProblem, CliError> {
    let hp = sampled_hyperparameters();
    let w = SAMPLED_EXTENT / SAMPLED_BINS as f64;
    let regions = (0..SAMPLED_BINS)
        .map(|i| rect(&[(i as f64 * w, (i + 1) as f64 * w)]))
        .collect::<Result<Vec<_>, _>>()?;
    let grid: Vec<f64> = (0..SAMPLED_QUERIES)
        .map(|i| SAMPLED_EXTENT * i as f64 / (SAMPLED_QUERIES - 1) as f64)
        .collect();
    let queries: Vec<Support> = grid.iter().map(|&t| Support::Point(LatentPoint::new(vec![t]))).collect();
    let mut joint: Vec<Support> = regions.iter().cloned().map(Support::Region).collect();
    joint.extend(queries.iter().cloned());
    let k = self_matrix(&joint, &hp, Execution::Sequential);
    let (chol, _) = Cholesky::with_jitter(&k)
        .ok_or_else(|| CliError::Numerical("joint prior covariance is not positive definite".into()))?;
    let z = DVector::from_fn(joint.len(), |_, _| rng.sample(StandardNormal));
    let f = chol.factor() * z;
    let y = (0..SAMPLED_BINS)
        .map(|i| {
            let e: f64 = rng.sample(StandardNormal);
            f[i] + hp.noise_variance.sqrt() * e
        })
        .collect();
    Ok(BinnedProblem {
        data: BinnedDataset::from_regions(regions, y)?,
        queries,
        truth: f.iter().skip(SAMPLED_BINS).copied().collect(),
        domain: rect(&[(0.0, SAMPLED_EXTENT)])?,
    })
}
