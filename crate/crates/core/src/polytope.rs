//! Approximating the covariance of integrals over non-rectangular regions.
//!
//! A region is replaced by a weighted feature set: uniformly sampled points
//! (each weighted `A / N`) or a greedy packing of axis-aligned rectangles
//! (each weighted `A / a`, where `a` is the covered volume). The weighted
//! features plug straight into [`Support::Approx`], so approximated regions
//! can be mixed freely with exact bins and latent points.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::kernel::{eq_kernel_unchecked, Hyperparameters, Hyperrectangle, Interval, LatentPoint};
use crate::parallel::Execution;
use crate::support::{support_cov_grad_unchecked, support_cov_unchecked, Support};

/// `d + 1` vertices in `d` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simplex {
    pub vertices: Vec<Vec<f64>>,
}

impl Simplex {
    pub fn new(vertices: Vec<Vec<f64>>) -> Result<Self> {
        let d = vertices.len().checked_sub(1).ok_or_else(|| {
            Error::InvalidInput("a simplex needs at least one vertex".into())
        })?;
        for v in &vertices {
            check_dims(d, v.len())?;
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidInput("non-finite simplex vertex".into()));
            }
        }
        Ok(Simplex { vertices })
    }

    pub fn dims(&self) -> usize {
        self.vertices.len() - 1
    }

    fn edges(&self) -> DMatrix<f64> {
        let d = self.dims();
        let v0 = &self.vertices[0];
        DMatrix::from_fn(d, d, |r, c| self.vertices[c + 1][r] - v0[r])
    }

    pub fn volume(&self) -> f64 {
        simplex_volume(self)
    }

    /// Barycentric coordinates of `x`, or `None` for a degenerate simplex.
    pub fn barycentric(&self, x: &[f64]) -> Option<Vec<f64>> {
        let d = self.dims();
        if d == 0 {
            return Some(vec![1.0]);
        }
        let rhs = nalgebra::DVector::from_fn(d, |r, _| x[r] - self.vertices[0][r]);
        let lambda = self.edges().lu().solve(&rhs)?;
        let mut out = Vec::with_capacity(d + 1);
        out.push(1.0 - lambda.sum());
        out.extend(lambda.iter());
        Some(out)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.barycentric(x)
            .is_some_and(|b| b.iter().all(|v| *v >= -tol))
    }

    pub fn centroid(&self) -> Vec<f64> {
        let n = self.vertices.len() as f64;
        (0..self.dims())
            .map(|k| self.vertices.iter().map(|v| v[k]).sum::<f64>() / n)
            .collect()
    }
}

fn factorial(d: usize) -> f64 {
    (1..=d).map(|k| k as f64).product()
}

/// `|det[v_1 - v_0, ..., v_d - v_0]| / d!`.
pub fn simplex_volume(s: &Simplex) -> f64 {
    let d = s.dims();
    if d == 0 {
        return 1.0;
    }
    s.edges().determinant().abs() / factorial(d)
}

/// Uniform point in a simplex.
///
/// With `n = d + 1` vertices and `z = [1, u_1, ..., u_d, 0]` for uniform
/// `u_i`, set `l_i = z_i^(1 / (n - i))`; the point is
/// `sum_{i=1..n} (1 - l_i) prod_{j<i} l_j v_{i-1}`.
pub fn simplex_sample<R: Rng + ?Sized>(s: &Simplex, rng: &mut R) -> Vec<f64> {
    let d = s.dims();
    let n = d + 1;
    let mut l = Vec::with_capacity(n + 1);
    l.push(1.0);
    for i in 1..=d {
        let u: f64 = rng.random();
        l.push(u.powf(1.0 / (n - i) as f64));
    }
    l.push(0.0);
    let mut point = vec![0.0; d];
    let mut prefix = 1.0;
    for i in 1..=n {
        prefix *= l[i - 1];
        let w = (1.0 - l[i]) * prefix;
        for (p, v) in point.iter_mut().zip(&s.vertices[i - 1]) {
            *p += w * v;
        }
    }
    point
}

/// Something that can be rasterised and sampled.
pub trait Region: Sync {
    fn dims(&self) -> usize;
    fn volume(&self) -> f64;
    /// Per-dimension `(min, max)`.
    fn bbox(&self) -> Vec<(f64, f64)>;
    /// Membership, boundary inclusive.
    fn contains(&self, x: &[f64]) -> bool;
    /// One uniform sample.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64>;
}

/// A union of interior-disjoint simplexes (disjointness is not checked).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    simplexes: Vec<Simplex>,
    volumes: Vec<f64>,
    volume: f64,
}

const CONTAIN_TOL: f64 = 1e-12;

impl Polytope {
    pub fn new(simplexes: Vec<Simplex>) -> Result<Self> {
        let d = simplexes
            .first()
            .ok_or_else(|| Error::InvalidInput("a polytope needs at least one simplex".into()))?
            .dims();
        for s in &simplexes {
            check_dims(d, s.dims())?;
        }
        let volumes: Vec<f64> = simplexes.iter().map(simplex_volume).collect();
        let volume = volumes.iter().sum();
        Ok(Polytope {
            simplexes,
            volumes,
            volume,
        })
    }

    /// Fan triangulation of a convex polygon given in boundary order.
    pub fn convex_polygon(vertices: &[[f64; 2]]) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidInput("a polygon needs at least three vertices".into()));
        }
        let v0 = vertices[0].to_vec();
        let simplexes = vertices[1..]
            .windows(2)
            .map(|w| Simplex::new(vec![v0.clone(), w[0].to_vec(), w[1].to_vec()]))
            .collect::<Result<_>>()?;
        Self::new(simplexes)
    }

    /// Kuhn triangulation of a box into `d!` simplexes.
    pub fn from_hyperrectangle(r: &Hyperrectangle) -> Result<Self> {
        let d = r.dims();
        let mut perm: Vec<usize> = (0..d).collect();
        let mut simplexes = Vec::new();
        loop {
            let mut v: Vec<f64> = r.intervals.iter().map(|i| i.s).collect();
            let mut verts = vec![v.clone()];
            for &k in &perm {
                v[k] = r.intervals[k].t;
                verts.push(v.clone());
            }
            simplexes.push(Simplex::new(verts)?);
            if !next_permutation(&mut perm) {
                break;
            }
        }
        Self::new(simplexes)
    }

    /// Concatenation of the simplexes of several polytopes.
    pub fn union(parts: &[Polytope]) -> Result<Self> {
        Self::new(parts.iter().flat_map(|p| p.simplexes.iter().cloned()).collect())
    }

    pub fn simplexes(&self) -> &[Simplex] {
        &self.simplexes
    }
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let Some(i) = (0..n - 1).rev().find(|&i| p[i] < p[i + 1]) else {
        return false;
    };
    let j = (i + 1..n).rev().find(|&j| p[j] > p[i]).expect("successor exists");
    p.swap(i, j);
    p[i + 1..].reverse();
    true
}

impl Region for Polytope {
    fn dims(&self) -> usize {
        self.simplexes[0].dims()
    }

    fn volume(&self) -> f64 {
        self.volume
    }

    fn bbox(&self) -> Vec<(f64, f64)> {
        let d = self.dims();
        let mut b = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
        for v in self.simplexes.iter().flat_map(|s| &s.vertices) {
            for (bk, c) in b.iter_mut().zip(v) {
                bk.0 = bk.0.min(*c);
                bk.1 = bk.1.max(*c);
            }
        }
        b
    }

    fn contains(&self, x: &[f64]) -> bool {
        self.simplexes.iter().any(|s| s.contains(x, CONTAIN_TOL))
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let target = rng.random::<f64>() * self.volume;
        let mut acc = 0.0;
        let mut pick = self.simplexes.len() - 1;
        for (i, v) in self.volumes.iter().enumerate() {
            acc += v;
            if target < acc {
                pick = i;
                break;
            }
        }
        simplex_sample(&self.simplexes[pick], rng)
    }
}

/// Euclidean ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) || center.is_empty() {
            return Err(Error::InvalidInput(format!("invalid ball radius {radius}")));
        }
        Ok(Ball { center, radius })
    }
}

impl Region for Ball {
    fn dims(&self) -> usize {
        self.center.len()
    }

    fn volume(&self) -> f64 {
        let d = self.dims() as f64;
        std::f64::consts::PI.powf(d / 2.0) * self.radius.powf(d) / libm::tgamma(d / 2.0 + 1.0)
    }

    fn bbox(&self) -> Vec<(f64, f64)> {
        self.center
            .iter()
            .map(|c| (c - self.radius, c + self.radius))
            .collect()
    }

    fn contains(&self, x: &[f64]) -> bool {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
        r2 <= self.radius * self.radius * (1.0 + 1e-12)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dims();
        let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r = self.radius * rng.random::<f64>().powf(1.0 / d as f64);
        dir.iter()
            .zip(&self.center)
            .map(|(u, c)| c + r * u / norm)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Features {
    Points(Vec<Vec<f64>>),
    Rectangles(Vec<Hyperrectangle>),
}

/// Weighted feature set standing in for one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionApproximation {
    pub features: Features,
    /// Per-feature weight (`A / N` for points, `A / a` for rectangles).
    pub weights: Vec<f64>,
    /// Volume `A` of the region being approximated.
    pub source_volume: f64,
    /// Volume `a` actually covered by rectangles (equals `A` for points).
    pub covered_volume: f64,
}

impl RegionApproximation {
    pub fn from_points(points: Vec<Vec<f64>>, source_volume: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("need at least one point".into()));
        }
        let d = points[0].len();
        for p in &points {
            check_dims(d, p.len())?;
        }
        let w = source_volume / points.len() as f64;
        Ok(RegionApproximation {
            weights: vec![w; points.len()],
            features: Features::Points(points),
            source_volume,
            covered_volume: source_volume,
        })
    }

    pub fn from_rectangles(rects: Vec<Hyperrectangle>, source_volume: f64) -> Result<Self> {
        if rects.is_empty() {
            return Err(Error::InvalidInput("need at least one rectangle".into()));
        }
        let d = rects[0].dims();
        for r in &rects {
            check_dims(d, r.dims())?;
        }
        let covered: f64 = rects.iter().map(Hyperrectangle::volume).sum();
        if covered <= 0.0 {
            return Err(Error::ZeroVolume);
        }
        Ok(RegionApproximation {
            weights: vec![source_volume / covered; rects.len()],
            features: Features::Rectangles(rects),
            source_volume,
            covered_volume: covered,
        })
    }

    /// Merges approximations of disjoint pieces of one region, keeping each
    /// piece's own weights.
    pub fn union(parts: &[RegionApproximation]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("nothing to merge".into()))?;
        let mut out = first.clone();
        for p in &parts[1..] {
            check_dims(out.dims(), p.dims())?;
            match (&mut out.features, &p.features) {
                (Features::Points(a), Features::Points(b)) => a.extend(b.iter().cloned()),
                (Features::Rectangles(a), Features::Rectangles(b)) => a.extend(b.iter().cloned()),
                _ => {
                    return Err(Error::KindMismatch {
                        expected: out.kind(),
                        found: p.kind(),
                    })
                }
            }
            out.weights.extend(&p.weights);
            out.source_volume += p.source_volume;
            out.covered_volume += p.covered_volume;
        }
        Ok(out)
    }

    pub fn kind(&self) -> &'static str {
        match self.features {
            Features::Points(_) => "points",
            Features::Rectangles(_) => "rectangles",
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dims(&self) -> usize {
        match &self.features {
            Features::Points(p) => p[0].len(),
            Features::Rectangles(r) => r[0].dims(),
        }
    }

    /// Mass-weighted mean location of the features.
    pub fn centroid(&self) -> LatentPoint {
        let d = self.dims();
        let mut c = vec![0.0; d];
        let mut total = 0.0;
        let mut add = |x: &[f64], m: f64| {
            for (ck, xk) in c.iter_mut().zip(x) {
                *ck += m * xk;
            }
            total += m;
        };
        match &self.features {
            Features::Points(p) => p.iter().zip(&self.weights).for_each(|(x, w)| add(x, *w)),
            Features::Rectangles(r) => r
                .iter()
                .zip(&self.weights)
                .for_each(|(x, w)| add(&x.centroid().coords, w * x.volume())),
        }
        LatentPoint::new(c.into_iter().map(|v| v / total).collect())
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        let d = self.dims();
        let mut b = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
        let mut grow = |k: usize, lo: f64, hi: f64| {
            b[k].0 = b[k].0.min(lo);
            b[k].1 = b[k].1.max(hi);
        };
        match &self.features {
            Features::Points(p) => p
                .iter()
                .for_each(|x| x.iter().enumerate().for_each(|(k, v)| grow(k, *v, *v))),
            Features::Rectangles(r) => r.iter().for_each(|x| {
                x.intervals
                    .iter()
                    .enumerate()
                    .for_each(|(k, i)| grow(k, i.s, i.t))
            }),
        }
        b
    }
}

/// Draws `ceil(V * density)` points per simplex (so every simplex with
/// positive volume gets at least one).
pub fn fill_points<R: Rng + ?Sized>(p: &Polytope, density: f64, rng: &mut R) -> Result<RegionApproximation> {
    if !(density > 0.0 && density.is_finite()) {
        return Err(Error::InvalidInput(format!("density must be positive, got {density}")));
    }
    if p.volume <= 0.0 {
        return Err(Error::ZeroVolume);
    }
    let mut points = Vec::new();
    for (s, v) in p.simplexes.iter().zip(&p.volumes) {
        if *v <= 0.0 {
            continue;
        }
        let expected = v * density;
        // absorb rounding in products like 2 * 3 so exact counts stay exact
        let count = (expected - 1e-9 * expected.max(1.0)).ceil().max(1.0) as usize;
        points.extend((0..count).map(|_| simplex_sample(s, rng)));
    }
    RegionApproximation::from_points(points, p.volume)
}

/// Exactly `n` uniform points over any region.
pub fn sample_points<G: Region, R: Rng + ?Sized>(
    region: &G,
    n: usize,
    rng: &mut R,
) -> Result<RegionApproximation> {
    if region.volume() <= 0.0 {
        return Err(Error::ZeroVolume);
    }
    let points = (0..n).map(|_| region.sample(rng)).collect();
    RegionApproximation::from_points(points, region.volume())
}

/// Default thinning radius `0.5 (A / N)^(1/d)`.
pub fn default_disc_radius(volume: f64, n: usize, dims: usize) -> f64 {
    0.5 * (volume / n as f64).powf(1.0 / dims as f64)
}

/// Greedy dart-throwing filter: keeps a point if it is at least `r` from
/// every point kept before it.
pub fn thin_poisson_disc(points: &[Vec<f64>], r: f64) -> Vec<Vec<f64>> {
    if r <= 0.0 {
        return points.to_vec();
    }
    let r2 = r * r;
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for p in points {
        let far = kept.iter().all(|q| {
            q.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() >= r2
        });
        if far {
            kept.push(p.clone());
        }
    }
    kept
}

fn expect_kind(ra: &RegionApproximation, kind: &'static str) -> Result<()> {
    if ra.kind() == kind {
        Ok(())
    } else {
        Err(Error::KindMismatch {
            expected: kind,
            found: ra.kind(),
        })
    }
}

fn approx_pair_checks(
    ra: &RegionApproximation,
    rb: &RegionApproximation,
    hp: &Hyperparameters,
    kind: &'static str,
) -> Result<()> {
    hp.validate()?;
    expect_kind(ra, kind)?;
    expect_kind(rb, kind)?;
    check_dims(hp.dims(), ra.dims())?;
    check_dims(hp.dims(), rb.dims())
}

fn as_support(ra: &RegionApproximation) -> Support {
    Support::Approx(std::sync::Arc::new(ra.clone()))
}

/// `(A A' / N N') sum_i sum_j k(x_i, x'_j)`.
pub fn cov_points(ra: &RegionApproximation, rb: &RegionApproximation, hp: &Hyperparameters) -> Result<f64> {
    cov_points_with(ra, rb, hp, Execution::default())
}

pub fn cov_points_with(
    ra: &RegionApproximation,
    rb: &RegionApproximation,
    hp: &Hyperparameters,
    exec: Execution,
) -> Result<f64> {
    approx_pair_checks(ra, rb, hp, "points")?;
    Ok(support_cov_unchecked(&as_support(ra), &as_support(rb), hp, exec))
}

/// Gradient of [`cov_points`] over `(alpha, l_1, ..., l_d)`, scaled by the
/// upstream derivative `dL/dK`.
pub fn grad_points(
    ra: &RegionApproximation,
    rb: &RegionApproximation,
    hp: &Hyperparameters,
    dl_dk: f64,
) -> Result<Vec<f64>> {
    approx_pair_checks(ra, rb, hp, "points")?;
    let g = support_cov_grad_unchecked(&as_support(ra), &as_support(rb), hp, Execution::default());
    Ok(g.into_iter().map(|v| v * dl_dk).collect())
}

/// `sum_i sum_j (A A' / a a') k_FF(x_i, x'_j)` over rectangle features.
pub fn cov_rectangles(ra: &RegionApproximation, rb: &RegionApproximation, hp: &Hyperparameters) -> Result<f64> {
    approx_pair_checks(ra, rb, hp, "rectangles")?;
    if ra.covered_volume <= 0.0 || rb.covered_volume <= 0.0 {
        return Err(Error::ZeroVolume);
    }
    Ok(support_cov_unchecked(
        &as_support(ra),
        &as_support(rb),
        hp,
        Execution::default(),
    ))
}

/// Cell lattice over a bounding box; axis 0 varies fastest.
struct Raster {
    dims: usize,
    g: usize,
    lo: Vec<f64>,
    step: Vec<f64>,
}

impl Raster {
    fn cells(&self) -> usize {
        self.g.pow(self.dims as u32)
    }

    fn unflatten(&self, mut idx: usize, n: usize) -> Vec<usize> {
        (0..self.dims)
            .map(|_| {
                let c = idx % n;
                idx /= n;
                c
            })
            .collect()
    }

    fn flatten(&self, c: &[usize]) -> usize {
        c.iter().rev().fold(0, |acc, &v| acc * self.g + v)
    }

    /// Interior cells: every corner and the centre inside the region.
    fn interior<G: Region>(&self, region: &G) -> Vec<bool> {
        let n = self.g + 1;
        let nodes = n.pow(self.dims as u32);
        let node_in = Execution::default().map_range(nodes, |i| {
            let c = self.unflatten(i, n);
            let x: Vec<f64> = c
                .iter()
                .enumerate()
                .map(|(k, &v)| self.lo[k] + v as f64 * self.step[k])
                .collect();
            region.contains(&x)
        });
        Execution::default().map_range(self.cells(), |i| {
            let c = self.unflatten(i, self.g);
            let corners_in = (0..1usize << self.dims).all(|mask| {
                let idx = (0..self.dims)
                    .rev()
                    .fold(0, |acc, k| acc * n + c[k] + ((mask >> k) & 1));
                node_in[idx]
            });
            corners_in && {
                let x: Vec<f64> = c
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| self.lo[k] + (v as f64 + 0.5) * self.step[k])
                    .collect();
                region.contains(&x)
            }
        })
    }

    fn to_rect(&self, lo: &[usize], hi: &[usize]) -> Hyperrectangle {
        Hyperrectangle::new(
            (0..self.dims)
                .map(|k| Interval {
                    s: self.lo[k] + lo[k] as f64 * self.step[k],
                    t: self.lo[k] + hi[k] as f64 * self.step[k],
                })
                .collect(),
        )
    }
}

/// Largest all-true axis-aligned block of a 2-D grid (`nx` fastest), via
/// the stacked-histogram method. Returns cell bounds `[lo, hi)`.
fn largest_block_2d(avail: &[bool], nx: usize, ny: usize) -> Option<([usize; 2], [usize; 2])> {
    let mut heights = vec![0usize; nx];
    let mut best: Option<(usize, [usize; 2], [usize; 2])> = None;
    for y in 0..ny {
        for x in 0..nx {
            heights[x] = if avail[y * nx + x] { heights[x] + 1 } else { 0 };
        }
        let mut stack: Vec<usize> = Vec::new();
        for x in 0..=nx {
            let h = if x < nx { heights[x] } else { 0 };
            while let Some(&top) = stack.last() {
                if heights[top] <= h {
                    break;
                }
                stack.pop();
                let height = heights[top];
                let left = stack.last().map_or(0, |&s| s + 1);
                let area = height * (x - left);
                if best.as_ref().is_none_or(|b| area > b.0) {
                    best = Some((area, [left, y + 1 - height], [x, y + 1]));
                }
            }
            stack.push(x);
        }
    }
    best.filter(|b| b.0 > 0).map(|b| (b.1, b.2))
}

/// Chebyshev distance (in cells) from each available cell to the nearest
/// unavailable cell or the grid border, by repeated unit-cube erosion.
fn chebyshev_depth(r: &Raster, avail: &[bool]) -> Vec<usize> {
    let mut depth: Vec<usize> = avail.iter().map(|&a| usize::from(a)).collect();
    let mut current = avail.to_vec();
    let mut level = 1;
    loop {
        let mut next = current.clone();
        for axis in 0..r.dims {
            let stride = r.g.pow(axis as u32);
            let src = next.clone();
            for (i, v) in next.iter_mut().enumerate() {
                if !*v {
                    continue;
                }
                let c = (i / stride) % r.g;
                let lower = c > 0 && src[i - stride];
                let upper = c + 1 < r.g && src[i + stride];
                *v = lower && upper;
            }
        }
        if !next.iter().any(|&v| v) {
            break;
        }
        level += 1;
        for (d, &v) in depth.iter_mut().zip(&next) {
            if v {
                *d = level;
            }
        }
        current = next;
    }
    depth
}

/// Grows a block from a seed cube by unit slabs along +/- each axis while
/// the slab is fully available.
fn grow_block(r: &Raster, avail: &[bool], mut lo: Vec<usize>, mut hi: Vec<usize>) -> (Vec<usize>, Vec<usize>) {
    let slab_free = |lo: &[usize], hi: &[usize]| -> bool {
        let ext: Vec<usize> = lo.iter().zip(hi).map(|(a, b)| b - a).collect();
        let total: usize = ext.iter().product();
        (0..total).all(|mut j| {
            let c: Vec<usize> = (0..r.dims)
                .map(|k| {
                    let v = lo[k] + j % ext[k];
                    j /= ext[k];
                    v
                })
                .collect();
            avail[r.flatten(&c)]
        })
    };
    loop {
        let mut grown = false;
        for k in 0..r.dims {
            if hi[k] < r.g {
                let (mut slo, mut shi) = (lo.clone(), hi.clone());
                slo[k] = hi[k];
                shi[k] = hi[k] + 1;
                if slab_free(&slo, &shi) {
                    hi[k] += 1;
                    grown = true;
                }
            }
            if lo[k] > 0 {
                let (mut slo, mut shi) = (lo.clone(), hi.clone());
                slo[k] = lo[k] - 1;
                shi[k] = lo[k];
                if slab_free(&slo, &shi) {
                    lo[k] -= 1;
                    grown = true;
                }
            }
        }
        if !grown {
            return (lo, hi);
        }
    }
}

const GROWTH_SEEDS: usize = 32;

fn largest_block_nd(r: &Raster, avail: &[bool]) -> Option<(Vec<usize>, Vec<usize>)> {
    let depth = chebyshev_depth(r, avail);
    let mut seeds: Vec<usize> = (0..depth.len()).filter(|&i| depth[i] > 0).collect();
    seeds.sort_by(|&a, &b| depth[b].cmp(&depth[a]).then(a.cmp(&b)));
    seeds.truncate(GROWTH_SEEDS);
    seeds
        .into_iter()
        .map(|s| {
            let c = r.unflatten(s, r.g);
            let half = depth[s] - 1;
            let lo: Vec<usize> = c.iter().map(|v| v - half).collect();
            let hi: Vec<usize> = c.iter().map(|v| v + half + 1).collect();
            grow_block(r, avail, lo, hi)
        })
        .max_by_key(|(lo, hi)| lo.iter().zip(hi).map(|(a, b)| b - a).product::<usize>())
}

/// Packs up to `n` disjoint rectangles into the region.
///
/// The bounding box is rasterised at `g` cells per axis; the largest block
/// of uncovered interior cells is extracted repeatedly (exactly for up to
/// two dimensions, by seeded greedy growth above that) until `n` rectangles
/// are placed or no interior cells remain.
pub fn fill_rectangles<G: Region>(region: &G, n: usize, g: usize) -> Result<RegionApproximation> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one rectangle".into()));
    }
    if g < 8 {
        return Err(Error::InvalidInput(format!(
            "grid resolution must be at least 8 cells per axis, got {g}"
        )));
    }
    let dims = region.dims();
    let bbox = region.bbox();
    if region.volume() <= 0.0 || bbox.iter().any(|(a, b)| b <= a) {
        return Err(Error::ZeroVolume);
    }
    let raster = Raster {
        dims,
        g,
        lo: bbox.iter().map(|b| b.0).collect(),
        step: bbox.iter().map(|b| (b.1 - b.0) / g as f64).collect(),
    };
    let mut avail = raster.interior(region);
    let mut rects = Vec::new();
    while rects.len() < n {
        let block = if dims <= 2 {
            let ny = if dims == 2 { g } else { 1 };
            largest_block_2d(&avail, g, ny).map(|(lo, hi)| (lo[..dims].to_vec(), hi[..dims].to_vec()))
        } else {
            largest_block_nd(&raster, &avail)
        };
        let Some((lo, hi)) = block else { break };
        let ext: Vec<usize> = lo.iter().zip(&hi).map(|(a, b)| b - a).collect();
        let total: usize = ext.iter().product();
        for mut j in 0..total {
            let c: Vec<usize> = (0..dims)
                .map(|k| {
                    let v = lo[k] + j % ext[k];
                    j /= ext[k];
                    v
                })
                .collect();
            avail[raster.flatten(&c)] = false;
        }
        rects.push(raster.to_rect(&lo, &hi));
    }
    if rects.is_empty() {
        return Err(Error::NoInteriorCells { resolution: g });
    }
    RegionApproximation::from_rectangles(rects, region.volume())
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = 0.5 * (1.0 - z);
        w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Tensor Gauss-Legendre rule mapped onto a simplex through collapsed
/// (Duffy) coordinates. Returns `(node, weight)` pairs; the weights sum to
/// the simplex volume.
pub fn simplex_quadrature(s: &Simplex, order: usize) -> Vec<(Vec<f64>, f64)> {
    let d = s.dims();
    let (gx, gw) = gauss_legendre_unit(order);
    let jac = simplex_volume(s) * factorial(d);
    let total = order.pow(d as u32);
    (0..total)
        .map(|mut j| {
            let mut remaining = 1.0;
            let mut weight = jac;
            let mut point = s.vertices[0].clone();
            for k in 0..d {
                let q = j % order;
                j /= order;
                let lam = remaining * gx[q];
                weight *= gw[q] * remaining;
                for (p, (a, b)) in point.iter_mut().zip(s.vertices[k + 1].iter().zip(&s.vertices[0])) {
                    *p += lam * (a - b);
                }
                remaining -= lam;
            }
            (point, weight)
        })
        .collect()
}

/// Quadrature reference for the integral covariance of two polytopes.
/// `order` Gauss-Legendre nodes per collapsed axis; the EQ integrand is
/// analytic so modest orders already reach many digits.
pub fn reference_cov(a: &Polytope, b: &Polytope, hp: &Hyperparameters, order: usize, exec: Execution) -> Result<f64> {
    hp.validate()?;
    check_dims(hp.dims(), a.dims())?;
    check_dims(hp.dims(), b.dims())?;
    let qa: Vec<_> = a.simplexes.iter().flat_map(|s| simplex_quadrature(s, order)).collect();
    let qb: Vec<_> = b.simplexes.iter().flat_map(|s| simplex_quadrature(s, order)).collect();
    Ok(exec.sum_range(qa.len(), |i| {
        let (x, wx) = &qa[i];
        wx * qb
            .iter()
            .map(|(y, wy)| wy * eq_kernel_unchecked(x, y, hp))
            .sum::<f64>()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::integral_cov;
    use rand::SeedableRng;

    fn rng() -> rand::rngs::StdRng {
        rand::rngs::StdRng::seed_from_u64(7)
    }

    fn tri() -> Simplex {
        Simplex::new(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    #[test]
    fn volumes() {
        assert_eq!(simplex_volume(&tri()), 0.5);
        let unit3 = Simplex::new(vec![
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert!((simplex_volume(&unit3) - 1.0 / 6.0).abs() < 1e-15);
        let flat = Simplex::new(vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(simplex_volume(&flat), 0.0);
        let r = Hyperrectangle::from_bounds(&[(0.0, 2.0), (1.0, 2.0), (0.0, 3.0)]).unwrap();
        let p = Polytope::from_hyperrectangle(&r).unwrap();
        assert_eq!(p.simplexes().len(), 6);
        assert!((p.volume() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn single_vertex_sample() {
        let s = Simplex::new(vec![vec![]]).unwrap();
        assert!(simplex_sample(&s, &mut rng()).is_empty());
        let s1 = Simplex::new(vec![vec![2.0], vec![5.0]]).unwrap();
        let x = simplex_sample(&s1, &mut rng());
        assert!(x[0] >= 2.0 && x[0] <= 5.0);
    }

    #[test]
    fn fill_counts() {
        let big = Simplex::new(vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let p = Polytope::new(vec![big]).unwrap();
        assert_eq!(fill_points(&p, 3.0, &mut rng()).unwrap().len(), 6);
        let a = Simplex::new(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let b = Simplex::new(vec![vec![0.0, 0.0], vec![3.0, 0.0], vec![0.0, -2.0]]).unwrap();
        let p = Polytope::new(vec![a, b]).unwrap();
        assert_eq!(fill_points(&p, 4.0, &mut rng()).unwrap().len(), 16);
        let flat = Simplex::new(vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert!(matches!(
            fill_points(&Polytope::new(vec![flat]).unwrap(), 1.0, &mut rng()),
            Err(Error::ZeroVolume)
        ));
    }

    #[test]
    fn disc_thinning() {
        let pts = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0]];
        assert_eq!(thin_poisson_disc(&pts, 0.0), pts);
        assert_eq!(thin_poisson_disc(&pts, 0.5).len(), 2);
    }

    #[test]
    fn kinds_are_checked() {
        let hp = Hyperparameters::new(1.0, vec![1.0, 1.0], 0.0).unwrap();
        let pts = RegionApproximation::from_points(vec![vec![0.0, 0.0]], 1.0).unwrap();
        let r = Hyperrectangle::from_bounds(&[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let rects = RegionApproximation::from_rectangles(vec![r], 1.0).unwrap();
        assert!(matches!(cov_points(&pts, &rects, &hp), Err(Error::KindMismatch { .. })));
        assert!(matches!(cov_rectangles(&pts, &rects, &hp), Err(Error::KindMismatch { .. })));
        assert_eq!(cov_points(&pts, &pts, &hp).unwrap(), 1.0);
    }

    #[test]
    fn exact_box_cover() {
        let hp = Hyperparameters::new(1.3, vec![0.8, 1.7], 0.0).unwrap();
        let r = Hyperrectangle::from_bounds(&[(0.0, 1.0), (0.0, 2.0)]).unwrap();
        let s = Hyperrectangle::from_bounds(&[(0.5, 3.0), (1.0, 1.5)]).unwrap();
        let ra = RegionApproximation::from_rectangles(vec![r.clone()], r.volume()).unwrap();
        let rb = RegionApproximation::from_rectangles(vec![s.clone()], s.volume()).unwrap();
        let want = integral_cov(&r, &s, &hp).unwrap();
        assert!((cov_rectangles(&ra, &rb, &hp).unwrap() - want).abs() <= 1e-12 * want.abs());
    }

    #[test]
    fn raster_fill_of_box() {
        let r = Hyperrectangle::from_bounds(&[(0.0, 3.0), (-1.0, 1.0)]).unwrap();
        let p = Polytope::from_hyperrectangle(&r).unwrap();
        let g = 16;
        let a = fill_rectangles(&p, 1, g).unwrap();
        assert!(a.covered_volume >= (1.0 - 2.0 / g as f64).powi(2) * 6.0);
        let many = fill_rectangles(&p, 50, g).unwrap();
        assert_eq!(many.len(), 1);
        assert!(fill_rectangles(&p, 1, 4).is_err());
    }

    #[test]
    fn raster_fill_of_ball() {
        let b = Ball::new(vec![0.0; 3], 1.0).unwrap();
        let a = fill_rectangles(&b, 10, 16).unwrap();
        assert!(a.covered_volume <= b.volume());
        assert!(a.covered_volume > 0.4 * b.volume());
        let Features::Rectangles(rects) = &a.features else { unreachable!() };
        for r in rects {
            for mask in 0..8usize {
                let corner: Vec<f64> = (0..3)
                    .map(|k| if mask >> k & 1 == 1 { r.intervals[k].t } else { r.intervals[k].s })
                    .collect();
                assert!(b.contains(&corner));
            }
        }
        assert_eq!(a.len(), 10);
    }

    #[test]
    fn quadrature_reference_matches_closed_form() {
        let hp = Hyperparameters::new(1.0, vec![0.7, 1.1], 0.0).unwrap();
        let r = Hyperrectangle::from_bounds(&[(0.0, 1.0), (0.0, 2.0)]).unwrap();
        let s = Hyperrectangle::from_bounds(&[(0.5, 2.0), (1.0, 2.5)]).unwrap();
        let pr = Polytope::from_hyperrectangle(&r).unwrap();
        let ps = Polytope::from_hyperrectangle(&s).unwrap();
        let q = reference_cov(&pr, &ps, &hp, 12, Execution::default()).unwrap();
        let exact = integral_cov(&r, &s, &hp).unwrap();
        assert!((q - exact).abs() < 1e-10 * exact, "{q} vs {exact}");
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre_unit(5);
        let int: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(9)).sum();
        assert!((int - 0.1).abs() < 1e-14);
    }
}
