//! What an observation or query integrates over.
//!
//! Every support is a weighted collection of atoms, each atom being either a
//! latent point or a hyperrectangle:
//!
//! * a bin is one rectangle with weight 1,
//! * a latent location is one point with weight 1,
//! * an approximated polytope is many points (weight `A / N` each) or many
//!   rectangles (weight `A / a` each, the volume-shortfall correction).
//!
//! The covariance between two supports is the weighted double sum of the
//! closed-form atom covariances, which covers every pairing (latent/latent,
//! integral/latent, integral/integral, approximated/exact) uniformly.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Result};
use crate::kernel::{
    cross_cov_grad_unchecked, cross_cov_unchecked, eq_kernel_grad_unchecked, eq_kernel_unchecked,
    integral_cov_1d, integral_cov_grad_l_1d, integral_cov_grad_unchecked, integral_cov_unchecked,
    Hyperparameters, Hyperrectangle, LatentPoint,
};
use crate::parallel::Execution;
use crate::polytope::{Features, RegionApproximation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Support {
    Region(Hyperrectangle),
    Point(LatentPoint),
    Approx(Arc<RegionApproximation>),
}

const UNIT_WEIGHT: [f64; 1] = [1.0];

pub(crate) enum Atoms<'a> {
    Points(&'a [Vec<f64>], &'a [f64]),
    Rects(&'a [Hyperrectangle], &'a [f64]),
}

impl Atoms<'_> {
    fn len(&self) -> usize {
        match self {
            Atoms::Points(p, _) => p.len(),
            Atoms::Rects(r, _) => r.len(),
        }
    }
}

impl Support {
    pub fn dims(&self) -> usize {
        match self {
            Support::Region(r) => r.dims(),
            Support::Point(p) => p.dims(),
            Support::Approx(a) => a.dims(),
        }
    }

    /// Measure of the support: box volume, 1 for a point, source volume for
    /// an approximated polytope.
    pub fn volume(&self) -> f64 {
        match self {
            Support::Region(r) => r.volume(),
            Support::Point(_) => 1.0,
            Support::Approx(a) => a.source_volume,
        }
    }

    pub fn is_point(&self) -> bool {
        matches!(self, Support::Point(_))
    }

    /// Representative location (box centre, the point itself, or the
    /// weighted mean of the approximation's features).
    pub fn centroid(&self) -> LatentPoint {
        match self {
            Support::Region(r) => r.centroid(),
            Support::Point(p) => p.clone(),
            Support::Approx(a) => a.centroid(),
        }
    }

    /// Per-dimension `(min, max)` extent.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        match self {
            Support::Region(r) => r.intervals.iter().map(|i| (i.s, i.t)).collect(),
            Support::Point(p) => p.coords.iter().map(|&c| (c, c)).collect(),
            Support::Approx(a) => a.bounds(),
        }
    }

    pub(crate) fn atoms(&self) -> Atoms<'_> {
        match self {
            Support::Region(r) => Atoms::Rects(std::slice::from_ref(r), &UNIT_WEIGHT),
            Support::Point(p) => Atoms::Points(std::slice::from_ref(&p.coords), &UNIT_WEIGHT),
            Support::Approx(a) => match &a.features {
                Features::Points(p) => Atoms::Points(p, &a.weights),
                Features::Rectangles(r) => Atoms::Rects(r, &a.weights),
            },
        }
    }
}

impl From<Hyperrectangle> for Support {
    fn from(r: Hyperrectangle) -> Self {
        Support::Region(r)
    }
}

impl From<LatentPoint> for Support {
    fn from(p: LatentPoint) -> Self {
        Support::Point(p)
    }
}

impl From<RegionApproximation> for Support {
    fn from(a: RegionApproximation) -> Self {
        Support::Approx(Arc::new(a))
    }
}

/// Covariance of atom `i` of `a` with all of `b`, weights applied.
fn row_cov(a: &Atoms<'_>, i: usize, b: &Atoms<'_>, hp: &Hyperparameters) -> f64 {
    match (a, b) {
        (Atoms::Points(pa, wa), Atoms::Points(pb, wb)) => {
            wa[i]
                * pb.iter()
                    .zip(wb.iter())
                    .map(|(q, w)| w * eq_kernel_unchecked(&pa[i], q, hp))
                    .sum::<f64>()
        }
        (Atoms::Points(pa, wa), Atoms::Rects(rb, wb)) => {
            wa[i]
                * rb.iter()
                    .zip(wb.iter())
                    .map(|(r, w)| w * cross_cov_unchecked(r, &pa[i], hp))
                    .sum::<f64>()
        }
        (Atoms::Rects(ra, wa), Atoms::Points(pb, wb)) => {
            wa[i]
                * pb.iter()
                    .zip(wb.iter())
                    .map(|(q, w)| w * cross_cov_unchecked(&ra[i], q, hp))
                    .sum::<f64>()
        }
        (Atoms::Rects(ra, wa), Atoms::Rects(rb, wb)) => {
            wa[i]
                * rb.iter()
                    .zip(wb.iter())
                    .map(|(r, w)| w * integral_cov_unchecked(&ra[i], r, hp))
                    .sum::<f64>()
        }
    }
}

fn row_grad(a: &Atoms<'_>, i: usize, b: &Atoms<'_>, hp: &Hyperparameters) -> Vec<f64> {
    let mut acc = vec![0.0; hp.dims() + 1];
    let mut add = |w: f64, g: Vec<f64>| {
        for (s, v) in acc.iter_mut().zip(g) {
            *s += w * v;
        }
    };
    match (a, b) {
        (Atoms::Points(pa, _), Atoms::Points(pb, wb)) => {
            for (q, w) in pb.iter().zip(wb.iter()) {
                add(*w, eq_kernel_grad_unchecked(&pa[i], q, hp));
            }
        }
        (Atoms::Points(pa, _), Atoms::Rects(rb, wb)) => {
            for (r, w) in rb.iter().zip(wb.iter()) {
                add(*w, cross_cov_grad_unchecked(r, &pa[i], hp));
            }
        }
        (Atoms::Rects(ra, _), Atoms::Points(pb, wb)) => {
            for (q, w) in pb.iter().zip(wb.iter()) {
                add(*w, cross_cov_grad_unchecked(&ra[i], q, hp));
            }
        }
        (Atoms::Rects(ra, _), Atoms::Rects(rb, wb)) => {
            for (r, w) in rb.iter().zip(wb.iter()) {
                add(*w, integral_cov_grad_unchecked(&ra[i], r, hp));
            }
        }
    }
    let wi = match a {
        Atoms::Points(_, w) | Atoms::Rects(_, w) => w[i],
    };
    acc.iter_mut().for_each(|g| *g *= wi);
    acc
}

/// Rectangle sets with more atom pairs than this go through [`IntervalTables`].
const TABLE_MIN_PAIRS: usize = 4;

/// Distinct 1-D interval covariances between two rectangle sets, one table
/// per dimension. Rasterised approximations share most edges, so this
/// evaluates each closed form once instead of once per atom pair.
struct IntervalTables {
    /// `index_a[k][i]`: row of atom `i`'s interval in dimension `k`.
    index_a: Vec<Vec<usize>>,
    index_b: Vec<Vec<usize>>,
    cols: Vec<usize>,
    values: Vec<Vec<f64>>,
    dvalues: Option<Vec<Vec<f64>>>,
}

fn distinct_intervals(rects: &[Hyperrectangle], k: usize) -> (Vec<usize>, Vec<usize>) {
    let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
    let mut first = Vec::new();
    let index = rects
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let iv = &r.intervals[k];
            *seen.entry((iv.s.to_bits(), iv.t.to_bits())).or_insert_with(|| {
                first.push(i);
                first.len() - 1
            })
        })
        .collect();
    (index, first)
}

impl IntervalTables {
    fn new(ra: &[Hyperrectangle], rb: &[Hyperrectangle], hp: &Hyperparameters, with_grad: bool) -> Self {
        let d = hp.dims();
        let mut t = IntervalTables {
            index_a: Vec::with_capacity(d),
            index_b: Vec::with_capacity(d),
            cols: Vec::with_capacity(d),
            values: Vec::with_capacity(d),
            dvalues: with_grad.then(|| Vec::with_capacity(d)),
        };
        for (k, &l) in hp.lengthscales.iter().enumerate() {
            let (ia, fa) = distinct_intervals(ra, k);
            let (ib, fb) = distinct_intervals(rb, k);
            let mut vals = Vec::with_capacity(fa.len() * fb.len());
            let mut dvals = Vec::with_capacity(if with_grad { fa.len() * fb.len() } else { 0 });
            for &i in &fa {
                for &j in &fb {
                    let (x, y) = (&ra[i].intervals[k], &rb[j].intervals[k]);
                    vals.push(integral_cov_1d(x, y, 1.0, l));
                    if with_grad {
                        dvals.push(integral_cov_grad_l_1d(x, y, 1.0, l));
                    }
                }
            }
            t.index_a.push(ia);
            t.index_b.push(ib);
            t.cols.push(fb.len());
            t.values.push(vals);
            if let Some(dv) = t.dvalues.as_mut() {
                dv.push(dvals);
            }
        }
        t
    }

    fn slot(&self, k: usize, i: usize, j: usize) -> usize {
        self.index_a[k][i] * self.cols[k] + self.index_b[k][j]
    }

    fn row_cov(&self, i: usize, wa: &[f64], wb: &[f64], alpha: f64) -> f64 {
        let d = self.values.len();
        wa[i]
            * wb.iter()
                .enumerate()
                .map(|(j, w)| w * alpha * (0..d).map(|k| self.values[k][self.slot(k, i, j)]).product::<f64>())
                .sum::<f64>()
    }

    fn row_grad(&self, i: usize, wa: &[f64], wb: &[f64], alpha: f64) -> Vec<f64> {
        let d = self.values.len();
        let dvalues = self.dvalues.as_ref().expect("tables built with gradients");
        let mut acc = vec![0.0; d + 1];
        let mut f = vec![0.0; d];
        for (j, w) in wb.iter().enumerate() {
            for (k, fk) in f.iter_mut().enumerate() {
                *fk = self.values[k][self.slot(k, i, j)];
            }
            acc[0] += w * f.iter().product::<f64>();
            for k in 0..d {
                let others: f64 = f.iter().enumerate().filter(|&(m, _)| m != k).map(|(_, v)| v).product();
                acc[k + 1] += w * alpha * dvalues[k][self.slot(k, i, j)] * others;
            }
        }
        acc.iter_mut().for_each(|g| *g *= wa[i]);
        acc
    }
}

fn use_tables(a: &Atoms<'_>, b: &Atoms<'_>) -> bool {
    matches!((a, b), (Atoms::Rects(..), Atoms::Rects(..))) && a.len() * b.len() >= TABLE_MIN_PAIRS
}

/// Covariance between two supports.
pub fn support_cov(a: &Support, b: &Support, hp: &Hyperparameters) -> Result<f64> {
    check_dims(hp.dims(), a.dims())?;
    check_dims(hp.dims(), b.dims())?;
    Ok(support_cov_unchecked(a, b, hp, Execution::Sequential))
}

/// As [`support_cov`], splitting the outer atom loop across threads.
pub fn support_cov_with(a: &Support, b: &Support, hp: &Hyperparameters, exec: Execution) -> Result<f64> {
    check_dims(hp.dims(), a.dims())?;
    check_dims(hp.dims(), b.dims())?;
    Ok(support_cov_unchecked(a, b, hp, exec))
}

pub(crate) fn support_cov_unchecked(a: &Support, b: &Support, hp: &Hyperparameters, exec: Execution) -> f64 {
    let (aa, bb) = (a.atoms(), b.atoms());
    if let (true, Atoms::Rects(ra, wa), Atoms::Rects(rb, wb)) = (use_tables(&aa, &bb), &aa, &bb) {
        let t = IntervalTables::new(ra, rb, hp, false);
        return match exec {
            Execution::Sequential => (0..ra.len()).map(|i| t.row_cov(i, wa, wb, hp.alpha)).sum(),
            Execution::Parallel => exec.sum_range(ra.len(), |i| t.row_cov(i, wa, wb, hp.alpha)),
        };
    }
    match exec {
        Execution::Sequential => (0..aa.len()).map(|i| row_cov(&aa, i, &bb, hp)).sum(),
        Execution::Parallel => exec.sum_range(aa.len(), |i| row_cov(&aa, i, &bb, hp)),
    }
}

/// Gradient of [`support_cov`] over `(alpha, l_1, ..., l_d)`.
pub fn support_cov_grad(a: &Support, b: &Support, hp: &Hyperparameters) -> Result<Vec<f64>> {
    check_dims(hp.dims(), a.dims())?;
    check_dims(hp.dims(), b.dims())?;
    Ok(support_cov_grad_unchecked(a, b, hp, Execution::Sequential))
}

pub(crate) fn support_cov_grad_unchecked(
    a: &Support,
    b: &Support,
    hp: &Hyperparameters,
    exec: Execution,
) -> Vec<f64> {
    let (aa, bb) = (a.atoms(), b.atoms());
    let rows = match (use_tables(&aa, &bb), &aa, &bb) {
        (true, Atoms::Rects(ra, wa), Atoms::Rects(rb, wb)) => {
            let t = IntervalTables::new(ra, rb, hp, true);
            exec.map_range(ra.len(), |i| t.row_grad(i, wa, wb, hp.alpha))
        }
        _ => exec.map_range(aa.len(), |i| row_grad(&aa, i, &bb, hp)),
    };
    let mut grad = vec![0.0; hp.dims() + 1];
    for row in rows {
        for (g, r) in grad.iter_mut().zip(row) {
            *g += r;
        }
    }
    grad
}

/// Prior variance of a support: latent variance `alpha` for a point, the
/// integral self-covariance otherwise.
pub(crate) fn prior_variance(s: &Support, hp: &Hyperparameters) -> f64 {
    match s {
        Support::Point(_) => hp.alpha,
        _ => support_cov_unchecked(s, s, hp, Execution::Sequential),
    }
}
