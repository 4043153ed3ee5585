//! Point-set metrics with exact grid-accelerated nearest neighbours.

use crate::error::{bail, Result};
use crate::rng::Rng;
use crate::scene::{quat_to_matrix, Splat};
use alloc::collections::BTreeMap;
use alloc::vec::Vec;

pub const DEFAULT_FSCORE_TAU: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: Vec<[f64; 3]>,
}

impl PointSet {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            bail!(Parameter, "point coordinates must be finite");
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    libm::sqrt(dx * dx + dy * dy + dz * dz)
}

type Cell = (i64, i64, i64);

/// Uniform hash grid over a point set.
struct Grid<'a> {
    points: &'a [[f64; 3]],
    cell: f64,
    origin: [f64; 3],
    cells: BTreeMap<Cell, Vec<usize>>,
    max_ring: i64,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [[f64; 3]]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
        let per_axis = libm::cbrt(points.len() as f64).max(1.0);
        let cell = if extent > 0.0 { extent / per_axis } else { 1.0 };
        let mut grid = Grid { points, cell, origin: lo, cells: BTreeMap::new(), max_ring: 0 };
        for (i, p) in points.iter().enumerate() {
            grid.cells.entry(grid.key(p)).or_default().push(i);
        }
        grid.max_ring = libm::ceil(extent / cell) as i64 + 1;
        grid
    }

    fn key(&self, p: &[f64; 3]) -> Cell {
        let f = |k: usize| libm::floor((p[k] - self.origin[k]) / self.cell) as i64;
        (f(0), f(1), f(2))
    }

    /// Exact distance from `q` to its nearest point in the grid.
    fn nearest(&self, q: &[f64; 3]) -> f64 {
        let c = self.key(q);
        // Rings closer than the occupied index box are empty; skip them.
        let away = |ck: i64| if ck < 0 { -ck } else if ck > self.max_ring { ck - self.max_ring } else { 0 };
        let offset = away(c.0).max(away(c.1)).max(away(c.2));
        let mut best = f64::INFINITY;
        let mut r = 0i64;
        loop {
            if r >= offset {
                for dx in -r..=r {
                    for dy in -r..=r {
                        for dz in -r..=r {
                            if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                                continue;
                            }
                            if let Some(ids) = self.cells.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                                for &i in ids {
                                    best = best.min(dist(q, &self.points[i]));
                                }
                            }
                        }
                    }
                }
            }
            // Every unvisited cell is at least r cells away from q's cell.
            if best <= r as f64 * self.cell || r > offset + self.max_ring {
                return best;
            }
            r += 1;
        }
    }
}

fn nearest_distances(a: &PointSet, b: &PointSet) -> Vec<f64> {
    let grid = Grid::new(&b.points);
    a.points.iter().map(|p| grid.nearest(p)).collect()
}

fn nonempty(a: &PointSet, b: &PointSet) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        bail!(Parameter, "point-set metrics need nonempty sets");
    }
    Ok(())
}

/// Symmetric mean nearest-neighbour distance.
pub fn chamfer(a: &PointSet, b: &PointSet) -> Result<f64> {
    nonempty(a, b)?;
    let ab = nearest_distances(a, b).iter().sum::<f64>() / a.len() as f64;
    let ba = nearest_distances(b, a).iter().sum::<f64>() / b.len() as f64;
    Ok((ab + ba) / 2.0)
}

/// Harmonic mean of the fractions of each set within `tau` of the other.
pub fn fscore(a: &PointSet, b: &PointSet, tau: f64) -> Result<f64> {
    nonempty(a, b)?;
    let frac = |d: Vec<f64>| d.iter().filter(|&&v| v <= tau).count() as f64 / d.len() as f64;
    let p = frac(nearest_distances(a, b));
    let r = frac(nearest_distances(b, a));
    Ok(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
}

/// Maps the bounding box into `[-1, 1]³`: centered, with the largest
/// half-extent scaled to exactly 1. A degenerate set is only centered.
pub fn normalize_points(a: &PointSet) -> Result<PointSet> {
    if a.is_empty() {
        bail!(Parameter, "cannot normalize an empty point set");
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &a.points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let half = (0..3).map(|k| (hi[k] - lo[k]) / 2.0).fold(0.0, f64::max);
    let points = a
        .points
        .iter()
        .map(|p| {
            core::array::from_fn(|k| {
                if half > 0.0 {
                    // Written so the extremes of the widest axis land on ±1 exactly.
                    (p[k] - lo[k]) / half - (hi[k] - lo[k]) / (2.0 * half)
                } else {
                    p[k] - (lo[k] + hi[k]) / 2.0
                }
            })
        })
        .collect();
    Ok(PointSet { points })
}

/// Draws `count` points: a splat is picked with probability proportional to
/// `opacity · mean(scale)`, then a point is drawn from its Gaussian.
pub fn sample_points(splats: &[Splat], count: usize, rng: &mut Rng) -> Result<PointSet> {
    if count == 0 {
        bail!(Parameter, "sample count must be at least 1");
    }
    let mut cdf = Vec::with_capacity(splats.len());
    let mut total = 0.0;
    for s in splats {
        total += s.opacity() * (s.scale[0] + s.scale[1] + s.scale[2]) / 3.0;
        cdf.push(total);
    }
    if !(total > 0.0) {
        bail!(Parameter, "no splat has positive sampling weight");
    }
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let u = rng.uniform() * total;
        // First index whose cumulative weight exceeds u; zero-weight splats
        // have no interval of their own and can never be chosen.
        let i = cdf.partition_point(|&c| c <= u).min(splats.len() - 1);
        let s = &splats[i];
        let r = quat_to_matrix(crate::scene::normalize_quat(s.rotation));
        let z = [rng.normal() * s.scale[0], rng.normal() * s.scale[1], rng.normal() * s.scale[2]];
        points.push(core::array::from_fn(|k| s.mean[k] + r[k][0] * z[0] + r[k][1] * z[1] + r[k][2] * z[2]));
    }
    PointSet::new(points)
}
