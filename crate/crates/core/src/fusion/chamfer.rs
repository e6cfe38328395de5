//! Symmetric chamfer distance between surfaces.
//!
//! Each side is sampled (uniformly by area for meshes) and every sample is
//! scored by its distance to the *other surface*: the exact point-to-triangle
//! distance for meshes, nearest-point distance for point sets. The result is
//! the mean of the two directed means.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::mesh::TriangleMesh;
use crate::error::{Error, Result};

/// Something that can be sampled and measured against.
pub trait Surface: Sync {
    fn sample(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>>;
    fn distance(&self, p: &Vector3<f64>) -> f64;
    fn is_empty(&self) -> bool;
}

/// Uniform bucket grid over primitives given by their bounding boxes.
pub(crate) struct Grid {
    lo: Vector3<f64>,
    cell: f64,
    dims: [usize; 3],
    cells: Vec<Vec<u32>>,
}

impl Grid {
    pub(crate) fn build(boxes: &[(Vector3<f64>, Vector3<f64>)], target_cell: f64) -> Self {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for (a, b) in boxes {
            lo = lo.inf(a);
            hi = hi.sup(b);
        }
        let ext = (hi - lo).max().max(1e-9);
        let cell = target_cell.max(ext / 96.0).max(1e-9);
        let dims = [0, 1, 2].map(|a| (((hi[a] - lo[a]) / cell).floor() as usize + 1).max(1));
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        for (id, (a, b)) in boxes.iter().enumerate() {
            let c0 = [0, 1, 2].map(|k| (((a[k] - lo[k]) / cell).floor() as usize).min(dims[k] - 1));
            let c1 = [0, 1, 2].map(|k| (((b[k] - lo[k]) / cell).floor() as usize).min(dims[k] - 1));
            for z in c0[2]..=c1[2] {
                for y in c0[1]..=c1[1] {
                    for x in c0[0]..=c1[0] {
                        cells[x + dims[0] * (y + dims[1] * z)].push(id as u32);
                    }
                }
            }
        }
        Self { lo, cell, dims, cells }
    }

    /// Minimum of `dist(id)` over all primitives, visiting cells in growing
    /// Chebyshev shells around `p` until no closer primitive can exist.
    fn nearest(&self, p: &Vector3<f64>, dist: impl Fn(u32) -> f64) -> f64 {
        let mut best = f64::INFINITY;
        self.visit_shells(p, &mut best, |b, id| *b = b.min(dist(id)), |b, r| *b <= r);
        best
    }

    /// The `k` smallest values of `dist`, ascending; `None` skips a
    /// primitive. Fewer than `k` when the grid holds fewer candidates.
    pub(crate) fn k_nearest(&self, p: &Vector3<f64>, k: usize, dist: impl Fn(u32) -> Option<f64>) -> Vec<f64> {
        let mut best: Vec<f64> = Vec::with_capacity(k + 1);
        self.visit_shells(
            p,
            &mut best,
            |b, id| {
                if let Some(d) = dist(id) {
                    let at = b.partition_point(|x| *x <= d);
                    if at < k {
                        b.insert(at, d);
                        b.truncate(k);
                    }
                }
            },
            |b, r| b.len() == k && b[k - 1] <= r,
        );
        best
    }

    /// Calls `visit` on every primitive in cells at Chebyshev distance `r`
    /// from `p`'s cell for growing `r`, stopping once `done(state, r · cell)`.
    fn visit_shells<S>(
        &self,
        p: &Vector3<f64>,
        state: &mut S,
        mut visit: impl FnMut(&mut S, u32),
        done: impl Fn(&S, f64) -> bool,
    ) {
        let home = [0, 1, 2].map(|k| (((p[k] - self.lo[k]) / self.cell).floor().max(0.0) as usize).min(self.dims[k] - 1));
        let max_r = *self.dims.iter().max().unwrap();
        for r in 0..=max_r {
            let r_i = r as isize;
            for dz in -r_i..=r_i {
                for dy in -r_i..=r_i {
                    for dx in -r_i..=r_i {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r_i {
                            continue;
                        }
                        let c = [home[0] as isize + dx, home[1] as isize + dy, home[2] as isize + dz];
                        if (0..3).any(|k| c[k] < 0 || c[k] >= self.dims[k] as isize) {
                            continue;
                        }
                        let idx = c[0] as usize + self.dims[0] * (c[1] as usize + self.dims[1] * c[2] as usize);
                        for &id in &self.cells[idx] {
                            visit(state, id);
                        }
                    }
                }
            }
            if done(state, r as f64 * self.cell) {
                break;
            }
        }
    }
}

/// Closest point on triangle `abc` to `p`.
pub fn closest_point_on_triangle(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Vector3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// A triangle mesh with a spatial index for distance queries.
pub struct MeshSurface<'a> {
    mesh: &'a TriangleMesh,
    grid: Option<Grid>,
}

impl<'a> MeshSurface<'a> {
    pub fn new(mesh: &'a TriangleMesh) -> Self {
        let boxes: Vec<_> = (0..mesh.triangles.len())
            .map(|t| {
                let [a, b, c] = mesh.corners(t);
                (a.inf(&b).inf(&c), a.sup(&b).sup(&c))
            })
            .collect();
        let grid = (!boxes.is_empty()).then(|| {
            let mean_area = mesh.area() / boxes.len() as f64;
            Grid::build(&boxes, 2.0 * mean_area.sqrt())
        });
        Self { mesh, grid }
    }
}

impl Surface for MeshSurface<'_> {
    fn sample(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
        self.mesh.sample_points(count, rng)
    }

    fn distance(&self, p: &Vector3<f64>) -> f64 {
        let Some(grid) = &self.grid else {
            return f64::INFINITY;
        };
        grid.nearest(p, |t| {
            let [a, b, c] = self.mesh.corners(t as usize);
            (closest_point_on_triangle(p, &a, &b, &c) - p).norm()
        })
    }

    fn is_empty(&self) -> bool {
        self.mesh.triangles.is_empty() || self.mesh.area() <= 0.0
    }
}

/// A point set; its samples are the points themselves (drawn with
/// replacement when more are requested than available).
pub struct PointSurface<'a> {
    points: &'a [Vector3<f64>],
    grid: Option<Grid>,
}

impl<'a> PointSurface<'a> {
    pub fn new(points: &'a [Vector3<f64>]) -> Self {
        let boxes: Vec<_> = points.iter().map(|p| (*p, *p)).collect();
        let grid = (!boxes.is_empty()).then(|| {
            let (lo, hi) = boxes.iter().fold((boxes[0].0, boxes[0].0), |(l, h), (p, _)| (l.inf(p), h.sup(p)));
            let ext = (hi - lo).max();
            Grid::build(&boxes, ext / (points.len() as f64).cbrt().max(1.0))
        });
        Self { points, grid }
    }
}

impl Surface for PointSurface<'_> {
    fn sample(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
        use rand::Rng;
        if count >= self.points.len() {
            return self.points.to_vec();
        }
        (0..count).map(|_| self.points[rng.gen_range(0..self.points.len())]).collect()
    }

    fn distance(&self, p: &Vector3<f64>) -> f64 {
        match &self.grid {
            Some(g) => g.nearest(p, |i| (self.points[i as usize] - p).norm()),
            None => f64::INFINITY,
        }
    }

    fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChamferReport {
    /// Mean distance from samples of the first surface to the second.
    pub a_to_b: f64,
    pub b_to_a: f64,
    /// Mean of the two directed distances.
    pub chamfer: f64,
    pub samples: usize,
}

/// Seeded symmetric chamfer distance with `samples` points per side.
pub fn chamfer_distance(a: &dyn Surface, b: &dyn Surface, samples: usize, seed: u64) -> Result<ChamferReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("chamfer distance needs two non-empty surfaces".into()));
    }
    let directed = |from: &dyn Surface, to: &dyn Surface| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = from.sample(samples, &mut rng);
        let d: Vec<f64> = pts.par_iter().map(|p| to.distance(p)).collect();
        d.iter().sum::<f64>() / d.len().max(1) as f64
    };
    let a_to_b = directed(a, b);
    let b_to_a = directed(b, a);
    Ok(ChamferReport {
        a_to_b,
        b_to_a,
        chamfer: 0.5 * (a_to_b + b_to_a),
        samples,
    })
}
