//! Ray-traced synthetic scenes with exact geometry.

use nalgebra::{Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::PointSet;
use super::{GroundTruth, SceneBundle};
use crate::error::{Error, Result};
use crate::fusion::{DepthMap, Surface, TriangleMesh};
use crate::geometry::Camera;
use crate::image_buf::Image;
use crate::losses::ExposureParams;

/// Closed-form surfaces used as synthetic ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyticShape {
    /// Square patch with side `2 · half`, spanned by `u` and `normal × u`.
    Rect {
        center: Vector3<f64>,
        normal: Vector3<f64>,
        u: Vector3<f64>,
        half: f64,
    },
    /// Axis-aligned box surface.
    Cuboid { center: Vector3<f64>, half: Vector3<f64> },
    Sphere { center: Vector3<f64>, radius: f64 },
    Union(Vec<AnalyticShape>),
}

/// Ray hit: distance along the (unit) direction and the outward normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub normal: Vector3<f64>,
}

impl AnalyticShape {
    pub fn rect(center: Vector3<f64>, normal: Vector3<f64>, u: Vector3<f64>, half: f64) -> Self {
        let normal = normal.normalize();
        let u = (u - normal * normal.dot(&u)).normalize();
        Self::Rect { center, normal, u, half }
    }

    /// First intersection with `t > 1e-9`.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        match self {
            Self::Rect { center, normal, u, half } => {
                let den = normal.dot(dir);
                if den.abs() < 1e-15 {
                    return None;
                }
                let t = normal.dot(&(center - origin)) / den;
                if t <= 1e-9 {
                    return None;
                }
                let q = origin + dir * t - center;
                let v = normal.cross(u);
                (q.dot(u).abs() <= *half && q.dot(&v).abs() <= *half).then_some(Hit { t, normal: *normal })
            }
            Self::Cuboid { center, half } => {
                let o = origin - center;
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                let mut near_axis = 0;
                let mut far_axis = 0;
                for a in 0..3 {
                    if dir[a].abs() < 1e-15 {
                        if o[a].abs() > half[a] {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (-half[a] - o[a]) / dir[a];
                    let t2 = (half[a] - o[a]) / dir[a];
                    let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                    if lo > t_near {
                        t_near = lo;
                        near_axis = a;
                    }
                    if hi < t_far {
                        t_far = hi;
                        far_axis = a;
                    }
                }
                if t_near > t_far || t_far <= 1e-9 {
                    return None;
                }
                let (t, axis) = if t_near > 1e-9 { (t_near, near_axis) } else { (t_far, far_axis) };
                let p = o + dir * t;
                let mut n = Vector3::zeros();
                n[axis] = p[axis].signum();
                Some(Hit { t, normal: n })
            }
            Self::Sphere { center, radius } => {
                let o = origin - center;
                let b = o.dot(dir);
                let c = o.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t = if -b - s > 1e-9 { -b - s } else { -b + s };
                (t > 1e-9).then(|| Hit {
                    t,
                    normal: (o + dir * t) / *radius,
                })
            }
            Self::Union(parts) => parts
                .iter()
                .filter_map(|p| p.intersect(origin, dir))
                .min_by(|a, b| a.t.total_cmp(&b.t)),
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            Self::Rect { half, .. } => 4.0 * half * half,
            Self::Cuboid { half, .. } => 8.0 * (half.x * half.y + half.y * half.z + half.x * half.z),
            Self::Sphere { radius, .. } => 4.0 * std::f64::consts::PI * radius * radius,
            Self::Union(parts) => parts.iter().map(Self::area).sum(),
        }
    }

    /// Unsigned distance from `p` to the surface.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Self::Rect { center, normal, u, half } => {
                let q = p - center;
                let v = normal.cross(u);
                let a = q.dot(u).clamp(-half, *half);
                let b = q.dot(&v).clamp(-half, *half);
                (q - u * a - v * b).norm()
            }
            Self::Cuboid { center, half } => {
                let q = (p - center).abs() - half;
                let outside = q.sup(&Vector3::zeros()).norm();
                if outside > 0.0 {
                    outside
                } else {
                    -q.max()
                }
            }
            Self::Sphere { center, radius } => ((p - center).norm() - radius).abs(),
            Self::Union(parts) => parts.iter().map(|s| s.surface_distance(p)).fold(f64::INFINITY, f64::min),
        }
    }

    /// Uniform area sample.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        match self {
            Self::Rect { center, normal, u, half } => {
                let v = normal.cross(u);
                center + u * rng.gen_range(-*half..=*half) + v * rng.gen_range(-*half..=*half)
            }
            Self::Cuboid { center, half } => {
                let areas = [half.y * half.z, half.x * half.z, half.x * half.y];
                let r = rng.gen::<f64>() * areas.iter().sum::<f64>();
                let axis = if r < areas[0] {
                    0
                } else if r < areas[0] + areas[1] {
                    1
                } else {
                    2
                };
                let mut p = Vector3::new(
                    rng.gen_range(-half.x..=half.x),
                    rng.gen_range(-half.y..=half.y),
                    rng.gen_range(-half.z..=half.z),
                );
                p[axis] = if rng.gen::<bool>() { half[axis] } else { -half[axis] };
                center + p
            }
            Self::Sphere { center, radius } => loop {
                let g = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let n = g.norm();
                if n > 1e-3 && n <= 1.0 {
                    break center + g / n * *radius;
                }
            },
            Self::Union(parts) => {
                let total = self.area();
                let mut r = rng.gen::<f64>() * total;
                for p in parts {
                    let a = p.area();
                    if r < a {
                        return p.sample_point(rng);
                    }
                    r -= a;
                }
                parts.last().expect("empty union").sample_point(rng)
            }
        }
    }

    /// Triangulation of the surface; spheres use a subdivided icosahedron.
    pub fn to_mesh(&self) -> TriangleMesh {
        match self {
            Self::Rect { center, normal, u, half } => {
                let v = normal.cross(u);
                let c = |a: f64, b: f64| center + u * (a * half) + v * (b * half);
                TriangleMesh::new(vec![c(-1.0, -1.0), c(1.0, -1.0), c(1.0, 1.0), c(-1.0, 1.0)], vec![[0, 1, 2], [0, 2, 3]])
            }
            Self::Cuboid { center, half } => {
                let vertices = (0..8)
                    .map(|k| {
                        let s = Vector3::new(
                            if k & 1 == 1 { 1.0 } else { -1.0 },
                            if k & 2 == 2 { 1.0 } else { -1.0 },
                            if k & 4 == 4 { 1.0 } else { -1.0 },
                        );
                        center + s.component_mul(half)
                    })
                    .collect();
                let quads = [[0, 4, 6, 2], [1, 3, 7, 5], [0, 1, 5, 4], [2, 6, 7, 3], [0, 2, 3, 1], [4, 5, 7, 6]];
                let triangles = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
                TriangleMesh::new(vertices, triangles)
            }
            Self::Sphere { center, radius } => {
                let mut m = icosphere(5);
                for v in &mut m.vertices {
                    *v = center + *v * *radius;
                }
                m
            }
            Self::Union(parts) => {
                let mut out = TriangleMesh::default();
                for p in parts {
                    let m = p.to_mesh();
                    let off = out.vertices.len() as u32;
                    out.vertices.extend(m.vertices);
                    out.triangles.extend(m.triangles.into_iter().map(|t| t.map(|i| i + off)));
                }
                out
            }
        }
    }

    /// Radius of a ball around the origin-centered bounding box.
    fn bounding_radius(&self) -> f64 {
        match self {
            Self::Rect { center, half, .. } => center.norm() + half * std::f64::consts::SQRT_2,
            Self::Cuboid { center, half } => center.norm() + half.norm(),
            Self::Sphere { center, radius } => center.norm() + radius,
            Self::Union(parts) => parts.iter().map(Self::bounding_radius).fold(0.0, f64::max),
        }
    }
}

fn icosphere(levels: usize) -> TriangleMesh {
    use std::collections::HashMap;
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vector3::new(p[0], p[1], p[2]).normalize())
    .collect();
    let mut f: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(f.len() * 4);
        for tri in &f {
            let mut m = [0u32; 3];
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                m[k] = *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    v.push(((v[a as usize] + v[b as usize]) * 0.5).normalize());
                    (v.len() - 1) as u32
                });
            }
            next.push([tri[0], m[0], m[2]]);
            next.push([tri[1], m[1], m[0]]);
            next.push([tri[2], m[2], m[1]]);
            next.push(m);
        }
        f = next;
    }
    TriangleMesh::new(v, f)
}

impl Surface for AnalyticShape {
    fn sample(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
        (0..count).map(|_| self.sample_point(rng)).collect()
    }

    fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.surface_distance(p)
    }

    fn is_empty(&self) -> bool {
        self.area() <= 0.0
    }
}

/// Seeded 3D gradient noise in roughly `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GradientNoise {
    perm: [u8; 512],
}

impl GradientNoise {
    pub fn new(seed: u64) -> Self {
        let mut p: Vec<u8> = (0..=255).collect();
        p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut perm = [0u8; 512];
        for i in 0..512 {
            perm[i] = p[i & 255];
        }
        Self { perm }
    }

    fn grad(hash: u8, x: f64, y: f64, z: f64) -> f64 {
        let h = hash & 15;
        let u = if h < 8 { x } else { y };
        let v = if h < 4 {
            y
        } else if h == 12 || h == 14 {
            x
        } else {
            z
        };
        (if h & 1 == 0 { u } else { -u }) + (if h & 2 == 0 { v } else { -v })
    }

    pub fn noise(&self, p: &Vector3<f64>) -> f64 {
        let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
        let lerp = |t: f64, a: f64, b: f64| a + t * (b - a);
        let fl = p.map(f64::floor);
        let cell = fl.map(|v| (v as i64).rem_euclid(256) as usize);
        let f = p - fl;
        let (u, v, w) = (fade(f.x), fade(f.y), fade(f.z));
        let pm = &self.perm;
        let a = pm[cell.x] as usize + cell.y;
        let aa = pm[a] as usize + cell.z;
        let ab = pm[a + 1] as usize + cell.z;
        let b = pm[cell.x + 1] as usize + cell.y;
        let ba = pm[b] as usize + cell.z;
        let bb = pm[b + 1] as usize + cell.z;
        let g = Self::grad;
        lerp(
            w,
            lerp(
                v,
                lerp(u, g(pm[aa], f.x, f.y, f.z), g(pm[ba], f.x - 1.0, f.y, f.z)),
                lerp(u, g(pm[ab], f.x, f.y - 1.0, f.z), g(pm[bb], f.x - 1.0, f.y - 1.0, f.z)),
            ),
            lerp(
                v,
                lerp(u, g(pm[aa + 1], f.x, f.y, f.z - 1.0), g(pm[ba + 1], f.x - 1.0, f.y, f.z - 1.0)),
                lerp(u, g(pm[ab + 1], f.x, f.y - 1.0, f.z - 1.0), g(pm[bb + 1], f.x - 1.0, f.y - 1.0, f.z - 1.0)),
            ),
        )
    }

    /// Sum of `octaves` bands starting at `frequency`.
    pub fn fractal(&self, p: &Vector3<f64>, frequency: f64, octaves: usize) -> f64 {
        let mut sum = 0.0;
        let mut amp = 1.0;
        let mut freq = frequency;
        let mut norm = 0.0;
        for o in 0..octaves {
            let offset = Vector3::new(17.3, 41.7, 7.1) * o as f64;
            sum += amp * self.noise(&(p * freq + offset));
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        sum / norm
    }
}

/// Solid texture: three noise channels mixed into colors within
/// `[0.1, 0.7]`, lit by a fixed directional light.
struct Shader {
    noise: [GradientNoise; 3],
    frequency: f64,
    light: Vector3<f64>,
}

impl Shader {
    fn new(seed: u64, frequency: f64) -> Self {
        Self {
            noise: [0, 1, 2].map(|k| GradientNoise::new(seed.wrapping_mul(31).wrapping_add(k))),
            frequency,
            light: Vector3::new(0.4, -0.5, 0.75).normalize(),
        }
    }

    fn albedo(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|c, _| {
            let n = self.noise[c].fractal(p, self.frequency, 3);
            0.4 + 0.3 * (2.2 * n).clamp(-1.0, 1.0)
        })
    }

    fn shade(&self, p: &Vector3<f64>, n: &Vector3<f64>) -> Vector3<f64> {
        self.albedo(p) * (0.7 + 0.3 * n.dot(&self.light).abs())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    TexturedPlane,
    Cube,
    Sphere,
    TwoPlanes,
}

impl std::str::FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "textured-plane" | "plane" => Self::TexturedPlane,
            "cube" => Self::Cube,
            "sphere" => Self::Sphere,
            "two-planes" => Self::TwoPlanes,
            _ => return Err(Error::Config(format!("unknown synthetic scene {s:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n_views: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Surface points sampled as the sparse point cloud.
    pub n_points: usize,
    /// Apply a random per-image `exp(a*)·I + b*` (image 0 stays unchanged).
    pub exposure_perturbation: bool,
    /// Rays per pixel side for anti-aliasing.
    pub supersample: usize,
    /// Color of rays that miss the shape.
    pub background: [f64; 3],
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            kind: SyntheticKind::Cube,
            n_views: 20,
            width: 64,
            height: 64,
            seed: 0,
            n_points: 500,
            exposure_perturbation: false,
            supersample: 3,
            background: [0.5; 3],
        }
    }
}

/// Builds a camera at `eye` looking at the origin whose image just holds a
/// ball of `radius` with a 10% margin.
fn framing_camera(eye: Vector3<f64>, radius: f64, up: Vector3<f64>, w: usize, h: usize, id: u32) -> Result<Camera> {
    let dist = eye.norm();
    let half_angle = (radius / dist).min(0.99).asin();
    let focal = 0.5 * w.min(h) as f64 / (1.1 * half_angle.tan());
    Camera::look_at(eye, Vector3::zeros(), up, focal, w, h, id)
}

/// Cameras on rings at the given elevations (degrees), alternating between
/// rings and spread evenly in azimuth.
fn ring_cameras(n: usize, dist: f64, elevations: &[f64], radius: f64, w: usize, h: usize) -> Result<Vec<Camera>> {
    let rings = elevations.len();
    let mut cams = Vec::with_capacity(n);
    for i in 0..n {
        let ring = i % rings;
        let slot = i / rings;
        let per_ring = n.div_ceil(rings);
        let az = 2.0 * std::f64::consts::PI * slot as f64 / per_ring as f64;
        let el = elevations[ring].to_radians();
        let eye = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * dist;
        cams.push(framing_camera(eye, radius, Vector3::z(), w, h, i as u32)?);
    }
    Ok(cams)
}

/// Renders the color, depth and normal of `shape` seen by `camera`.
fn trace_view(
    shape: &AnalyticShape,
    shader: &Shader,
    camera: &Camera,
    ss: usize,
    background: &Vector3<f64>,
) -> (Image, DepthMap, Image) {
    let (w, h) = (camera.width, camera.height);
    let rows: Vec<(Vec<f64>, Vec<Option<f64>>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut color = vec![0.0; 3 * w];
            let mut depth = vec![None; w];
            let mut normal = vec![0.0; 3 * w];
            for x in 0..w {
                let mut acc = Vector3::zeros();
                for sy in 0..ss {
                    for sx in 0..ss {
                        let off = |s: usize| (s as f64 + 0.5) / ss as f64 - 0.5;
                        let q = Vector2::new(x as f64 + off(sx), y as f64 + off(sy));
                        let dir = (camera.rotation() * camera.pixel_ray(&q)).normalize();
                        if let Some(hit) = shape.intersect(camera.center(), &dir) {
                            let p = camera.center() + dir * hit.t;
                            acc += shader.shade(&p, &hit.normal);
                        } else {
                            acc += background;
                        }
                    }
                }
                acc /= (ss * ss) as f64;
                for c in 0..3 {
                    color[3 * x + c] = acc[c];
                }
                let ray = camera.pixel_ray(&Vector2::new(x as f64, y as f64));
                let dir = camera.rotation() * ray;
                let len = dir.norm();
                if let Some(hit) = shape.intersect(camera.center(), &(dir / len)) {
                    // z-depth: the camera-frame ray has unit z
                    depth[x] = Some(hit.t / len);
                    let mut n = camera.rotation().transpose() * hit.normal;
                    if n.dot(&ray) > 0.0 {
                        n = -n;
                    }
                    for c in 0..3 {
                        normal[3 * x + c] = n[c];
                    }
                }
            }
            (color, depth, normal)
        })
        .collect();
    let mut color = Image::new(w, h, 3);
    let mut normals = Image::new(w, h, 3);
    let mut depth = DepthMap::from_fn(w, h, |_, _| None);
    for (y, (c, d, n)) in rows.into_iter().enumerate() {
        color.data[3 * w * y..3 * w * (y + 1)].copy_from_slice(&c);
        normals.data[3 * w * y..3 * w * (y + 1)].copy_from_slice(&n);
        depth.data[w * y..w * (y + 1)].copy_from_slice(&d);
    }
    (color, depth, normals)
}

/// Ground-truth shape and camera layout of each synthetic scene.
fn layout(spec: &SyntheticSpec) -> Result<(AnalyticShape, Vec<Camera>, f64)> {
    let (w, h, n) = (spec.width, spec.height, spec.n_views);
    Ok(match spec.kind {
        SyntheticKind::TexturedPlane => {
            let shape = AnalyticShape::rect(Vector3::zeros(), Vector3::z(), Vector3::x(), 1.0);
            let r = shape.bounding_radius();
            (shape, ring_cameras(n, 3.0, &[55.0], r * 0.75, w, h)?, 2.5)
        }
        SyntheticKind::TwoPlanes => {
            let floor = AnalyticShape::rect(Vector3::new(0.0, 0.0, -0.5), Vector3::z(), Vector3::x(), 1.0);
            let wall = AnalyticShape::rect(Vector3::new(-1.0, 0.0, 0.25), Vector3::x(), Vector3::y(), 0.75);
            let shape = AnalyticShape::Union(vec![floor, wall]);
            (shape, ring_cameras(n, 3.2, &[40.0], 1.3, w, h)?, 2.5)
        }
        SyntheticKind::Cube => {
            let shape = AnalyticShape::Cuboid {
                center: Vector3::zeros(),
                half: Vector3::repeat(0.5),
            };
            let r = shape.bounding_radius();
            (shape, ring_cameras(n, 2.5, &[35.0, -35.0], r, w, h)?, 5.0)
        }
        SyntheticKind::Sphere => {
            let shape = AnalyticShape::Sphere {
                center: Vector3::zeros(),
                radius: 1.0,
            };
            (shape, ring_cameras(n, 2.5, &[35.0, -35.0], 1.0, w, h)?, 2.5)
        }
    })
}

/// Renders a synthetic scene with exact ground truth.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<SceneBundle> {
    if spec.n_views < 2 {
        return Err(Error::Config("synthetic scenes need at least two views".into()));
    }
    if spec.width < 8 || spec.height < 8 || spec.supersample == 0 {
        return Err(Error::Config(format!("bad synthetic resolution {}x{}", spec.width, spec.height)));
    }
    let (shape, cameras, frequency) = layout(spec)?;
    let shader = Shader::new(spec.seed, frequency);
    let background = Vector3::from(spec.background);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed);

    let mut images = Vec::with_capacity(cameras.len());
    let mut depths = Vec::with_capacity(cameras.len());
    let mut normals = Vec::with_capacity(cameras.len());
    let mut exposure = Vec::with_capacity(cameras.len());
    for (i, cam) in cameras.iter().enumerate() {
        let (mut color, depth, normal) = trace_view(&shape, &shader, cam, spec.supersample, &background);
        let e = if spec.exposure_perturbation && i > 0 {
            ExposureParams::new(rng.gen_range(-0.3..=0.3), rng.gen_range(-0.05..=0.05))
        } else {
            ExposureParams::default()
        };
        if e != ExposureParams::default() {
            color = crate::losses::exposure_adjust(&color, &e);
        }
        images.push(color);
        depths.push(depth);
        normals.push(normal);
        exposure.push(e);
    }

    let mut points = PointSet::default();
    for _ in 0..spec.n_points {
        let p = shape.sample_point(&mut rng);
        points.positions.push(p);
        points.colors.push(shader.albedo(&p));
    }

    Ok(SceneBundle {
        view_ids: (0..cameras.len() as u32).collect(),
        cameras,
        images,
        points: Some(points),
        ground_truth: Some(GroundTruth {
            mesh: Some(shape.to_mesh()),
            shape: Some(shape),
            depths,
            normals,
            exposure,
        }),
        background: spec.background,
    })
}
