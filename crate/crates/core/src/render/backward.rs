//! Reverse-mode differentiation of [`render`](super::render).

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::project::Projected;
use super::{splat_alpha, RenderMaps};
use crate::gaussians::{quat_matrix_backward, sh_basis, GaussianCloud, Quat, SH_C1};
use crate::geometry::Camera;

/// Upstream gradients of a scalar loss with respect to every output map.
#[derive(Clone, Debug, PartialEq)]
pub struct MapGradients {
    pub width: usize,
    pub height: usize,
    /// 3 per pixel.
    pub color: Vec<f64>,
    /// 3 per pixel, on the raw blended normal.
    pub normal: Vec<f64>,
    pub distance: Vec<f64>,
    pub depth: Vec<f64>,
    pub depth_zblend: Vec<f64>,
    pub accum_alpha: Vec<f64>,
}

impl MapGradients {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            color: vec![0.0; 3 * n],
            normal: vec![0.0; 3 * n],
            distance: vec![0.0; n],
            depth: vec![0.0; n],
            depth_zblend: vec![0.0; n],
            accum_alpha: vec![0.0; n],
        }
    }

    pub fn for_maps(maps: &RenderMaps) -> Self {
        Self::zeros(maps.width, maps.height)
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &MapGradients, scale: f64) {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let pairs = [
            (&mut self.color, &other.color),
            (&mut self.normal, &other.normal),
            (&mut self.distance, &other.distance),
            (&mut self.depth, &other.depth),
            (&mut self.depth_zblend, &other.depth_zblend),
            (&mut self.accum_alpha, &other.accum_alpha),
        ];
        for (a, b) in pairs {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += scale * y;
            }
        }
    }

    pub fn add_normal(&mut self, idx: usize, g: &Vector3<f64>) {
        for c in 0..3 {
            self.normal[3 * idx + c] += g[c];
        }
    }

    pub fn is_zero(&self) -> bool {
        [&self.color, &self.normal, &self.distance, &self.depth, &self.depth_zblend, &self.accum_alpha]
            .iter()
            .all(|v| v.iter().all(|x| *x == 0.0))
    }
}

/// Gradient accumulator mirroring [`GaussianCloud`], plus per-image exposure
/// gradients and the screen-space statistics used for densification.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradients {
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<Quat>,
    pub log_scales: Vec<Vector3<f64>>,
    pub opacity_logits: Vec<f64>,
    pub colors: Vec<Vector3<f64>>,
    pub sh: Option<Vec<[Vector3<f64>; 3]>>,
    /// `(d/da, d/db)` per image slot.
    pub exposure: Vec<[f64; 2]>,
    /// Norm of the per-pixel absolute gradients w.r.t. the projected center,
    /// in normalized device units.
    pub mean2d_abs: Vec<f64>,
    pub visible: Vec<bool>,
}

impl ParamGradients {
    pub fn zeros(cloud: &GaussianCloud, n_images: usize) -> Self {
        let n = cloud.len();
        Self {
            positions: vec![Vector3::zeros(); n],
            rotations: vec![[0.0; 4]; n],
            log_scales: vec![Vector3::zeros(); n],
            opacity_logits: vec![0.0; n],
            colors: vec![Vector3::zeros(); n],
            sh: cloud.sh.as_ref().map(|_| vec![[Vector3::zeros(); 3]; n]),
            exposure: vec![[0.0; 2]; n_images],
            mean2d_abs: vec![0.0; n],
            visible: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Accumulates another set of gradients of the same shape. Screen-space
    /// statistics add up and visibility is or-ed.
    pub fn accumulate(&mut self, other: &ParamGradients) {
        assert_eq!(self.len(), other.len());
        for i in 0..self.len() {
            self.positions[i] += other.positions[i];
            for k in 0..4 {
                self.rotations[i][k] += other.rotations[i][k];
            }
            self.log_scales[i] += other.log_scales[i];
            self.opacity_logits[i] += other.opacity_logits[i];
            self.colors[i] += other.colors[i];
            self.mean2d_abs[i] += other.mean2d_abs[i];
            self.visible[i] |= other.visible[i];
        }
        if let (Some(a), Some(b)) = (&mut self.sh, &other.sh) {
            for (x, y) in a.iter_mut().zip(b) {
                for k in 0..3 {
                    x[k] += y[k];
                }
            }
        }
        for (a, b) in self.exposure.iter_mut().zip(&other.exposure) {
            a[0] += b[0];
            a[1] += b[1];
        }
    }

    pub fn reset(&mut self) {
        let n = self.len();
        let images = self.exposure.len();
        let has_sh = self.sh.is_some();
        *self = ParamGradients {
            positions: vec![Vector3::zeros(); n],
            rotations: vec![[0.0; 4]; n],
            log_scales: vec![Vector3::zeros(); n],
            opacity_logits: vec![0.0; n],
            colors: vec![Vector3::zeros(); n],
            sh: has_sh.then(|| vec![[Vector3::zeros(); 3]; n]),
            exposure: vec![[0.0; 2]; images],
            mean2d_abs: vec![0.0; n],
            visible: vec![false; n],
        };
    }
}

/// Gradients w.r.t. the per-Gaussian quantities the blender consumes.
#[derive(Clone, Copy, Debug, Default)]
struct SplatGrad {
    color: Vector3<f64>,
    normal: Vector3<f64>,
    distance: f64,
    z: f64,
    opacity: f64,
    mean2d: Vector2<f64>,
    conic: Matrix2<f64>,
    mean2d_abs: Vector2<f64>,
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        self.color += o.color;
        self.normal += o.normal;
        self.distance += o.distance;
        self.z += o.z;
        self.opacity += o.opacity;
        self.mean2d += o.mean2d;
        self.conic += o.conic;
        self.mean2d_abs += o.mean2d_abs;
    }
}

struct Contribution {
    slot: usize,
    alpha: f64,
    t: f64,
    falloff: f64,
    clamped: bool,
}

/// Analytic gradients of a scalar loss with respect to all cloud parameters,
/// given its gradients with respect to the maps returned by `render` for the
/// same cloud and camera. Exposure gradients are left at zero (they belong to
/// the image loss).
pub fn backward(cloud: &GaussianCloud, camera: &Camera, maps: &RenderMaps, grads: &MapGradients) -> ParamGradients {
    assert_eq!((grads.width, grads.height), (maps.width, maps.height));
    let state = &maps.state;
    let cfg = state.config;
    let (w, h) = (maps.width, maps.height);
    let ts = cfg.tile_size;

    let per_tile: Vec<Vec<SplatGrad>> = state
        .tiles
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let mut local = vec![SplatGrad::default(); list.len()];
            if list.is_empty() {
                return local;
            }
            let tx = t % state.tiles_x;
            let ty = t / state.tiles_x;
            let mut contribs: Vec<Contribution> = Vec::new();
            for y in ty * ts..((ty + 1) * ts).min(h) {
                for x in tx * ts..((tx + 1) * ts).min(w) {
                    let idx = y * w + x;
                    backward_pixel(maps, grads, camera, list, x, y, idx, &mut contribs, &mut local);
                }
            }
            local
        })
        .collect();

    let mut splat_grads = vec![SplatGrad::default(); state.projected.len()];
    for (list, local) in state.tiles.iter().zip(&per_tile) {
        for (&k, g) in list.iter().zip(local) {
            splat_grads[k as usize].add(g);
        }
    }

    let mut out = ParamGradients::zeros(cloud, 0);
    let ndc = Vector2::new(0.5 * w as f64, 0.5 * h as f64);
    for (p, g) in state.projected.iter().zip(&splat_grads) {
        out.visible[p.index] = true;
        out.mean2d_abs[p.index] = g.mean2d_abs.component_mul(&ndc).norm();
        chain_to_parameters(cloud, camera, p, g, &mut out);
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn backward_pixel(
    maps: &RenderMaps,
    grads: &MapGradients,
    camera: &Camera,
    list: &[u32],
    x: usize,
    y: usize,
    idx: usize,
    contribs: &mut Vec<Contribution>,
    local: &mut [SplatGrad],
) {
    let state = &maps.state;
    let cfg = &state.config;
    let g_color = Vector3::new(grads.color[3 * idx], grads.color[3 * idx + 1], grads.color[3 * idx + 2]);
    let mut g_normal = Vector3::new(grads.normal[3 * idx], grads.normal[3 * idx + 1], grads.normal[3 * idx + 2]);
    let mut g_dist = grads.distance[idx];
    let g_z = grads.depth_zblend[idx];
    // the background enters as `(1 − accum) · bg`
    let g_accum = grads.accum_alpha[idx] - g_color.dot(&Vector3::from(cfg.background));
    let g_depth = grads.depth[idx];

    // depth = 𝒟 / (N · ray)
    if g_depth != 0.0 {
        let ray = camera.pixel_ray(&Vector2::new(x as f64, y as f64));
        let n = maps.normal_at(idx);
        let den = n.dot(&ray);
        if den.abs() >= cfg.eps_den {
            let dist = maps.distance[idx];
            g_dist += g_depth / den;
            g_normal -= ray * (g_depth * dist / (den * den));
        }
    }
    if g_color == Vector3::zeros() && g_normal == Vector3::zeros() && g_dist == 0.0 && g_z == 0.0 && g_accum == 0.0 {
        return;
    }

    contribs.clear();
    let mut t = 1.0;
    for (slot, &k) in list.iter().take(state.n_visited[idx] as usize).enumerate() {
        let g = &state.projected[k as usize];
        let Some((alpha, falloff, clamped)) = splat_alpha(g, x, y, cfg.alpha_max) else {
            continue;
        };
        contribs.push(Contribution {
            slot,
            alpha,
            t,
            falloff,
            clamped,
        });
        t *= 1.0 - alpha;
    }
    let final_t = state.final_t[idx];

    // suffix sum of w_m (g · f_m) over later contributors
    let mut suffix = 0.0;
    for c in contribs.iter().rev() {
        let g = &state.projected[list[c.slot] as usize];
        let wgt = c.t * c.alpha;
        let gf = g_color.dot(&g.color) + g_normal.dot(&g.normal.normal) + g_dist * g.distance + g_z * g.mean_cam.z;
        let one_minus = 1.0 - c.alpha;
        let d_alpha = c.t * gf - suffix / one_minus + g_accum * final_t / one_minus;
        suffix += wgt * gf;

        let acc = &mut local[c.slot];
        acc.color += g_color * wgt;
        acc.normal += g_normal * wgt;
        acc.distance += g_dist * wgt;
        acc.z += g_z * wgt;
        if !c.clamped {
            acc.opacity += d_alpha * c.falloff;
            let d_power = d_alpha * c.alpha;
            let delta = Vector2::new(x as f64 - g.mean2d.x, y as f64 - g.mean2d.y);
            let d_mean = g.conic * delta * d_power;
            acc.mean2d += d_mean;
            acc.mean2d_abs += d_mean.abs();
            acc.conic -= delta * delta.transpose() * (0.5 * d_power);
        }
    }
}

fn chain_to_parameters(cloud: &GaussianCloud, camera: &Camera, p: &Projected, g: &SplatGrad, out: &mut ParamGradients) {
    let i = p.index;
    let rc = camera.rotation();
    let k = camera.intrinsics();

    // opacity
    let op = p.opacity;
    out.opacity_logits[i] += g.opacity * op * (1.0 - op);

    // color
    let mut d_raw = g.color;
    for c in 0..3 {
        if !p.color_active[c] {
            d_raw[c] = 0.0;
        }
    }
    out.colors[i] += d_raw;
    let mut d_pos_world = Vector3::zeros();
    if let (Some(sh), Some(out_sh)) = (&cloud.sh, &mut out.sh) {
        let basis = sh_basis(&p.dir_unit);
        for kk in 0..3 {
            out_sh[i][kk] += d_raw * basis[kk];
        }
        let coeffs = &sh[i];
        let d_dir = Vector3::new(-coeffs[2].dot(&d_raw), -coeffs[0].dot(&d_raw), coeffs[1].dot(&d_raw)) * SH_C1;
        let u = p.dir_unit;
        d_pos_world += (d_dir - u * u.dot(&d_dir)) / p.dir_norm;
    }

    // plane distance d = nᵀ μ_cam, depth z = μ_cam.z
    let mut d_normal = g.normal + p.mean_cam * g.distance;
    let mut d_mean_cam = p.normal.normal * g.distance;
    d_mean_cam.z += g.z;

    // conic -> 2D covariance -> camera covariance and Jacobian
    let q = p.conic;
    let d_cov2d = -(q.transpose() * g.conic * q.transpose());
    let d_cov_cam = p.jac.transpose() * d_cov2d * p.jac;
    let d_jac = d_cov2d * p.jac * p.cov_cam.transpose() + d_cov2d.transpose() * p.jac * p.cov_cam;

    // Jacobian entries depend on the camera-frame mean
    let (fx, skew, fy) = (k[(0, 0)], k[(0, 1)], k[(1, 1)]);
    let m = p.mean_cam;
    let iz = 1.0 / m.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    d_mean_cam.x += d_jac[(0, 2)] * (-fx * iz2);
    d_mean_cam.y += d_jac[(0, 2)] * (-skew * iz2) + d_jac[(1, 2)] * (-fy * iz2);
    d_mean_cam.z += d_jac[(0, 0)] * (-fx * iz2)
        + d_jac[(0, 1)] * (-skew * iz2)
        + d_jac[(0, 2)] * (2.0 * (fx * m.x + skew * m.y) * iz3)
        + d_jac[(1, 1)] * (-fy * iz2)
        + d_jac[(1, 2)] * (2.0 * fy * m.y * iz3);

    // projected mean
    let dm = g.mean2d;
    d_mean_cam.x += dm.x * fx * iz;
    d_mean_cam.y += dm.x * skew * iz + dm.y * fy * iz;
    d_mean_cam.z += -dm.x * (fx * m.x + skew * m.y) * iz2 - dm.y * fy * m.y * iz2;

    d_pos_world += rc * d_mean_cam;
    out.positions[i] += d_pos_world;

    // Σ_cam = Rcᵀ Σ Rc ; Σ = M Mᵀ with M = R S
    let d_sigma = rc * d_cov_cam * rc.transpose();
    let rot = cloud.rotation_matrix(i);
    let scales = cloud.scales(i);
    let mmat = rot * Matrix3::from_diagonal(&scales);
    let d_m = (d_sigma + d_sigma.transpose()) * mmat;
    let mut d_rot = d_m * Matrix3::from_diagonal(&scales);
    for a in 0..3 {
        let ds = rot.column(a).dot(&d_m.column(a));
        out.log_scales[i][a] += ds * scales[a];
    }

    // n_cam = sign · Rcᵀ R[:, axis]
    d_normal *= p.normal.sign;
    let d_col = rc * d_normal;
    for r in 0..3 {
        d_rot[(r, p.normal.axis)] += d_col[r];
    }
    let dq = quat_matrix_backward(&cloud.rotations[i], &d_rot);
    for kk in 0..4 {
        out.rotations[i][kk] += dq[kk];
    }
}
