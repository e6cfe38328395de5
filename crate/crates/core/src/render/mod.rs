//! Tile-based software rasterizer for flattened Gaussians.
//!
//! One front-to-back alpha-blending pass produces color, the blended
//! viewer-facing normal `N`, the blended plane distance `𝒟`, the
//! ray-plane ("unbiased") depth `𝒟 / (N · K⁻¹p̃)`, the legacy z-blended depth
//! `Σ Tᵢ αᵢ zᵢ` and the accumulated opacity. [`backward`] differentiates all of
//! them analytically. Color is composited over a constant background; the
//! geometric maps are not.

mod backward;
mod project;

pub use backward::{backward, MapGradients, ParamGradients};
pub use project::{project_gaussian, Projection};

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::gaussians::GaussianCloud;
use crate::geometry::Camera;
use crate::image_buf::Image;
use project::{prepare, Projected};

/// Numerical guards of the rasterizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderConfig {
    pub tile_size: usize,
    /// Blending stops once transmittance would fall below this.
    pub t_stop: f64,
    pub alpha_max: f64,
    pub z_near: f64,
    /// Added to the diagonal of every 2D covariance (px²).
    pub dilation: f64,
    /// Footprint half-extent in standard deviations.
    pub footprint_sigma: f64,
    /// Minimum `|N · ray|` for a depth to be defined.
    pub eps_den: f64,
    /// Minimum accumulated opacity for a depth to be valid.
    pub alpha_min: f64,
    /// Color seen through the remaining transmittance.
    pub background: [f64; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            t_stop: 1e-4,
            alpha_max: 0.99,
            z_near: 0.01,
            dilation: 0.3,
            footprint_sigma: 3.0,
            eps_den: 1e-6,
            alpha_min: 0.5,
            background: [0.0; 3],
        }
    }
}

/// Per-pixel outputs of one render plus the bookkeeping its backward pass
/// needs.
#[derive(Clone, Debug)]
pub struct RenderMaps {
    pub width: usize,
    pub height: usize,
    pub color: Image,
    /// Blended camera-frame normal, not renormalized.
    pub normal: Image,
    pub distance: Vec<f64>,
    /// Ray-plane depth; defined wherever `|N · ray| >= eps_den`, zero elsewhere.
    pub depth: Vec<f64>,
    /// Depth validity: defined and `accum_alpha >= alpha_min`.
    pub depth_valid: Vec<bool>,
    pub depth_zblend: Vec<f64>,
    pub accum_alpha: Vec<f64>,
    pub(crate) state: RenderState,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct RenderState {
    pub config: RenderConfig,
    pub projected: Vec<Projected>,
    /// Per tile, indices into `projected` in blending order.
    pub tiles: Vec<Vec<u32>>,
    pub tiles_x: usize,
    /// Per pixel, how many entries of its tile list were visited.
    pub n_visited: Vec<u32>,
    pub final_t: Vec<f64>,
}

impl RenderMaps {
    #[inline]
    pub fn pixel_index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn normal_at(&self, idx: usize) -> Vector3<f64> {
        Vector3::new(self.normal.data[3 * idx], self.normal.data[3 * idx + 1], self.normal.data[3 * idx + 2])
    }

    pub fn color_at(&self, idx: usize) -> Vector3<f64> {
        Vector3::new(self.color.data[3 * idx], self.color.data[3 * idx + 1], self.color.data[3 * idx + 2])
    }

    /// Gaussian indices blended in each tile, front to back.
    pub fn tile_contributors(&self) -> Vec<Vec<usize>> {
        self.state
            .tiles
            .iter()
            .map(|t| t.iter().map(|&k| self.state.projected[k as usize].index).collect())
            .collect()
    }

    pub fn visible_count(&self) -> usize {
        self.state.projected.len()
    }

    pub fn config(&self) -> &RenderConfig {
        &self.state.config
    }

    /// Assembles maps from externally computed normal, distance and opacity
    /// buffers, deriving depth and validity the same way `render` does. Such
    /// maps carry no rasterization state, so `backward` on them is zero.
    pub fn from_parts(camera: &Camera, color: Image, normal: Image, distance: Vec<f64>, accum_alpha: Vec<f64>) -> Self {
        let (w, h) = (camera.width, camera.height);
        let n = w * h;
        assert!(color.width == w && color.height == h && color.channels == 3);
        assert!(normal.width == w && normal.height == h && normal.channels == 3);
        assert!(distance.len() == n && accum_alpha.len() == n);
        let cfg = RenderConfig::default();
        let mut depth = vec![0.0; n];
        let mut depth_valid = vec![false; n];
        for idx in 0..n {
            let nrm = Vector3::new(normal.data[3 * idx], normal.data[3 * idx + 1], normal.data[3 * idx + 2]);
            let den = nrm.dot(&camera.pixel_ray(&Vector2::new((idx % w) as f64, (idx / w) as f64)));
            if den.abs() >= cfg.eps_den {
                depth[idx] = distance[idx] / den;
                depth_valid[idx] = accum_alpha[idx] >= cfg.alpha_min;
            }
        }
        let final_t = accum_alpha.iter().map(|a| 1.0 - a).collect();
        RenderMaps {
            width: w,
            height: h,
            color,
            normal,
            distance,
            depth,
            depth_valid,
            depth_zblend: vec![0.0; n],
            accum_alpha,
            state: RenderState {
                config: cfg,
                tiles_x: w.div_ceil(cfg.tile_size),
                tiles: vec![Vec::new(); w.div_ceil(cfg.tile_size) * h.div_ceil(cfg.tile_size)],
                n_visited: vec![0; n],
                final_t,
                projected: Vec::new(),
            },
        }
    }

    /// Depth map with invalid pixels replaced by `None`.
    pub fn valid_depth(&self) -> Vec<Option<f64>> {
        self.depth
            .iter()
            .zip(&self.depth_valid)
            .map(|(&d, &v)| v.then_some(d))
            .collect()
    }
}

pub fn render(cloud: &GaussianCloud, camera: &Camera) -> RenderMaps {
    render_with(cloud, camera, &RenderConfig::default())
}

struct PixelOut {
    color: Vector3<f64>,
    normal: Vector3<f64>,
    distance: f64,
    zblend: f64,
    final_t: f64,
    n_visited: u32,
}

/// Alpha of projected Gaussian `g` at pixel `(x, y)`, or `None` outside its
/// footprint. Also returns the unclamped Gaussian falloff.
#[inline]
pub(crate) fn splat_alpha(g: &Projected, x: usize, y: usize, alpha_max: f64) -> Option<(f64, f64, bool)> {
    let [x0, x1, y0, y1] = g.bbox;
    if x < x0 || x > x1 || y < y0 || y > y1 {
        return None;
    }
    let d = Vector2::new(x as f64 - g.mean2d.x, y as f64 - g.mean2d.y);
    let q = &g.conic;
    let power = -0.5 * (q[(0, 0)] * d.x * d.x + (q[(0, 1)] + q[(1, 0)]) * d.x * d.y + q[(1, 1)] * d.y * d.y);
    let falloff = power.exp();
    let raw = g.opacity * falloff;
    if raw > alpha_max {
        Some((alpha_max, falloff, true))
    } else {
        Some((raw, falloff, false))
    }
}

pub fn render_with(cloud: &GaussianCloud, camera: &Camera, cfg: &RenderConfig) -> RenderMaps {
    let (w, h) = (camera.width, camera.height);
    let mut projected: Vec<Projected> = (0..cloud.len()).filter_map(|i| prepare(cloud, i, camera, cfg)).collect();
    // depth order; ties broken by position so the result does not depend on
    // insertion order
    projected.sort_by(|a, b| {
        a.mean_cam
            .z
            .total_cmp(&b.mean_cam.z)
            .then(a.mean_cam.x.total_cmp(&b.mean_cam.x))
            .then(a.mean_cam.y.total_cmp(&b.mean_cam.y))
    });

    let ts = cfg.tile_size;
    let tiles_x = w.div_ceil(ts);
    let tiles_y = h.div_ceil(ts);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (k, g) in projected.iter().enumerate() {
        let [x0, x1, y0, y1] = g.bbox;
        for ty in y0 / ts..=y1 / ts {
            for tx in x0 / ts..=x1 / ts {
                tiles[ty * tiles_x + tx].push(k as u32);
            }
        }
    }

    let tile_outputs: Vec<Vec<(usize, PixelOut)>> = tiles
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let tx = t % tiles_x;
            let ty = t / tiles_x;
            let mut out = Vec::with_capacity(ts * ts);
            for y in ty * ts..((ty + 1) * ts).min(h) {
                for x in tx * ts..((tx + 1) * ts).min(w) {
                    out.push((y * w + x, shade_pixel(&projected, list, x, y, cfg)));
                }
            }
            out
        })
        .collect();

    let n = w * h;
    let mut color = Image::new(w, h, 3);
    let mut normal = Image::new(w, h, 3);
    let mut distance = vec![0.0; n];
    let mut depth = vec![0.0; n];
    let mut depth_valid = vec![false; n];
    let mut depth_zblend = vec![0.0; n];
    let mut accum_alpha = vec![0.0; n];
    let mut n_visited = vec![0u32; n];
    let mut final_t = vec![1.0; n];
    for (idx, px) in tile_outputs.into_iter().flatten() {
        for c in 0..3 {
            color.data[3 * idx + c] = px.color[c];
            normal.data[3 * idx + c] = px.normal[c];
        }
        distance[idx] = px.distance;
        depth_zblend[idx] = px.zblend;
        accum_alpha[idx] = 1.0 - px.final_t;
        final_t[idx] = px.final_t;
        n_visited[idx] = px.n_visited;

        let ray = camera.pixel_ray(&Vector2::new((idx % w) as f64, (idx / w) as f64));
        let den = px.normal.dot(&ray);
        if den.abs() >= cfg.eps_den {
            depth[idx] = px.distance / den;
            depth_valid[idx] = accum_alpha[idx] >= cfg.alpha_min;
        }
    }

    RenderMaps {
        width: w,
        height: h,
        color,
        normal,
        distance,
        depth,
        depth_valid,
        depth_zblend,
        accum_alpha,
        state: RenderState {
            config: *cfg,
            projected,
            tiles,
            tiles_x,
            n_visited,
            final_t,
        },
    }
}

fn shade_pixel(projected: &[Projected], list: &[u32], x: usize, y: usize, cfg: &RenderConfig) -> PixelOut {
    let mut t = 1.0;
    let mut color = Vector3::zeros();
    let mut normal = Vector3::zeros();
    let mut distance = 0.0;
    let mut zblend = 0.0;
    let mut visited = 0u32;
    for &k in list {
        let g = &projected[k as usize];
        let Some((alpha, _, _)) = splat_alpha(g, x, y, cfg.alpha_max) else {
            visited += 1;
            continue;
        };
        let next_t = t * (1.0 - alpha);
        if next_t < cfg.t_stop {
            break;
        }
        visited += 1;
        let wgt = t * alpha;
        color += g.color * wgt;
        normal += g.normal.normal * wgt;
        distance += g.distance * wgt;
        zblend += g.mean_cam.z * wgt;
        t = next_t;
    }
    color += Vector3::from(cfg.background) * t;
    PixelOut {
        color,
        normal,
        distance,
        zblend,
        final_t: t,
        n_visited: visited,
    }
}

#[cfg(test)]
mod tests;
