//! Two-view consistency: forward-backward plane-induced reprojection error
//! and patch-based normalized cross correlation.
//!
//! Per-pixel planes are carried as `π = N / 𝒟` in the camera frame, so that
//! points on the plane satisfy `π · x = 1`. This is invariant to the blended
//! opacity that scales both `N` and `𝒟`.

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::Camera;
use crate::image_buf::Image;
use crate::render::{MapGradients, RenderMaps};

const EPS_DIST: f64 = 1e-9;
const EPS_W: f64 = 1e-9;
const EPS_VAR: f64 = 1e-12;

/// What the summed weighted errors are divided by.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiViewNormalization {
    /// Number of pixels with nonzero occlusion weight.
    #[default]
    Weighted,
    /// Number of sampled reference pixels with valid geometry.
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiViewParams {
    /// Evaluate every `stride`-th pixel in each direction.
    pub stride: usize,
    /// Patch half-size; 3 gives 7×7 patches.
    pub patch_radius: usize,
    pub normalization: MultiViewNormalization,
}

impl Default for MultiViewParams {
    fn default() -> Self {
        Self {
            stride: 1,
            patch_radius: 3,
            normalization: MultiViewNormalization::Weighted,
        }
    }
}

/// Occlusion weight of a round-trip error: `exp(−φ)` below one pixel, zero
/// otherwise.
pub fn occlusion_weight(phi: f64) -> f64 {
    if phi < 1.0 {
        (-phi).exp()
    } else {
        0.0
    }
}

/// Normalized cross correlation of two equally sized samples; 0 when either
/// has no variance.
pub fn ncc(a: &[f64], b: &[f64]) -> f64 {
    ncc_with_grad(a, b).0
}

/// NCC and its gradient with respect to `b`.
fn ncc_with_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut vab, mut vaa, mut vbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        vab += da * db;
        vaa += da * da;
        vbb += db * db;
    }
    if vaa < EPS_VAR || vbb < EPS_VAR {
        return (0.0, vec![0.0; b.len()]);
    }
    let denom = (vaa * vbb).sqrt();
    let c = vab / denom;
    // centering is absorbed: the gradient of a centered sum is already
    // orthogonal to constants
    let grad = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - ma) / denom - c * (y - mb) / vbb)
        .collect();
    (c, grad)
}

/// Cached pose and intrinsics of a reference/neighbor pair.
struct PairGeometry {
    k_ref: Matrix3<f64>,
    k_ref_inv: Matrix3<f64>,
    k_nbr: Matrix3<f64>,
    k_nbr_inv: Matrix3<f64>,
    /// Reference camera frame → neighbor camera frame.
    r: Matrix3<f64>,
    t: Vector3<f64>,
    /// Neighbor camera frame → reference camera frame.
    r_back: Matrix3<f64>,
    t_back: Vector3<f64>,
}

impl PairGeometry {
    fn new(reference: &Camera, neighbor: &Camera) -> Self {
        let (r, t) = neighbor.relative_from(reference);
        Self {
            k_ref: *reference.intrinsics(),
            k_ref_inv: *reference.intrinsics_inv(),
            k_nbr: *neighbor.intrinsics(),
            k_nbr_inv: *neighbor.intrinsics_inv(),
            r,
            t,
            r_back: r.transpose(),
            t_back: -(r.transpose() * t),
        }
    }

    /// Homogeneous neighbor pixel of reference pixel `p` on plane `pi`.
    fn forward(&self, p: &Vector2<f64>, pi: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let ray = self.k_ref_inv * Vector3::new(p.x, p.y, 1.0);
        (ray, self.k_nbr * (self.r * ray + self.t * pi.dot(&ray)))
    }
}

fn dehomogenize(a: &Vector3<f64>) -> Option<Vector2<f64>> {
    (a.z.abs() > EPS_W && a.z.is_finite()).then(|| Vector2::new(a.x / a.z, a.y / a.z))
}

/// Adjoint of `a ↦ (a.x / a.z, a.y / a.z)`.
fn dehomogenize_backward(a: &Vector3<f64>, g: &Vector2<f64>) -> Vector3<f64> {
    let iz = 1.0 / a.z;
    Vector3::new(g.x * iz, g.y * iz, -(g.x * a.x + g.y * a.y) * iz * iz)
}

fn plane_at(maps: &RenderMaps, idx: usize) -> Option<(Vector3<f64>, Vector3<f64>, f64)> {
    if !maps.depth_valid[idx] {
        return None;
    }
    let n = maps.normal_at(idx);
    let d = maps.distance[idx];
    (d.abs() > EPS_DIST).then(|| (n / d, n, d))
}

/// Adds the gradient on `π = N / 𝒟` at `idx` to the normal/distance maps.
fn scatter_plane_grad(grads: &mut MapGradients, idx: usize, n: &Vector3<f64>, d: f64, g_pi: &Vector3<f64>) {
    grads.add_normal(idx, &(g_pi / d));
    grads.distance[idx] -= g_pi.dot(n) / (d * d);
}

/// Reference pixel warped into the neighbor through its own plane, then
/// back through the plane the neighbor sees there.
struct RoundTrip {
    ray_r: Vector3<f64>,
    /// Homogeneous neighbor pixel.
    a: Vector3<f64>,
    nidx: usize,
    pi_n: Vector3<f64>,
    n_n: Vector3<f64>,
    d_n: f64,
    ray_n: Vector3<f64>,
    /// Homogeneous pixel back in the reference.
    b: Vector3<f64>,
    p_back: Vector2<f64>,
}

fn round_trip(geo: &PairGeometry, nbr_maps: &RenderMaps, p: &Vector2<f64>, pi_r: &Vector3<f64>) -> Option<RoundTrip> {
    let (nw, nh) = (nbr_maps.width, nbr_maps.height);
    let (ray_r, a) = geo.forward(p, pi_r);
    let p_n = dehomogenize(&a)?;
    let (qx, qy) = (p_n.x.round(), p_n.y.round());
    if qx < 0.0 || qy < 0.0 || qx > (nw - 1) as f64 || qy > (nh - 1) as f64 {
        return None;
    }
    let nidx = qy as usize * nw + qx as usize;
    let (pi_n, n_n, d_n) = plane_at(nbr_maps, nidx)?;
    let ray_n = geo.k_nbr_inv * Vector3::new(p_n.x, p_n.y, 1.0);
    let s = pi_n.dot(&ray_n);
    let b = geo.k_ref * (geo.r_back * ray_n + geo.t_back * s);
    let p_back = dehomogenize(&b)?;
    Some(RoundTrip {
        ray_r,
        a,
        nidx,
        pi_n,
        n_n,
        d_n,
        ray_n,
        b,
        p_back,
    })
}

/// Per-pixel forward-backward reprojection error of the reference view,
/// `None` where the reference depth is invalid or the warp leaves the
/// neighbor or lands on an invalid pixel.
pub fn round_trip_errors(
    ref_maps: &RenderMaps,
    nbr_maps: &RenderMaps,
    reference: &Camera,
    neighbor: &Camera,
) -> Vec<Option<f64>> {
    let geo = PairGeometry::new(reference, neighbor);
    (0..ref_maps.width * ref_maps.height)
        .into_par_iter()
        .map(|idx| {
            let (pi_r, _, _) = plane_at(ref_maps, idx)?;
            let p = Vector2::new((idx % ref_maps.width) as f64, (idx / ref_maps.width) as f64);
            let rt = round_trip(&geo, nbr_maps, &p, &pi_r)?;
            Some((rt.p_back - p).norm())
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct MultiViewLoss {
    pub geometric: f64,
    pub photometric: f64,
    /// Denominators actually used for each term.
    pub geometric_count: usize,
    pub photometric_count: usize,
    /// Geometric-term gradients on the reference and neighbor maps.
    pub geometric_ref: MapGradients,
    pub geometric_nbr: MapGradients,
    /// Photometric-term gradients on the reference maps.
    pub photometric_ref: MapGradients,
}

struct PixelTerm {
    ref_idx: usize,
    nbr_idx: usize,
    weight: f64,
    phi: f64,
    g_pi_ref: Vector3<f64>,
    g_pi_nbr: Vector3<f64>,
    ref_plane: (Vector3<f64>, f64),
    nbr_plane: (Vector3<f64>, f64),
    photo: Option<(f64, Vector3<f64>)>,
}

/// Evaluates both consistency terms between a reference view and one
/// neighbor. The occlusion weight comes from the geometric round trip and is
/// treated as a constant. `grays` are the ground-truth grayscale images of
/// the two views and are only needed for the photometric term.
pub fn multiview_losses(
    ref_maps: &RenderMaps,
    nbr_maps: &RenderMaps,
    reference: &Camera,
    neighbor: &Camera,
    grays: Option<(&Image, &Image)>,
    params: &MultiViewParams,
) -> MultiViewLoss {
    evaluate(ref_maps, nbr_maps, reference, neighbor, grays, params, occlusion_weight)
}

pub(crate) fn evaluate(
    ref_maps: &RenderMaps,
    nbr_maps: &RenderMaps,
    reference: &Camera,
    neighbor: &Camera,
    grays: Option<(&Image, &Image)>,
    params: &MultiViewParams,
    weight_of: fn(f64) -> f64,
) -> MultiViewLoss {
    let geo = PairGeometry::new(reference, neighbor);
    let (w, h) = (ref_maps.width, ref_maps.height);
    let stride = params.stride.max(1);
    let rad = params.patch_radius as isize;

    let rows: Vec<usize> = (0..h).step_by(stride).collect();
    let terms: Vec<(usize, Option<PixelTerm>)> = rows
        .par_iter()
        .flat_map_iter(|&y| {
            let geo = &geo;
            (0..w).step_by(stride).filter_map(move |x| {
                let idx = y * w + x;
                let (pi_r, n_r, d_r) = plane_at(ref_maps, idx)?;
                let p = Vector2::new(x as f64, y as f64);
                let term = (|| {
                    let RoundTrip {
                        ray_r,
                        a,
                        nidx,
                        pi_n,
                        n_n,
                        d_n,
                        ray_n,
                        b,
                        p_back,
                    } = round_trip(geo, nbr_maps, &p, &pi_r)?;
                    let e = p_back - p;
                    let phi = e.norm();
                    let weight = weight_of(phi);

                    let mut g_pi_ref = Vector3::zeros();
                    let mut g_pi_nbr = Vector3::zeros();
                    if weight > 0.0 && phi > 0.0 {
                        let g_b = dehomogenize_backward(&b, &(e / phi));
                        let g_inner = geo.k_ref.transpose() * g_b;
                        let g_s = geo.t_back.dot(&g_inner);
                        let g_ray_n = geo.r_back.transpose() * g_inner + pi_n * g_s;
                        g_pi_nbr = ray_n * g_s;
                        let g_pn3 = geo.k_nbr_inv.transpose() * g_ray_n;
                        let g_a = dehomogenize_backward(&a, &Vector2::new(g_pn3.x, g_pn3.y));
                        let g_inner_a = geo.k_nbr.transpose() * g_a;
                        g_pi_ref = ray_r * geo.t.dot(&g_inner_a);
                    }

                    let photo = if weight > 0.0 {
                        grays.and_then(|(gr, gn)| photometric_pixel(geo, gr, gn, x as isize, y as isize, rad, &pi_r))
                    } else {
                        None
                    };
                    Some(PixelTerm {
                        ref_idx: idx,
                        nbr_idx: nidx,
                        weight,
                        phi,
                        g_pi_ref,
                        g_pi_nbr,
                        ref_plane: (n_r, d_r),
                        nbr_plane: (n_n, d_n),
                        photo,
                    })
                })();
                Some((idx, term))
            })
        })
        .collect();

    let sampled = terms.len();
    let weighted = terms.iter().filter(|(_, t)| t.as_ref().is_some_and(|t| t.weight > 0.0)).count();
    let photo_weighted = terms
        .iter()
        .filter(|(_, t)| t.as_ref().is_some_and(|t| t.weight > 0.0 && t.photo.is_some()))
        .count();
    let (geo_count, photo_count) = match params.normalization {
        MultiViewNormalization::Weighted => (weighted, photo_weighted),
        MultiViewNormalization::Sampled => (sampled, sampled),
    };

    let mut out = MultiViewLoss {
        geometric: 0.0,
        photometric: 0.0,
        geometric_count: geo_count,
        photometric_count: photo_count,
        geometric_ref: MapGradients::for_maps(ref_maps),
        geometric_nbr: MapGradients::for_maps(nbr_maps),
        photometric_ref: MapGradients::for_maps(ref_maps),
    };
    let inv_geo = if geo_count > 0 { 1.0 / geo_count as f64 } else { 0.0 };
    let inv_photo = if photo_count > 0 { 1.0 / photo_count as f64 } else { 0.0 };
    for t in terms.iter().filter_map(|(_, t)| t.as_ref()) {
        if t.weight <= 0.0 {
            continue;
        }
        out.geometric += t.weight * t.phi * inv_geo;
        let s = t.weight * inv_geo;
        let (n_r, d_r) = t.ref_plane;
        let (n_n, d_n) = t.nbr_plane;
        scatter_plane_grad(&mut out.geometric_ref, t.ref_idx, &n_r, d_r, &(t.g_pi_ref * s));
        scatter_plane_grad(&mut out.geometric_nbr, t.nbr_idx, &n_n, d_n, &(t.g_pi_nbr * s));
        if let Some((value, g_pi)) = &t.photo {
            let s = t.weight * inv_photo;
            out.photometric += value * s;
            scatter_plane_grad(&mut out.photometric_ref, t.ref_idx, &n_r, d_r, &(g_pi * s));
        }
    }
    out
}

/// `1 − NCC` of the patch around `(x, y)` against its plane-induced warp, and
/// the gradient of that value with respect to the reference plane.
fn photometric_pixel(
    geo: &PairGeometry,
    ref_gray: &Image,
    nbr_gray: &Image,
    x: isize,
    y: isize,
    rad: isize,
    pi: &Vector3<f64>,
) -> Option<(f64, Vector3<f64>)> {
    let (w, h) = (ref_gray.width as isize, ref_gray.height as isize);
    if x - rad < 0 || y - rad < 0 || x + rad >= w || y + rad >= h {
        return None;
    }
    let side = (2 * rad + 1) as usize;
    let mut ref_vals = Vec::with_capacity(side * side);
    let mut nbr_vals = Vec::with_capacity(side * side);
    let mut local = Vec::with_capacity(side * side);
    for dy in -rad..=rad {
        for dx in -rad..=rad {
            let (u, v) = (x + dx, y + dy);
            let (ray, a) = geo.forward(&Vector2::new(u as f64, v as f64), pi);
            let q = dehomogenize(&a)?;
            let (val, grad) = nbr_gray.sample_bilinear(q.x, q.y, 0)?;
            ref_vals.push(ref_gray.get(u as usize, v as usize, 0));
            nbr_vals.push(val);
            local.push((ray, a, grad));
        }
    }
    let (c, d_c) = ncc_with_grad(&ref_vals, &nbr_vals);
    let mut g_pi = Vector3::zeros();
    for ((ray, a, grad), dc) in local.iter().zip(&d_c) {
        // d(1 − NCC)/dS = −dNCC/dS
        let g_q = Vector2::new(grad[0], grad[1]) * -dc;
        let g_a = dehomogenize_backward(a, &g_q);
        g_pi += ray * geo.t.dot(&(geo.k_nbr.transpose() * g_a));
    }
    Some((1.0 - c, g_pi))
}

/// Geometric term only.
pub fn multiview_geometric_loss(
    ref_maps: &RenderMaps,
    nbr_maps: &RenderMaps,
    reference: &Camera,
    neighbor: &Camera,
    params: &MultiViewParams,
) -> MultiViewLoss {
    multiview_losses(ref_maps, nbr_maps, reference, neighbor, None, params)
}

/// Photometric term; the neighbor maps supply the occlusion weights.
pub fn multiview_photometric_loss(
    ref_gray: &Image,
    nbr_gray: &Image,
    ref_maps: &RenderMaps,
    nbr_maps: &RenderMaps,
    reference: &Camera,
    neighbor: &Camera,
    params: &MultiViewParams,
) -> MultiViewLoss {
    multiview_losses(ref_maps, nbr_maps, reference, neighbor, Some((ref_gray, nbr_gray)), params)
}

#[cfg(test)]
mod tests;
