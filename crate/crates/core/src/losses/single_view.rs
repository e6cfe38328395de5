//! Edge-aware agreement between the rendered normal and the normal of the
//! local plane spanned by neighboring depth samples.

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::geometry::Camera;
use crate::image_buf::Image;
use crate::render::{MapGradients, RenderMaps};

const EPS_CROSS: f64 = 1e-12;

/// Per-pixel weight `(1 − ĝ)²`, with `ĝ` the central-difference gradient
/// magnitude of the grayscale image normalized by its maximum.
pub fn edge_weights(gray: &Image) -> Vec<f64> {
    assert_eq!(gray.channels, 1);
    let (w, h) = (gray.width, gray.height);
    let at = |x: isize, y: isize| gray.get(x.clamp(0, w as isize - 1) as usize, y.clamp(0, h as isize - 1) as usize, 0);
    let mut mag = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = 0.5 * (at(x + 1, y) - at(x - 1, y));
            let gy = 0.5 * (at(x, y + 1) - at(x, y - 1));
            mag[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    let max = mag.iter().cloned().fold(0.0, f64::max);
    mag.iter()
        .map(|m| {
            let g = if max > 0.0 { m / max } else { 0.0 };
            (1.0 - g) * (1.0 - g)
        })
        .collect()
}

/// Normal of the local plane through the back-projected depths of the
/// up/down/left/right neighbors, oriented toward the camera. `None` when
/// degenerate.
pub fn depth_normal(points: &[Vector3<f64>; 4]) -> Option<Vector3<f64>> {
    let [up, down, left, right] = points;
    let c = (down - up).cross(&(right - left));
    let n = c.norm();
    (n >= EPS_CROSS).then(|| c / n)
}

#[derive(Clone, Debug)]
pub struct SingleViewLoss {
    pub loss: f64,
    pub count: usize,
    /// Gradients on the `depth` and `normal` maps.
    pub grads: MapGradients,
}

struct PixelTerm {
    value: f64,
    center: usize,
    d_normal: Vector3<f64>,
    /// `(pixel, dL/ddepth)` for up, down, left, right.
    d_depth: [(usize, f64); 4],
}

/// `mean_p (1 − ĝ(p))² ‖N_d(p) − N(p)/|N(p)|‖₁` over pixels whose own depth
/// and four neighbors at `offset` are valid.
pub fn single_view_loss(maps: &RenderMaps, gt: &Image, camera: &Camera, offset: usize) -> SingleViewLoss {
    let (w, h) = (maps.width, maps.height);
    assert!(gt.width == w && gt.height == h);
    assert!(offset >= 1);
    let gray = if gt.channels == 1 { gt.clone() } else { gt.to_gray() };
    let weights = edge_weights(&gray);
    let k = offset;

    let terms: Vec<PixelTerm> = (k..h.saturating_sub(k))
        .into_par_iter()
        .flat_map_iter(|y| {
            let weights = &weights;
            (k..w.saturating_sub(k)).filter_map(move |x| {
                let idx = y * w + x;
                let nb = [idx - k * w, idx + k * w, idx - k, idx + k];
                if !maps.depth_valid[idx] || nb.iter().any(|&j| !maps.depth_valid[j]) {
                    return None;
                }
                let coords = [(x, y - k), (x, y + k), (x - k, y), (x + k, y)];
                let rays = coords.map(|(u, v)| camera.pixel_ray(&Vector2::new(u as f64, v as f64)));
                let pts = [0, 1, 2, 3].map(|j| rays[j] * maps.depth[nb[j]]);
                let a = pts[1] - pts[0];
                let b = pts[3] - pts[2];
                let c = a.cross(&b);
                let c_norm = c.norm();
                if c_norm < EPS_CROSS {
                    return None;
                }
                let nd = c / c_norm;
                let raw = maps.normal_at(idx);
                let raw_norm = raw.norm();
                if raw_norm < EPS_CROSS {
                    return None;
                }
                let n = raw / raw_norm;
                let diff = nd - n;
                let wt = weights[idx];
                let sgn = diff.map(|v| if v > 0.0 { wt } else if v < 0.0 { -wt } else { 0.0 });
                let g_c = (sgn - nd * nd.dot(&sgn)) / c_norm;
                let g_raw = -(sgn - n * n.dot(&sgn)) / raw_norm;
                let g_a = b.cross(&g_c);
                let g_b = g_c.cross(&a);
                let g_pts = [-g_a, g_a, -g_b, g_b];
                Some(PixelTerm {
                    value: wt * diff.abs().sum(),
                    center: idx,
                    d_normal: g_raw,
                    d_depth: [0, 1, 2, 3].map(|j| (nb[j], rays[j].dot(&g_pts[j]))),
                })
            })
        })
        .collect();

    let mut grads = MapGradients::for_maps(maps);
    let count = terms.len();
    if count == 0 {
        return SingleViewLoss { loss: 0.0, count, grads };
    }
    let inv = 1.0 / count as f64;
    let mut loss = 0.0;
    for t in &terms {
        loss += t.value;
        grads.add_normal(t.center, &(t.d_normal * inv));
        for (j, d) in t.d_depth {
            grads.depth[j] += d * inv;
        }
    }
    SingleViewLoss {
        loss: loss * inv,
        count,
        grads,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    fn camera() -> Camera {
        Camera::from_pinhole(50.0, 50.0, 15.5, 11.5, Matrix3::identity(), Vector3::zeros(), 32, 24, 0).unwrap()
    }

    /// Maps of the plane `n · x = d` (camera frame), fully opaque.
    fn plane_maps(cam: &Camera, n: Vector3<f64>, d: f64, rendered_normal: Vector3<f64>) -> RenderMaps {
        let (w, h) = (cam.width, cam.height);
        let normal = Image::from_fn(w, h, 3, |_, _, c| rendered_normal[c]);
        RenderMaps::from_parts(cam, Image::new(w, h, 3), normal, vec![d * rendered_normal.dot(&n); w * h], vec![1.0; w * h])
    }

    #[test]
    fn uniform_image_has_unit_weights() {
        let g = Image::filled(6, 5, 1, 0.3);
        assert!(edge_weights(&g).iter().all(|w| *w == 1.0));
    }

    #[test]
    fn frontal_plane_with_true_normal_gives_zero() {
        let cam = camera();
        let n = Vector3::new(0.0, 0.0, -1.0);
        let maps = plane_maps(&cam, n, -4.0, n);
        let gt = Image::filled(32, 24, 3, 0.5);
        let out = single_view_loss(&maps, &gt, &cam, 1);
        assert!(out.count > 0);
        assert!(out.loss.abs() < 1e-12);
    }

    #[test]
    fn tilted_plane_normal_is_recovered() {
        let cam = camera();
        let t = 30f64.to_radians();
        let n = Vector3::new(t.sin(), 0.0, -t.cos());
        let d = -3.0;
        let depth_at = |u: f64, v: f64| {
            let r = cam.pixel_ray(&Vector2::new(u, v));
            d / n.dot(&r)
        };
        for &(u, v) in &[(10.0, 10.0), (20.0, 5.0), (3.0, 18.0)] {
            let p = |du: f64, dv: f64| cam.pixel_ray(&Vector2::new(u + du, v + dv)) * depth_at(u + du, v + dv);
            let nd = depth_normal(&[p(0.0, -1.0), p(0.0, 1.0), p(-1.0, 0.0), p(1.0, 0.0)]).unwrap();
            assert!((nd - n).norm() < 1e-6, "{nd} vs {n}");
        }
        // through the loss: scale of the rendered normal does not matter
        let maps = plane_maps(&cam, n, d, n * 0.7);
        let out = single_view_loss(&maps, &Image::filled(32, 24, 1, 0.2), &cam, 1);
        assert!(out.loss < 1e-8, "{}", out.loss);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cam = camera();
        let n = Vector3::new(0.2, -0.1, -1.0).normalize();
        let base = plane_maps(&cam, n, -3.0, n);
        let mut maps = base.clone();
        // perturb normals and depths so each pixel term is away from kinks
        for idx in 0..maps.width * maps.height {
            let s = (idx as f64 * 0.37).sin();
            maps.depth[idx] *= 1.0 + 0.02 * s;
            maps.normal.data[3 * idx] += 0.1 + 0.05 * (idx as f64 * 0.11).cos();
            maps.normal.data[3 * idx + 1] += 0.07 * s;
        }
        let gt = Image::from_fn(32, 24, 3, |x, y, c| ((x * 3 + y * 5 + c) % 7) as f64 / 7.0);
        let out = single_view_loss(&maps, &gt, &cam, 1);
        let h = 1e-7;
        let f = |m: &RenderMaps| single_view_loss(m, &gt, &cam, 1).loss;
        for idx in (0..maps.width * maps.height).step_by(37) {
            let mut p = maps.clone();
            p.depth[idx] += h;
            let mut m = maps.clone();
            m.depth[idx] -= h;
            let num = (f(&p) - f(&m)) / (2.0 * h);
            assert!((num - out.grads.depth[idx]).abs() < 1e-5 * num.abs().max(1e-2), "depth {idx}: {num} vs {}", out.grads.depth[idx]);
            for c in 0..3 {
                let mut p = maps.clone();
                p.normal.data[3 * idx + c] += h;
                let mut m = maps.clone();
                m.normal.data[3 * idx + c] -= h;
                let num = (f(&p) - f(&m)) / (2.0 * h);
                let ana = out.grads.normal[3 * idx + c];
                assert!((num - ana).abs() < 1e-5 * num.abs().max(1e-2), "normal {idx}/{c}: {num} vs {ana}");
            }
        }
    }

    #[test]
    fn invalid_pixels_are_skipped() {
        let cam = camera();
        let n = Vector3::new(0.0, 0.0, -1.0);
        let mut maps = plane_maps(&cam, n, -4.0, n);
        maps.depth_valid.iter_mut().for_each(|v| *v = false);
        let out = single_view_loss(&maps, &Image::filled(32, 24, 1, 0.0), &cam, 1);
        assert_eq!(out.count, 0);
        assert_eq!(out.loss, 0.0);
        assert!(out.grads.is_zero());
    }
}
