//! Perspective projection of 3D Gaussians to screen-space splats.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::RenderConfig;
use crate::gaussians::{GaussianCloud, OrientedNormal};
use crate::geometry::Camera;

/// Screen-space footprint of one Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Camera-frame z of the center.
    pub depth_z: f64,
}

/// Everything the rasterizer and its backward pass need about a visible
/// Gaussian.
#[derive(Clone, Debug)]
pub(crate) struct Projected {
    pub index: usize,
    pub mean_cam: Vector3<f64>,
    pub mean2d: Vector2<f64>,
    pub cov_cam: Matrix3<f64>,
    pub jac: Matrix2x3<f64>,
    pub conic: Matrix2<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
    pub color_active: [bool; 3],
    pub dir_unit: Vector3<f64>,
    pub dir_norm: f64,
    pub normal: OrientedNormal,
    pub distance: f64,
    /// Inclusive pixel bounds `[x0, x1, y0, y1]` of the footprint.
    pub bbox: [usize; 4],
}

/// Jacobian of the pinhole projection at a camera-frame point.
pub(crate) fn projection_jacobian(k: &Matrix3<f64>, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let (fx, skew, fy) = (k[(0, 0)], k[(0, 1)], k[(1, 1)]);
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        fx * iz,
        skew * iz,
        -(fx * p.x + skew * p.y) * iz2,
        0.0,
        fy * iz,
        -fy * p.y * iz2,
    )
}

fn project_core(
    cloud: &GaussianCloud,
    i: usize,
    camera: &Camera,
    cfg: &RenderConfig,
) -> Option<(Vector3<f64>, Vector2<f64>, Matrix3<f64>, Matrix2x3<f64>, Matrix2<f64>)> {
    let mean_cam = camera.world_to_camera(&cloud.positions[i]);
    if !(mean_cam.z > cfg.z_near) {
        return None;
    }
    let mean2d = camera.project(&mean_cam);
    let w = camera.rotation().transpose();
    let cov_cam = w * cloud.covariance(i) * w.transpose();
    let jac = projection_jacobian(camera.intrinsics(), &mean_cam);
    let cov2d = jac * cov_cam * jac.transpose() + Matrix2::identity() * cfg.dilation;
    Some((mean_cam, mean2d, cov_cam, jac, cov2d))
}

/// Projects Gaussian `i`; `None` when it is behind the near plane or its
/// footprint misses the image.
pub fn project_gaussian(cloud: &GaussianCloud, i: usize, camera: &Camera) -> Option<Projection> {
    let cfg = RenderConfig::default();
    let (mean_cam, mean2d, _, _, cov2d) = project_core(cloud, i, camera, &cfg)?;
    footprint_bbox(&mean2d, &cov2d, camera, cfg.footprint_sigma)?;
    Some(Projection {
        mean2d,
        cov2d,
        depth_z: mean_cam.z,
    })
}

fn footprint_bbox(mean2d: &Vector2<f64>, cov2d: &Matrix2<f64>, camera: &Camera, sigma: f64) -> Option<[usize; 4]> {
    let a = cov2d[(0, 0)];
    let b = cov2d[(0, 1)];
    let c = cov2d[(1, 1)];
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = (sigma * lambda_max.sqrt()).ceil();
    let x0 = (mean2d.x - radius).ceil().max(0.0);
    let x1 = (mean2d.x + radius).floor().min(camera.width as f64 - 1.0);
    let y0 = (mean2d.y - radius).ceil().max(0.0);
    let y1 = (mean2d.y + radius).floor().min(camera.height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some([x0 as usize, x1 as usize, y0 as usize, y1 as usize])
}

pub(crate) fn prepare(cloud: &GaussianCloud, i: usize, camera: &Camera, cfg: &RenderConfig) -> Option<Projected> {
    let (mean_cam, mean2d, cov_cam, jac, cov2d) = project_core(cloud, i, camera, cfg)?;
    let bbox = footprint_bbox(&mean2d, &cov2d, camera, cfg.footprint_sigma)?;
    let conic = cov2d.try_inverse()?;
    let view = cloud.view_dir(i, camera);
    let dir_norm = view.norm();
    let dir_unit = view / dir_norm;
    let raw = cloud.raw_color(i, &dir_unit);
    let color_active = [0, 1, 2].map(|c| (0.0..=1.0).contains(&raw[c]));
    let color = raw.map(|v| v.clamp(0.0, 1.0));
    let normal = cloud.normal_in_camera(i, &view, camera);
    let distance = normal.normal.dot(&mean_cam);
    Some(Projected {
        index: i,
        mean_cam,
        mean2d,
        cov_cam,
        jac,
        conic,
        opacity: cloud.opacity(i),
        color,
        color_active,
        dir_unit,
        dir_norm,
        normal,
        distance,
        bbox,
    })
}
