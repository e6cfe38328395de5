//! Mesh extraction from depth maps: normal-angle depth filtering, TSDF
//! integration, marching cubes, and chamfer evaluation.

mod chamfer;
mod marching;
mod mesh;
mod tsdf;

pub(crate) use chamfer::Grid;
pub use chamfer::{chamfer_distance, closest_point_on_triangle, ChamferReport, MeshSurface, PointSurface, Surface};
pub use marching::extract_mesh;
pub use mesh::{MeshFormat, TriangleMesh};
pub use tsdf::TsdfVolume;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::losses::depth_normal;
use crate::gaussians::GaussianCloud;
use crate::render::{render, RenderMaps};

/// Per-pixel z-depth with missing values.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Option<f64>>,
}

impl DepthMap {
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Option<f64>) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    /// Valid depths of a render.
    pub fn from_render(maps: &RenderMaps) -> Self {
        Self {
            width: maps.width,
            height: maps.height,
            data: maps.valid_depth(),
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.data[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| d.is_some()).count()
    }
}

/// Invalidates depths whose local plane (from the up/down/left/right
/// neighbors at `offset`) is seen at more than `max_angle_deg` from the
/// pixel ray, plus pixels within `offset` of the border. Pixels whose
/// neighbors are missing are kept untested, which makes the filter
/// idempotent.
pub fn filter_depth(depth: &DepthMap, camera: &Camera, offset: usize, max_angle_deg: f64) -> DepthMap {
    let (w, h) = (depth.width, depth.height);
    let k = offset.max(1);
    let cos_max = max_angle_deg.to_radians().cos();
    let mut out = depth.clone();
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            if depth.data[idx].is_none() {
                continue;
            }
            if x < k || y < k || x + k >= w || y + k >= h {
                out.data[idx] = None;
                continue;
            }
            let coords = [(x, y - k), (x, y + k), (x - k, y), (x + k, y)];
            let mut pts = [Vector3::zeros(); 4];
            let mut complete = true;
            for (j, &(u, v)) in coords.iter().enumerate() {
                match depth.get(u, v) {
                    Some(d) => pts[j] = camera.pixel_ray(&Vector2::new(u as f64, v as f64)) * d,
                    None => complete = false,
                }
            }
            if !complete {
                continue;
            }
            let ray = camera.pixel_ray(&Vector2::new(x as f64, y as f64));
            let keep = match depth_normal(&pts) {
                Some(n) => n.dot(&ray).abs() / ray.norm() >= cos_max,
                None => false,
            };
            if !keep {
                out.data[idx] = None;
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionParams {
    /// Voxel edge length; `None` picks 1/128 of the largest bounding-box side.
    pub voxel_size: Option<f64>,
    /// Truncation distance in voxels.
    pub trunc_voxels: f64,
    pub depth_filter: bool,
    pub filter_offset: usize,
    pub filter_max_angle_deg: f64,
    /// Extra margin on every side of the bounds, as a fraction of their
    /// longest side (flat bounds still get a volume around them).
    pub margin: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            voxel_size: None,
            trunc_voxels: 5.0,
            depth_filter: true,
            filter_offset: 1,
            filter_max_angle_deg: 80.0,
            margin: 0.05,
        }
    }
}

/// Filters (optionally), integrates and meshes a set of depth maps inside
/// the box `[lo, hi]`.
pub fn fuse_depth_maps(
    depths: &[DepthMap],
    cameras: &[Camera],
    lo: Vector3<f64>,
    hi: Vector3<f64>,
    params: &FusionParams,
) -> Result<(TsdfVolume, TriangleMesh)> {
    assert_eq!(depths.len(), cameras.len());
    let size = hi - lo;
    if !(size.min() >= 0.0 && size.max() > 0.0) {
        return Err(Error::Config(format!("empty fusion bounds {lo:?}..{hi:?}")));
    }
    let pad = Vector3::repeat(size.max() * params.margin);
    let (lo, hi) = (lo - pad, hi + pad);
    let voxel = params.voxel_size.unwrap_or((hi - lo).max() / 128.0);
    if !(params.trunc_voxels >= 2.0) {
        return Err(Error::Config("truncation must be at least two voxels".into()));
    }
    let trunc = params.trunc_voxels * voxel;
    let mut volume = TsdfVolume::covering(lo, hi, voxel)?;
    let mut any = false;
    for (d, cam) in depths.iter().zip(cameras) {
        let d = if params.depth_filter {
            filter_depth(d, cam, params.filter_offset, params.filter_max_angle_deg)
        } else {
            d.clone()
        };
        any |= d.valid_count() > 0;
        volume.integrate(&d, cam, trunc);
    }
    if !any {
        return Err(Error::Failed("no valid depth in any view".into()));
    }
    let mesh = extract_mesh(&volume);
    Ok((volume, mesh))
}

/// Renders the depth of `cloud` from every camera and fuses it.
pub fn mesh_from_cloud(
    cloud: &GaussianCloud,
    cameras: &[Camera],
    lo: Vector3<f64>,
    hi: Vector3<f64>,
    params: &FusionParams,
) -> Result<(TsdfVolume, TriangleMesh)> {
    if cloud.is_empty() {
        return Err(Error::Failed("cannot extract a mesh from zero Gaussians".into()));
    }
    let depths: Vec<DepthMap> = cameras.iter().map(|c| DepthMap::from_render(&render(cloud, c))).collect();
    fuse_depth_maps(&depths, cameras, lo, hi, params)
}
