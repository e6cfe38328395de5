//! Pinhole cameras, rigid transforms, plane-induced homographies and the
//! training-view neighbor graph.
//!
//! Poses are stored camera-to-world: a camera-frame point `x_c` sits at
//! `rotation * x_c + center` in the world. Camera axes follow the usual vision
//! convention (x right, y down, z forward) and pixel centers sit on integer
//! coordinates.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planes closer than this to the reference camera center are rejected.
pub const EPS_PLANE: f64 = 1e-8;

const ROTATION_TOL: f64 = 1e-9;
const MIN_IMAGE_SIDE: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    k: Matrix3<f64>,
    k_inv: Matrix3<f64>,
    rotation: Matrix3<f64>,
    center: Vector3<f64>,
    pub width: usize,
    pub height: usize,
    pub image_id: u32,
}

impl Camera {
    pub fn new(
        k: Matrix3<f64>,
        rotation: Matrix3<f64>,
        center: Vector3<f64>,
        width: usize,
        height: usize,
        image_id: u32,
    ) -> Result<Self> {
        if width < MIN_IMAGE_SIDE || height < MIN_IMAGE_SIDE {
            return Err(Error::InvalidCamera(format!(
                "image {width}x{height} is smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"
            )));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(Error::InvalidCamera("intrinsics are not upper-triangular".into()));
        }
        if !(k[(2, 2)] > 0.0) {
            return Err(Error::InvalidCamera("intrinsics K[2][2] must be positive".into()));
        }
        let k = k / k[(2, 2)];
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(Error::InvalidCamera("focal lengths must be positive".into()));
        }
        if k.iter().any(|v| !v.is_finite()) || center.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera("non-finite camera parameters".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::InvalidCamera(format!(
                "rotation is not orthonormal with det +1 (orthogonality error {ortho:e}, det {det})"
            )));
        }
        let k_inv = k
            .try_inverse()
            .ok_or_else(|| Error::InvalidCamera("singular intrinsics".into()))?;
        Ok(Self {
            k,
            k_inv,
            rotation,
            center,
            width,
            height,
            image_id,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_pinhole(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        center: Vector3<f64>,
        width: usize,
        height: usize,
        image_id: u32,
    ) -> Result<Self> {
        let k = Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0);
        Self::new(k, rotation, center, width, height, image_id)
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll (image y points
    /// away from it).
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
        image_id: u32,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("eye coincides with target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("up vector parallel to view direction".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        Self::from_pinhole(focal, focal, cx, cy, rotation, eye, width, height, image_id)
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.k
    }

    pub fn intrinsics_inv(&self) -> &Matrix3<f64> {
        &self.k_inv
    }

    /// Camera-to-world rotation.
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> &Vector3<f64> {
        &self.center
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }

    pub fn fx(&self) -> f64 {
        self.k[(0, 0)]
    }

    pub fn fy(&self) -> f64 {
        self.k[(1, 1)]
    }

    pub fn world_to_camera(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.tr_mul(&(point - self.center))
    }

    pub fn camera_to_world(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.center
    }

    /// Perspective projection of a camera-frame point to pixel coordinates.
    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let h = self.k * p;
        Vector2::new(h.x / h.z, h.y / h.z)
    }

    /// `K^-1 (u, v, 1)`: the camera-frame ray through a pixel, with z = 1.
    pub fn pixel_ray(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        self.k_inv * Vector3::new(pixel.x, pixel.y, 1.0)
    }

    pub fn contains_pixel(&self, p: &Vector2<f64>) -> bool {
        p.x >= -0.5
            && p.y >= -0.5
            && p.x <= self.width as f64 - 0.5
            && p.y <= self.height as f64 - 0.5
    }

    /// Rotation and translation taking reference-frame points into this
    /// camera's frame: `x_self = R x_ref + T`.
    pub fn relative_from(&self, reference: &Camera) -> (Matrix3<f64>, Vector3<f64>) {
        let r = self.rotation.transpose() * reference.rotation;
        let t = self.rotation.tr_mul(&(reference.center - self.center));
        (r, t)
    }
}

/// 3x3 map between homogeneous pixels of two views.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography(pub Matrix3<f64>);

impl Homography {
    /// Maps a pixel; `None` when it lands on the line at infinity.
    pub fn apply(&self, p: &Vector2<f64>) -> Option<Vector2<f64>> {
        let h = self.0 * Vector3::new(p.x, p.y, 1.0);
        if h.z.abs() < 1e-15 {
            None
        } else {
            Some(Vector2::new(h.x / h.z, h.y / h.z))
        }
    }

    /// Scaled so that `H[2][2] = 1` (when that entry is non-zero).
    pub fn normalized(&self) -> Homography {
        let s = self.0[(2, 2)];
        if s.abs() > 0.0 {
            Homography(self.0 / s)
        } else {
            *self
        }
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &Homography) -> Homography {
        Homography(self.0 * first.0)
    }
}

/// Homography induced by the plane `{x : planeᵀ x = 1}` (reference frame),
/// i.e. `K_n (R + T planeᵀ) K_r^-1` for `x_n = R x_r + T`.
pub(crate) fn plane_homography_matrix(
    k_ref_inv: &Matrix3<f64>,
    k_nbr: &Matrix3<f64>,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    plane: &Vector3<f64>,
) -> Matrix3<f64> {
    k_nbr * (r + t * plane.transpose()) * k_ref_inv
}

/// Homography from `reference` to `neighbor` pixels induced by the plane
/// `{x : n_rᵀ x = d_r}` expressed in the reference camera frame.
pub fn compute_homography(
    reference: &Camera,
    neighbor: &Camera,
    n_r: &Vector3<f64>,
    d_r: f64,
) -> Result<Homography> {
    if !(d_r > EPS_PLANE) {
        return Err(Error::DegeneratePlane(d_r));
    }
    let (r, t) = neighbor.relative_from(reference);
    let plane = n_r / d_r;
    Ok(Homography(plane_homography_matrix(
        reference.intrinsics_inv(),
        neighbor.intrinsics(),
        &r,
        &t,
        &plane,
    )))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewGraphParams {
    pub max_neighbors: usize,
    pub max_angle_deg: f64,
    pub min_dist: f64,
    pub max_dist: f64,
}

impl Default for ViewGraphParams {
    fn default() -> Self {
        Self {
            max_neighbors: 8,
            max_angle_deg: 30.0,
            min_dist: 0.01,
            max_dist: 1.5,
        }
    }
}

/// Per-view neighbor lists used by the multi-view losses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ViewGraph {
    pub neighbors: BTreeMap<u32, Vec<u32>>,
    pub params: ViewGraphParams,
}

/// Angle in degrees between two cameras' optical axes.
pub fn relative_angle_deg(a: &Camera, b: &Camera) -> f64 {
    a.forward().dot(&b.forward()).clamp(-1.0, 1.0).acos().to_degrees()
}

pub fn build_view_graph(cameras: &[Camera], params: ViewGraphParams) -> Result<ViewGraph> {
    if cameras.len() < 2 {
        return Err(Error::Config(
            "a view graph needs at least two cameras".into(),
        ));
    }
    let mut neighbors = BTreeMap::new();
    for reference in cameras {
        let mut candidates: Vec<(f64, f64, u32)> = cameras
            .iter()
            .filter(|c| c.image_id != reference.image_id)
            .filter_map(|c| {
                let angle = relative_angle_deg(reference, c);
                let dist = (c.center - reference.center).norm();
                (angle <= params.max_angle_deg && dist >= params.min_dist && dist <= params.max_dist)
                    .then_some((angle, dist, c.image_id))
            })
            .collect();
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        candidates.truncate(params.max_neighbors);
        neighbors.insert(
            reference.image_id,
            candidates.into_iter().map(|c| c.2).collect(),
        );
    }
    Ok(ViewGraph { neighbors, params })
}

impl ViewGraph {
    pub fn neighbors_of(&self, id: u32) -> &[u32] {
        self.neighbors.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Uniform draw from the neighbor list of `ref_id`.
    pub fn sample_neighbor<R: Rng + ?Sized>(&self, ref_id: u32, rng: &mut R) -> Option<u32> {
        let list = self.neighbors_of(ref_id);
        if list.is_empty() {
            None
        } else {
            Some(list[rng.gen_range(0..list.len())])
        }
    }
}
