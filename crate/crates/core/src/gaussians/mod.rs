//! The optimizable scene: flattened 3D Gaussians with per-Gaussian plane
//! geometry (normal along the shortest axis, signed plane distance).

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use nalgebra::{Matrix3, Vector3};

use crate::geometry::Camera;

/// Quaternion stored as `[w, x, y, z]`.
pub type Quat = [f64; 4];

/// Real spherical-harmonic constant of the degree-1 band.
pub const SH_C1: f64 = 0.488_602_511_902_919_9;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianCloud {
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<Quat>,
    pub log_scales: Vec<Vector3<f64>>,
    pub opacity_logits: Vec<f64>,
    /// Base RGB color.
    pub colors: Vec<Vector3<f64>>,
    /// Optional degree-1 SH coefficients: three RGB vectors per Gaussian for
    /// the `(-y, z, -x)` basis functions.
    pub sh: Option<Vec<[Vector3<f64>; 3]>>,
}

/// Plain values for one Gaussian, used when building or editing clouds.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    pub rotation: Quat,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
    pub sh: [Vector3<f64>; 3],
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn normalize_quat(q: &Quat) -> Quat {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if n == 0.0 {
        [1.0, 0.0, 0.0, 0.0]
    } else {
        [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
    }
}

/// Rotation matrix of the normalized quaternion.
pub fn quat_to_matrix(q: &Quat) -> Matrix3<f64> {
    let [w, x, y, z] = normalize_quat(q);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on the rotation matrix back to the raw (unnormalized)
/// quaternion.
pub fn quat_matrix_backward(q: &Quat, d_r: &Matrix3<f64>) -> Quat {
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let [w, x, y, z] = normalize_quat(q);
    let g = |r: usize, c: usize| d_r[(r, c)];
    let dw = 2.0
        * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    let dq = [dw, dx, dy, dz];
    let qn = [w, x, y, z];
    let radial: f64 = dq.iter().zip(&qn).map(|(a, b)| a * b).sum();
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = (dq[k] - qn[k] * radial) / norm;
    }
    out
}

/// Index of the smallest component; ties go to the lowest index.
pub fn argmin3(v: &Vector3<f64>) -> usize {
    let mut best = 0;
    for k in 1..3 {
        if v[k] < v[best] {
            best = k;
        }
    }
    best
}

/// Normal of a flattened Gaussian in a camera frame, with the sign chosen to
/// face the viewer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedNormal {
    pub normal: Vector3<f64>,
    /// Column of the Gaussian's rotation holding its shortest axis.
    pub axis: usize,
    /// +1 or -1 applied to that column.
    pub sign: f64,
}

impl GaussianCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn with_sh(mut self) -> Self {
        if self.sh.is_none() {
            self.sh = Some(vec![[Vector3::zeros(); 3]; self.len()]);
        }
        self
    }

    pub fn push(&mut self, g: Gaussian) {
        self.positions.push(g.position);
        self.rotations.push(g.rotation);
        self.log_scales.push(g.log_scale);
        self.opacity_logits.push(g.opacity_logit);
        self.colors.push(g.color);
        if let Some(sh) = &mut self.sh {
            sh.push(g.sh);
        }
    }

    pub fn get(&self, i: usize) -> Gaussian {
        Gaussian {
            position: self.positions[i],
            rotation: self.rotations[i],
            log_scale: self.log_scales[i],
            opacity_logit: self.opacity_logits[i],
            color: self.colors[i],
            sh: self.sh.as_ref().map(|s| s[i]).unwrap_or([Vector3::zeros(); 3]),
        }
    }

    /// Keeps the Gaussians whose mask entry is true.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        fn filt<T: Clone>(v: &mut Vec<T>, keep: &[bool]) {
            let mut it = keep.iter();
            v.retain(|_| *it.next().unwrap());
        }
        filt(&mut self.positions, keep);
        filt(&mut self.rotations, keep);
        filt(&mut self.log_scales, keep);
        filt(&mut self.opacity_logits, keep);
        filt(&mut self.colors, keep);
        if let Some(sh) = &mut self.sh {
            filt(sh, keep);
        }
    }

    pub fn scales(&self, i: usize) -> Vector3<f64> {
        self.log_scales[i].map(f64::exp)
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn rotation_matrix(&self, i: usize) -> Matrix3<f64> {
        quat_to_matrix(&self.rotations[i])
    }

    /// `R S Sᵀ Rᵀ`.
    pub fn covariance(&self, i: usize) -> Matrix3<f64> {
        let m = self.rotation_matrix(i) * Matrix3::from_diagonal(&self.scales(i));
        m * m.transpose()
    }

    pub fn renormalize_rotations(&mut self) {
        for q in &mut self.rotations {
            *q = normalize_quat(q);
        }
    }

    /// Camera-frame normal along the shortest axis, oriented so that it makes
    /// an obtuse angle with `view_dir` (a world-space direction from the
    /// camera toward the Gaussian).
    pub fn normal_in_camera(&self, i: usize, view_dir: &Vector3<f64>, camera: &Camera) -> OrientedNormal {
        let axis = argmin3(&self.log_scales[i]);
        let rot = self.rotation_matrix(i);
        let n_world = rot.column(axis).into_owned();
        let n_cam = camera.rotation().tr_mul(&n_world);
        let v_cam = camera.rotation().tr_mul(view_dir);
        let sign = if n_cam.dot(&v_cam) > 0.0 { -1.0 } else { 1.0 };
        OrientedNormal {
            normal: n_cam * sign,
            axis,
            sign,
        }
    }

    /// View direction from the camera center to the Gaussian center.
    pub fn view_dir(&self, i: usize, camera: &Camera) -> Vector3<f64> {
        self.positions[i] - camera.center()
    }

    /// Signed distance `nᵀ μ_cam` of the Gaussian's plane from the camera
    /// center, using the viewer-facing normal (negative for visible planes).
    pub fn plane_distance(&self, i: usize, camera: &Camera) -> f64 {
        let n = self.normal_in_camera(i, &self.view_dir(i, camera), camera);
        n.normal.dot(&camera.world_to_camera(&self.positions[i]))
    }

    /// View-dependent color before clamping.
    pub fn raw_color(&self, i: usize, dir_unit: &Vector3<f64>) -> Vector3<f64> {
        let mut c = self.colors[i];
        if let Some(sh) = &self.sh {
            let basis = sh_basis(dir_unit);
            for (k, b) in basis.iter().enumerate() {
                c += sh[i][k] * *b;
            }
        }
        c
    }
}

/// Degree-1 SH basis values for a unit direction.
pub fn sh_basis(d: &Vector3<f64>) -> [f64; 3] {
    [-SH_C1 * d.y, SH_C1 * d.z, -SH_C1 * d.x]
}

/// Flattening objective: mean over Gaussians of the smallest scale, with its
/// gradient on the log-scales (only the argmin axis receives gradient).
pub fn flatten_loss(cloud: &GaussianCloud) -> (f64, Vec<Vector3<f64>>) {
    let n = cloud.len();
    let mut grads = vec![Vector3::zeros(); n];
    if n == 0 {
        return (0.0, grads);
    }
    let inv = 1.0 / n as f64;
    let mut total = 0.0;
    for (i, g) in grads.iter_mut().enumerate() {
        let axis = argmin3(&cloud.log_scales[i]);
        let s = cloud.log_scales[i][axis].exp();
        total += s.abs();
        g[axis] = s * inv;
    }
    (total * inv, grads)
}
