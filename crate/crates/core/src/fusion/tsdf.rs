//! Dense truncated signed distance volume with running-average integration.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;

use super::DepthMap;
use crate::error::{Error, Result};
use crate::geometry::Camera;

const MAGIC: &[u8; 8] = b"TSDFVOL\0";

/// Voxel `(i, j, k)` has its center at `origin + voxel_size · (i, j, k)` and
/// is stored at `i + dims.x · (j + dims.y · k)`. Positive values lie in front
/// of the observed surface.
#[derive(Clone, Debug, PartialEq)]
pub struct TsdfVolume {
    pub origin: Vector3<f64>,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub tsdf: Vec<f32>,
    pub weights: Vec<f32>,
}

impl TsdfVolume {
    pub fn new(origin: Vector3<f64>, voxel_size: f64, dims: [usize; 3]) -> Result<Self> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) || dims.iter().any(|&d| d < 2) {
            return Err(Error::Config(format!("bad volume: voxel {voxel_size}, dims {dims:?}")));
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .filter(|&n| n <= 1 << 30)
            .ok_or_else(|| Error::Config(format!("volume of {dims:?} voxels is too large")))?;
        Ok(Self {
            origin,
            voxel_size,
            dims,
            tsdf: vec![1.0; n],
            weights: vec![0.0; n],
        })
    }

    /// Smallest grid covering the box `[lo, hi]`.
    pub fn covering(lo: Vector3<f64>, hi: Vector3<f64>, voxel_size: f64) -> Result<Self> {
        let ext = hi - lo;
        let dims = [0, 1, 2].map(|a| ((ext[a] / voxel_size).ceil() as usize + 1).max(2));
        Self::new(lo, voxel_size, dims)
    }

    pub fn len(&self) -> usize {
        self.tsdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tsdf.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + Vector3::new(i as f64, j as f64, k as f64) * self.voxel_size
    }

    /// Fuses one depth map. Voxels projecting onto a valid depth with
    /// signed distance above `-trunc` receive an observation of
    /// `clamp(sdf / trunc, −1, 1)` with unit weight.
    pub fn integrate(&mut self, depth: &DepthMap, camera: &Camera, trunc: f64) {
        assert!(depth.width == camera.width && depth.height == camera.height);
        let (nx, ny) = (self.dims[0], self.dims[1]);
        let slab = nx * ny;
        let origin = self.origin;
        let vs = self.voxel_size;
        let (w, h) = (depth.width as f64, depth.height as f64);
        self.tsdf
            .par_chunks_mut(slab)
            .zip(self.weights.par_chunks_mut(slab))
            .enumerate()
            .for_each(|(k, (ts, ws))| {
                for j in 0..ny {
                    for i in 0..nx {
                        let p = origin + Vector3::new(i as f64, j as f64, k as f64) * vs;
                        let c = camera.world_to_camera(&p);
                        if c.z <= 0.0 {
                            continue;
                        }
                        let q = camera.project(&c);
                        let (u, v) = (q.x.round(), q.y.round());
                        if !(u >= 0.0 && v >= 0.0 && u < w && v < h) {
                            continue;
                        }
                        let Some(d) = depth.get(u as usize, v as usize) else {
                            continue;
                        };
                        let sdf = d - c.z;
                        if sdf <= -trunc {
                            continue;
                        }
                        let obs = (sdf / trunc).clamp(-1.0, 1.0);
                        let idx = i + nx * j;
                        let wt = ws[idx] as f64;
                        ts[idx] = ((ts[idx] as f64 * wt + obs) / (wt + 1.0)) as f32;
                        ws[idx] = (wt + 1.0) as f32;
                    }
                }
            });
    }

    /// Writes the documented little-endian dump: magic `TSDFVOL\0`, three
    /// `u32` dims, three `f64` origin components, `f64` voxel size, then all
    /// tsdf values and all weights as `f32`, x fastest.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(8 + 12 + 32 + 8 * self.len());
        out.extend_from_slice(MAGIC);
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in self.origin.iter().chain(std::iter::once(&self.voxel_size)) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.tsdf.iter().chain(&self.weights) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::Decode {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        };
        if bytes.len() < 52 || &bytes[..8] != MAGIC {
            return Err(bad("not a TSDF volume dump"));
        }
        let u = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let dims = [u(8), u(12), u(16)];
        let origin = Vector3::new(f(20), f(28), f(36));
        let voxel = f(44);
        let mut vol = Self::new(origin, voxel, dims)?;
        let n = vol.len();
        if bytes.len() != 52 + 8 * n {
            return Err(bad("truncated volume data"));
        }
        let bytes = &bytes;
        let floats = |o: usize| (0..n).map(move |k| f32::from_le_bytes(bytes[o + 4 * k..o + 4 * k + 4].try_into().unwrap()));
        vol.tsdf = floats(52).collect();
        vol.weights = floats(52 + 4 * n).collect();
        Ok(vol)
    }

    /// Replaces the contents with a clamped signed distance function, giving
    /// every voxel unit weight.
    pub fn fill_with(&mut self, sdf: impl Fn(&Vector3<f64>) -> f64 + Sync, trunc: f64) {
        let (nx, ny) = (self.dims[0], self.dims[1]);
        let origin = self.origin;
        let vs = self.voxel_size;
        self.tsdf.par_chunks_mut(nx * ny).enumerate().for_each(|(k, ts)| {
            for j in 0..ny {
                for i in 0..nx {
                    let p = origin + Vector3::new(i as f64, j as f64, k as f64) * vs;
                    ts[i + nx * j] = (sdf(&p) / trunc).clamp(-1.0, 1.0) as f32;
                }
            }
        });
        self.weights.iter_mut().for_each(|w| *w = 1.0);
    }
}
