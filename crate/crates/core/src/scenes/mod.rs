//! Scene loading, synthetic scenes with exact ground truth, and file IO.

mod colmap;
mod io;
mod manifest;
mod synthetic;

pub use colmap::load_colmap_text;
pub use io::{read_float_map, read_image, read_points_ply, write_float_map, write_image, write_points_ply, PointSet};
pub use manifest::{load_manifest, save_manifest, CameraEntry, GroundTruthEntry, Manifest};
pub use synthetic::{make_synthetic, AnalyticShape, GradientNoise, Hit, SyntheticKind, SyntheticSpec};

use std::path::Path;

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::fusion::{DepthMap, TriangleMesh};
use crate::geometry::Camera;
use crate::image_buf::Image;
use crate::losses::ExposureParams;
use crate::render::{RenderConfig, RenderMaps};

/// Known geometry of a scene; only synthetic scenes carry depth and normal
/// maps.
#[derive(Clone, Debug, Default)]
pub struct GroundTruth {
    pub shape: Option<AnalyticShape>,
    pub mesh: Option<TriangleMesh>,
    /// Per view z-depth, `None` where the ray misses.
    pub depths: Vec<DepthMap>,
    /// Per view camera-frame normals facing the viewer (zero on misses).
    pub normals: Vec<Image>,
    /// Brightness perturbation applied to each image.
    pub exposure: Vec<ExposureParams>,
}

/// Cameras, images and optional sparse points of one scene. Camera
/// `image_id`s are positions in these lists; `view_ids` keeps the ids of the
/// source dataset.
#[derive(Clone, Debug, Default)]
pub struct SceneBundle {
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub points: Option<PointSet>,
    pub ground_truth: Option<GroundTruth>,
    pub view_ids: Vec<u32>,
    /// Color of rays that hit nothing; renders are composited over it.
    pub background: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneFormat {
    Json,
    ColmapText,
}

impl SceneFormat {
    /// A directory holding `cameras.txt` is COLMAP text, anything else a JSON
    /// manifest.
    pub fn detect(path: &Path) -> Self {
        if path.is_dir() && path.join("cameras.txt").exists() {
            Self::ColmapText
        } else {
            Self::Json
        }
    }
}

impl std::str::FromStr for SceneFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" | "json-scene" => Ok(Self::Json),
            "colmap" | "colmap-text" => Ok(Self::ColmapText),
            _ => Err(Error::Config(format!("unknown scene format {s:?}"))),
        }
    }
}

pub fn load_scene(path: &Path, format: SceneFormat) -> Result<SceneBundle> {
    let scene = match format {
        SceneFormat::Json => load_manifest(path)?,
        SceneFormat::ColmapText => load_colmap_text(path)?,
    };
    scene.validate()?;
    Ok(scene)
}

/// Writes a JSON manifest plus PNG images (and points / reference mesh when
/// present) into `dir`.
pub fn save_scene(dir: &Path, scene: &SceneBundle) -> Result<()> {
    scene.validate()?;
    save_manifest(dir, scene)
}

impl SceneBundle {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(Error::Empty("scene has no cameras".into()));
        }
        if self.images.len() != self.cameras.len() {
            return Err(Error::Config(format!(
                "{} images for {} cameras",
                self.images.len(),
                self.cameras.len()
            )));
        }
        for (i, (c, img)) in self.cameras.iter().zip(&self.images).enumerate() {
            if c.image_id as usize != i {
                return Err(Error::Config(format!("camera {i} has image id {}", c.image_id)));
            }
            if img.width != c.width || img.height != c.height || img.channels != 3 {
                return Err(Error::Config(format!(
                    "image {i} is {}x{}x{}, camera expects {}x{}x3",
                    img.width, img.height, img.channels, c.width, c.height
                )));
            }
        }
        Ok(())
    }

    /// Axis-aligned bounds of the sparse points, or of the camera centers
    /// when there are none.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let pts: Vec<Vector3<f64>> = match &self.points {
            Some(p) if !p.is_empty() => p.positions.clone(),
            _ => self.cameras.iter().map(|c| *c.center()).collect(),
        };
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in &pts {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    /// Radius of the camera rig around its centroid, times 1.1; the usual
    /// scene-extent measure for densification thresholds.
    pub fn extent(&self) -> f64 {
        let n = self.cameras.len().max(1) as f64;
        let centroid = self.cameras.iter().map(|c| *c.center()).sum::<Vector3<f64>>() / n;
        let r = self
            .cameras
            .iter()
            .map(|c| (c.center() - centroid).norm())
            .fold(0.0, f64::max);
        if r > 0.0 {
            1.1 * r
        } else {
            1.0
        }
    }

    /// Default rasterizer settings over this scene's background.
    pub fn render_config(&self) -> RenderConfig {
        RenderConfig {
            background: self.background,
            ..Default::default()
        }
    }

    /// Render-style maps built from the exact depth and normals of view `i`,
    /// with full opacity on hits.
    pub fn ground_truth_maps(&self, i: usize) -> Option<RenderMaps> {
        let gt = self.ground_truth.as_ref()?;
        let (depth, normals) = (gt.depths.get(i)?, gt.normals.get(i)?);
        let cam = &self.cameras[i];
        let n = cam.width * cam.height;
        let mut distance = vec![0.0; n];
        let mut accum = vec![0.0; n];
        for idx in 0..n {
            let (x, y) = (idx % cam.width, idx / cam.width);
            if let Some(d) = depth.get(x, y) {
                let nrm = Vector3::new(normals.data[3 * idx], normals.data[3 * idx + 1], normals.data[3 * idx + 2]);
                distance[idx] = d * nrm.dot(&cam.pixel_ray(&Vector2::new(x as f64, y as f64)));
                accum[idx] = 1.0;
            }
        }
        Some(RenderMaps::from_parts(cam, self.images[i].clone(), normals.clone(), distance, accum))
    }

    pub fn grays(&self) -> Vec<Image> {
        self.images.iter().map(Image::to_gray).collect()
    }
}
