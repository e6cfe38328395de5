//! JSON scene manifest.
//!
//! ```json
//! {
//!   "cameras": [{"id": 0, "width": 64, "height": 64, "fx": 80, "fy": 80,
//!                "cx": 31.5, "cy": 31.5, "R_c": [1,0,0, 0,1,0, 0,0,1],
//!                "T_c": [0,0,-3], "image": "images/view_000.png"}],
//!   "points": "points.ply",
//!   "ground_truth": {"mesh": "reference.ply", "shape": {...}, "exposure": [[0, 0]]}
//! }
//! ```
//!
//! `R_c` is the camera-to-world rotation (row-major), `T_c` the camera
//! center. Paths are relative to the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::io::{read_image, read_points_ply, write_image, write_points_ply};
use super::{AnalyticShape, GroundTruth, SceneBundle};
use crate::error::{Error, Result};
use crate::fusion::TriangleMesh;
use crate::fusion::MeshFormat;
use crate::geometry::Camera;
use crate::losses::ExposureParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEntry {
    pub id: u32,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "R_c")]
    pub rotation: [f64; 9],
    #[serde(rename = "T_c")]
    pub center: [f64; 3],
    pub image: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<AnalyticShape>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exposure: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub cameras: Vec<CameraEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruthEntry>,
    /// RGB in `[0, 1]`; black when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<[f64; 3]>,
}

pub const MANIFEST_NAME: &str = "scene.json";

/// `path` is either the manifest file or a directory holding `scene.json`.
pub fn load_manifest(path: &Path) -> Result<SceneBundle> {
    let file = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::parse(&file, e.line(), e.to_string()))?;
    let root = file.parent().unwrap_or(Path::new("."));

    let mut scene = SceneBundle::default();
    for (i, entry) in manifest.cameras.iter().enumerate() {
        let r = Matrix3::from_row_slice(&entry.rotation);
        let camera = Camera::from_pinhole(
            entry.fx,
            entry.fy,
            entry.cx,
            entry.cy,
            r,
            Vector3::from(entry.center),
            entry.width,
            entry.height,
            i as u32,
        )
        .map_err(|e| Error::Config(format!("{}: camera {}: {e}", file.display(), entry.id)))?;
        let image = read_image(&root.join(&entry.image))?;
        scene.cameras.push(camera);
        scene.images.push(image);
        scene.view_ids.push(entry.id);
    }
    if let Some(bg) = manifest.background {
        if !bg.iter().all(|c| c.is_finite()) {
            return Err(Error::Config(format!("{}: background must be finite", file.display())));
        }
        scene.background = bg;
    }
    if let Some(p) = &manifest.points {
        scene.points = Some(read_points_ply(&root.join(p))?);
    }
    if let Some(gt) = &manifest.ground_truth {
        scene.ground_truth = Some(GroundTruth {
            shape: gt.shape.clone(),
            mesh: gt.mesh.as_ref().map(|m| TriangleMesh::load(&root.join(m))).transpose()?,
            exposure: gt.exposure.iter().map(|e| ExposureParams::new(e[0], e[1])).collect(),
            ..Default::default()
        });
    }
    Ok(scene)
}

pub fn save_manifest(dir: &Path, scene: &SceneBundle) -> Result<()> {
    fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir, e))?;
    let mut cameras = Vec::with_capacity(scene.len());
    for (i, (cam, img)) in scene.cameras.iter().zip(&scene.images).enumerate() {
        let rel = PathBuf::from(format!("images/view_{i:03}.png"));
        write_image(&dir.join(&rel), img)?;
        let k = cam.intrinsics();
        let r = cam.rotation();
        cameras.push(CameraEntry {
            id: scene.view_ids.get(i).copied().unwrap_or(i as u32),
            width: cam.width,
            height: cam.height,
            fx: k[(0, 0)],
            fy: k[(1, 1)],
            cx: k[(0, 2)],
            cy: k[(1, 2)],
            rotation: std::array::from_fn(|j| r[(j / 3, j % 3)]),
            center: (*cam.center()).into(),
            image: rel,
        });
    }
    let points = match &scene.points {
        Some(p) => {
            write_points_ply(&dir.join("points.ply"), p)?;
            Some(PathBuf::from("points.ply"))
        }
        None => None,
    };
    let ground_truth = match &scene.ground_truth {
        Some(gt) => {
            let mesh = match &gt.mesh {
                Some(m) => {
                    m.save(&dir.join("reference.ply"), MeshFormat::PlyBinary)?;
                    Some(PathBuf::from("reference.ply"))
                }
                None => None,
            };
            Some(GroundTruthEntry {
                mesh,
                shape: gt.shape.clone(),
                exposure: gt.exposure.iter().map(|e| [e.a, e.b]).collect(),
            })
        }
        None => None,
    };
    let manifest = Manifest {
        cameras,
        points,
        ground_truth,
        background: (scene.background != [0.0; 3]).then_some(scene.background),
    };
    let file = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&file, text).map_err(|e| Error::io(&file, e))
}
