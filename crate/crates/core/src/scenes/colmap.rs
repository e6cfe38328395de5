//! COLMAP text-export reader (`cameras.txt`, `images.txt`, `points3D.txt`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};

use super::io::{read_image, PointSet};
use super::SceneBundle;
use crate::error::{Error, Result};
use crate::gaussians::quat_to_matrix;
use crate::geometry::Camera;

struct Intrinsics {
    width: usize,
    height: usize,
    k: Matrix3<f64>,
}

/// Non-empty, non-comment lines with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.starts_with('#'))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_fields<T: std::str::FromStr>(path: &Path, line: usize, fields: &[&str]) -> Result<Vec<T>> {
    fields
        .iter()
        .map(|f| f.parse::<T>().map_err(|_| Error::parse(path, line, format!("cannot parse {f:?}"))))
        .collect()
}

fn parse_cameras(path: &Path) -> Result<BTreeMap<u32, Intrinsics>> {
    let text = read_text(path)?;
    let mut out = BTreeMap::new();
    for (line, l) in content_lines(&text).filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() < 4 {
            return Err(Error::parse(path, line, "expected CAMERA_ID MODEL WIDTH HEIGHT PARAMS"));
        }
        let id: u32 = parse_fields(path, line, &f[0..1])?[0];
        let dims: Vec<usize> = parse_fields(path, line, &f[2..4])?;
        let params: Vec<f64> = parse_fields(path, line, &f[4..])?;
        let (fx, fy, cx, cy) = match (f[1], params.len()) {
            ("SIMPLE_PINHOLE", 3) => (params[0], params[0], params[1], params[2]),
            ("PINHOLE", 4) => (params[0], params[1], params[2], params[3]),
            ("SIMPLE_PINHOLE" | "PINHOLE", n) => {
                return Err(Error::parse(path, line, format!("{} takes a different parameter count than {n}", f[1])))
            }
            (model, _) => {
                return Err(Error::parse(path, line, Error::UnsupportedCameraModel(model.into()).to_string()))
            }
        };
        out.insert(
            id,
            Intrinsics {
                width: dims[0],
                height: dims[1],
                // COLMAP puts pixel centers at +0.5
                k: Matrix3::new(fx, 0.0, cx - 0.5, 0.0, fy, cy - 0.5, 0.0, 0.0, 1.0),
            },
        );
    }
    Ok(out)
}

struct ImageEntry {
    id: u32,
    rotation_w2c: Matrix3<f64>,
    translation: Vector3<f64>,
    camera: u32,
    name: String,
    line: usize,
}

fn parse_images(path: &Path) -> Result<Vec<ImageEntry>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    // each image is a header line followed by a (possibly empty) 2D point line
    let mut lines = content_lines(&text);
    while let Some((line, l)) = lines.next() {
        if l.is_empty() {
            continue;
        }
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() < 10 {
            return Err(Error::parse(path, line, "expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME"));
        }
        let ids: Vec<u32> = parse_fields(path, line, &[f[0], f[8]])?;
        let v: Vec<f64> = parse_fields(path, line, &f[1..8])?;
        let q = [v[0], v[1], v[2], v[3]];
        if q.iter().map(|x| x * x).sum::<f64>() < 1e-12 {
            return Err(Error::parse(path, line, "zero quaternion"));
        }
        out.push(ImageEntry {
            id: ids[0],
            rotation_w2c: quat_to_matrix(&q),
            translation: Vector3::new(v[4], v[5], v[6]),
            camera: ids[1],
            name: f[9..].join(" "),
            line,
        });
        lines.next();
    }
    Ok(out)
}

fn parse_points(path: &Path) -> Result<PointSet> {
    let text = read_text(path)?;
    let mut out = PointSet::default();
    for (line, l) in content_lines(&text).filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() < 8 {
            return Err(Error::parse(path, line, "expected POINT3D_ID X Y Z R G B ERROR TRACK"));
        }
        let xyz: Vec<f64> = parse_fields(path, line, &f[1..4])?;
        let rgb: Vec<u8> = parse_fields(path, line, &f[4..7])?;
        out.positions.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
        out.colors.push(Vector3::new(rgb[0], rgb[1], rgb[2]).map(|c| c as f64 / 255.0));
    }
    Ok(out)
}

/// Looks for an `images` directory next to the model or up to two levels
/// above it (the usual `sparse/0` layout).
fn image_dir(model: &Path) -> PathBuf {
    model
        .ancestors()
        .take(3)
        .map(|p| p.join("images"))
        .find(|p| p.is_dir())
        .unwrap_or_else(|| model.to_path_buf())
}

/// Loads a COLMAP text model from `dir`. World-to-camera poses `(R, t)`
/// become camera-to-world `(Rᵀ, -Rᵀt)`. Images are ordered by image id.
pub fn load_colmap_text(dir: &Path) -> Result<SceneBundle> {
    let cameras_path = dir.join("cameras.txt");
    let images_path = dir.join("images.txt");
    let intrinsics = parse_cameras(&cameras_path)?;
    let mut entries = parse_images(&images_path)?;
    entries.sort_by_key(|e| e.id);
    let images_dir = image_dir(dir);

    let mut scene = SceneBundle::default();
    for (i, e) in entries.iter().enumerate() {
        let intr = intrinsics
            .get(&e.camera)
            .ok_or_else(|| Error::parse(&images_path, e.line, format!("unknown camera id {}", e.camera)))?;
        let r_c = e.rotation_w2c.transpose();
        let center = -(r_c * e.translation);
        let camera = Camera::new(intr.k, r_c, center, intr.width, intr.height, i as u32)
            .map_err(|err| Error::parse(&images_path, e.line, err.to_string()))?;
        let image = read_image(&images_dir.join(&e.name))?;
        if image.width != intr.width || image.height != intr.height {
            return Err(Error::parse(
                &images_path,
                e.line,
                format!("{} is {}x{}, camera says {}x{}", e.name, image.width, image.height, intr.width, intr.height),
            ));
        }
        scene.cameras.push(camera);
        scene.images.push(image);
        scene.view_ids.push(e.id);
    }
    let points_path = dir.join("points3D.txt");
    if points_path.exists() {
        scene.points = Some(parse_points(&points_path)?);
    }
    Ok(scene)
}
