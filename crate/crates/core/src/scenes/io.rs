//! Image, float-map and point-cloud files.
//!
//! Float maps are a 16-byte little-endian header (`b"FMAP"`, then `u32`
//! width, height and channel count) followed by `width · height · channels`
//! `f32` values, row-major with channels interleaved. Missing depths are
//! stored as NaN.

use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::image_buf::Image;
use crate::ply::{read_ply, write_ply, Element, Field, Ply, PlyFormat, Property, ScalarType};

const FMAP_MAGIC: &[u8; 4] = b"FMAP";

fn decode_err(path: &Path, e: impl ToString) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

/// Reads a PNG or PPM/PGM into RGB values in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = image::ImageFormat::from_path(path)
        .or_else(|_| image::guess_format(&bytes))
        .map_err(|e| decode_err(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, format).map_err(|e| decode_err(path, e))?;
    let rgb = img.to_rgb32f();
    let (w, h) = rgb.dimensions();
    Ok(Image {
        width: w as usize,
        height: h as usize,
        channels: 3,
        data: rgb.into_raw().into_iter().map(f64::from).collect(),
    })
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit image; the format follows the extension (`.png`, `.ppm`,
/// `.pgm`). One-channel images are written as grayscale, three-channel as
/// RGB. Values are clamped to `[0, 1]`.
pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    let (w, h) = (image.width as u32, image.height as u32);
    let result = match image.channels {
        1 => ImageBuffer::<Luma<u8>, _>::from_raw(w, h, image.data.iter().map(|v| quantize(*v)).collect::<Vec<_>>())
            .expect("buffer size")
            .save(path),
        3 => ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, image.data.iter().map(|v| quantize(*v)).collect::<Vec<_>>())
            .expect("buffer size")
            .save(path),
        c => return Err(Error::Config(format!("cannot write a {c}-channel image"))),
    };
    result.map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => decode_err(path, other),
    })
}

pub fn write_float_map(path: &Path, map: &Image) -> Result<()> {
    let mut out = Vec::with_capacity(16 + 4 * map.data.len());
    out.extend_from_slice(FMAP_MAGIC);
    for v in [map.width, map.height, map.channels] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in &map.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_float_map(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != FMAP_MAGIC {
        return Err(decode_err(path, "not a float map"));
    }
    let u = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (w, h, c) = (u(4), u(8), u(12));
    let n = w
        .checked_mul(h)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| decode_err(path, "float map header overflows"))?;
    if bytes.len() != 16 + 4 * n {
        return Err(decode_err(path, format!("expected {} data bytes, found {}", 4 * n, bytes.len() - 16)));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(Image {
        width: w,
        height: h,
        channels: c,
        data,
    })
}

/// Colored 3D points.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointSet {
    pub positions: Vec<Vector3<f64>>,
    /// RGB in `[0, 1]`.
    pub colors: Vec<Vector3<f64>>,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

pub fn write_points_ply(path: &Path, points: &PointSet) -> Result<()> {
    let mut el = Element::new(
        "vertex",
        vec![
            Property::scalar("x", ScalarType::F64),
            Property::scalar("y", ScalarType::F64),
            Property::scalar("z", ScalarType::F64),
            Property::scalar("red", ScalarType::U8),
            Property::scalar("green", ScalarType::U8),
            Property::scalar("blue", ScalarType::U8),
        ],
    );
    for (p, c) in points.positions.iter().zip(&points.colors) {
        let mut row: Vec<Field> = p.iter().map(|v| Field::Scalar(*v)).collect();
        row.extend(c.iter().map(|v| Field::Scalar(quantize(*v) as f64)));
        el.rows.push(row);
    }
    write_ply(path, &Ply { elements: vec![el] }, PlyFormat::BinaryLittleEndian)
}

/// Reads `x y z` and, when present, `red green blue` (8-bit or float).
pub fn read_points_ply(path: &Path) -> Result<PointSet> {
    let ply = read_ply(path)?;
    let el = ply.element("vertex").ok_or_else(|| Error::parse(path, 1, "no vertex element"))?;
    let [Some(x), Some(y), Some(z)] = ["x", "y", "z"].map(|n| el.property_index(n)) else {
        return Err(Error::parse(path, 1, "vertex element lacks x/y/z"));
    };
    let rgb = ["red", "green", "blue"].map(|n| el.property_index(n));
    let scale = match rgb[0].map(|i| &el.properties[i].kind) {
        Some(crate::ply::PropertyKind::Scalar(ScalarType::F32 | ScalarType::F64)) => 1.0,
        _ => 1.0 / 255.0,
    };
    let mut out = PointSet::default();
    for r in &el.rows {
        out.positions.push(Vector3::new(r[x].as_scalar(), r[y].as_scalar(), r[z].as_scalar()));
        out.colors.push(match rgb {
            [Some(a), Some(b), Some(c)] => Vector3::new(r[a].as_scalar(), r[b].as_scalar(), r[c].as_scalar()) * scale,
            _ => Vector3::repeat(0.5),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn png_and_ppm_round_trip_within_quantization() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Image::from_fn(13, 7, 3, |_, _, _| rng.gen());
        let dir = tempfile::tempdir().unwrap();
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            write_image(&p, &img).unwrap();
            let back = read_image(&p).unwrap();
            assert!(back.same_shape(&img));
            let err = back.data.iter().zip(&img.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 0.5 / 255.0 + 1e-6, "{name}: {err}");
        }
    }

    #[test]
    fn float_map_round_trip_is_exact() {
        let img = Image::from_fn(5, 4, 2, |x, y, c| (x as f32 * 0.1 + y as f32 - c as f32 * 1e-3) as f64);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.fmap");
        write_float_map(&p, &img).unwrap();
        assert_eq!(read_float_map(&p).unwrap(), img);
    }

    #[test]
    fn truncated_files_fail_to_decode() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.fmap");
        write_float_map(&p, &Image::new(4, 4, 1)).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(read_float_map(&p), Err(Error::Decode { .. })));

        let q = dir.path().join("i.png");
        write_image(&q, &Image::filled(8, 8, 3, 0.5)).unwrap();
        let bytes = fs::read(&q).unwrap();
        fs::write(&q, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(read_image(&q), Err(Error::Decode { .. })));
        assert!(matches!(read_image(&dir.path().join("missing.png")), Err(Error::Io { .. })));
    }

    #[test]
    fn points_round_trip() {
        let pts = PointSet {
            positions: vec![Vector3::new(1.0, 2.0, 3.0), Vector3::new(-0.5, 0.25, 1e-3)],
            colors: vec![Vector3::new(1.0, 0.0, 0.2), Vector3::new(0.5, 0.5, 0.5)],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.ply");
        write_points_ply(&p, &pts).unwrap();
        let back = read_points_ply(&p).unwrap();
        assert_eq!(back.positions, pts.positions);
        for (a, b) in back.colors.iter().zip(&pts.colors) {
            assert!((a - b).abs().max() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
