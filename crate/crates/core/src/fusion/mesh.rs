//! Indexed triangle meshes with PLY/OBJ input and output.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::ply::{read_ply, write_ply, Element, Field, Ply, PlyFormat, Property, ScalarType};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Option<Vec<Vector3<f64>>>,
}

/// Output encoding for [`TriangleMesh::save`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    PlyBinary,
    PlyAscii,
    Obj,
}

impl MeshFormat {
    /// Guesses from the file extension; `.ply` defaults to binary.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ply" => Some(Self::PlyBinary),
            "obj" => Some(Self::Obj),
            _ => None,
        }
    }
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[u32; 3]>) -> Self {
        Self {
            vertices,
            triangles,
            normals: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Vector3<f64>; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Drops triangles with repeated indices or (near-)zero area, then
    /// unreferenced vertices.
    pub fn remove_degenerate(&mut self, min_area: f64) {
        let keep: Vec<bool> = (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangles[t];
                a != b && b != c && a != c && self.triangle_area(t) > min_area
            })
            .collect();
        let mut it = keep.iter();
        self.triangles.retain(|_| *it.next().unwrap());
        self.compact();
    }

    /// Removes vertices no triangle refers to, preserving order.
    pub fn compact(&mut self) {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i as usize] = true;
            }
        }
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut next = 0u32;
        for (i, u) in used.iter().enumerate() {
            if *u {
                remap[i] = next;
                next += 1;
            }
        }
        let mut k = 0;
        self.vertices.retain(|_| {
            k += 1;
            used[k - 1]
        });
        if let Some(n) = &mut self.normals {
            let mut k = 0;
            n.retain(|_| {
                k += 1;
                used[k - 1]
            });
        }
        for t in &mut self.triangles {
            *t = t.map(|i| remap[i as usize]);
        }
    }

    /// Area-weighted vertex normals from the triangle winding.
    pub fn compute_vertex_normals(&mut self) {
        let mut n = vec![Vector3::zeros(); self.vertices.len()];
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.corners(t);
            let face = (b - a).cross(&(c - a));
            for &i in &self.triangles[t] {
                n[i as usize] += face;
            }
        }
        for v in &mut n {
            let l = v.norm();
            if l > 0.0 {
                *v /= l;
            }
        }
        self.normals = Some(n);
    }

    /// Draws `count` points uniformly by area.
    pub fn sample_points<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Vector3<f64>> {
        let mut cdf = Vec::with_capacity(self.triangles.len());
        let mut acc = 0.0;
        for t in 0..self.triangles.len() {
            acc += self.triangle_area(t);
            cdf.push(acc);
        }
        if acc <= 0.0 {
            return Vec::new();
        }
        (0..count)
            .map(|_| {
                let r = rng.gen::<f64>() * acc;
                let t = cdf.partition_point(|&c| c < r).min(cdf.len() - 1);
                let [a, b, c] = self.corners(t);
                let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                a + (b - a) * u + (c - a) * v
            })
            .collect()
    }

    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))))
    }

    pub fn save(&self, path: &Path, format: MeshFormat) -> Result<()> {
        match format {
            MeshFormat::PlyBinary => self.write_ply(path, PlyFormat::BinaryLittleEndian),
            MeshFormat::PlyAscii => self.write_ply(path, PlyFormat::Ascii),
            MeshFormat::Obj => self.write_obj(path),
        }
    }

    fn write_ply(&self, path: &Path, format: PlyFormat) -> Result<()> {
        let mut props = vec![
            Property::scalar("x", ScalarType::F32),
            Property::scalar("y", ScalarType::F32),
            Property::scalar("z", ScalarType::F32),
        ];
        if self.normals.is_some() {
            for n in ["nx", "ny", "nz"] {
                props.push(Property::scalar(n, ScalarType::F32));
            }
        }
        let mut verts = Element::new("vertex", props);
        for (i, v) in self.vertices.iter().enumerate() {
            let mut row: Vec<Field> = v.iter().map(|c| Field::Scalar(*c)).collect();
            if let Some(n) = &self.normals {
                row.extend(n[i].iter().map(|c| Field::Scalar(*c)));
            }
            verts.rows.push(row);
        }
        let mut faces = Element::new("face", vec![Property::list("vertex_indices", ScalarType::U8, ScalarType::I32)]);
        for t in &self.triangles {
            faces.rows.push(vec![Field::List(t.iter().map(|&i| i as f64).collect())]);
        }
        write_ply(
            path,
            &Ply {
                elements: vec![verts, faces],
            },
            format,
        )
    }

    fn write_obj(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for v in &self.vertices {
            writeln!(out, "v {} {} {}", v.x, v.y, v.z).unwrap();
        }
        if let Some(n) = &self.normals {
            for v in n {
                writeln!(out, "vn {} {} {}", v.x, v.y, v.z).unwrap();
            }
        }
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| i + 1);
            if self.normals.is_some() {
                writeln!(out, "f {a}//{a} {b}//{b} {c}//{c}").unwrap();
            } else {
                writeln!(out, "f {a} {b} {c}").unwrap();
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Reads a PLY or OBJ mesh (chosen by extension). Polygons are fanned
    /// into triangles.
    pub fn load(path: &Path) -> Result<Self> {
        match MeshFormat::from_path(path) {
            Some(MeshFormat::Obj) => Self::read_obj(path),
            Some(_) => Self::read_ply(path),
            None => Err(Error::Config(format!("{}: unknown mesh extension", path.display()))),
        }
    }

    fn read_ply(path: &Path) -> Result<Self> {
        let ply = read_ply(path)?;
        let verts = ply
            .element("vertex")
            .ok_or_else(|| Error::parse(path, 1, "no vertex element"))?;
        let ix = ["x", "y", "z"].map(|n| verts.property_index(n));
        let [Some(x), Some(y), Some(z)] = ix else {
            return Err(Error::parse(path, 1, "vertex element lacks x/y/z"));
        };
        let vertices: Vec<Vector3<f64>> = verts
            .rows
            .iter()
            .map(|r| Vector3::new(r[x].as_scalar(), r[y].as_scalar(), r[z].as_scalar()))
            .collect();
        let mut triangles = Vec::new();
        if let Some(faces) = ply.element("face") {
            let col = faces
                .property_index("vertex_indices")
                .or_else(|| faces.property_index("vertex_index"))
                .ok_or_else(|| Error::parse(path, 1, "face element lacks vertex_indices"))?;
            for row in &faces.rows {
                let Field::List(ids) = &row[col] else {
                    return Err(Error::parse(path, 1, "vertex_indices is not a list"));
                };
                push_polygon(&mut triangles, ids.iter().map(|&v| v as i64), vertices.len())
                    .map_err(|m| Error::parse(path, 1, m))?;
            }
        }
        Ok(Self::new(vertices, triangles))
    }

    fn read_obj(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it
                        .take(3)
                        .map(|s| s.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::parse(path, ln + 1, e.to_string()))?;
                    if c.len() != 3 {
                        return Err(Error::parse(path, ln + 1, "vertex needs three coordinates"));
                    }
                    vertices.push(Vector3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let ids: Vec<i64> = it
                        .map(|s| s.split('/').next().unwrap_or("").parse::<i64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::parse(path, ln + 1, e.to_string()))?;
                    let n = vertices.len() as i64;
                    let ids = ids.into_iter().map(|i| if i < 0 { n + i } else { i - 1 });
                    push_polygon(&mut triangles, ids, vertices.len()).map_err(|m| Error::parse(path, ln + 1, m))?;
                }
                _ => {}
            }
        }
        Ok(Self::new(vertices, triangles))
    }
}

fn push_polygon(out: &mut Vec<[u32; 3]>, ids: impl Iterator<Item = i64>, n_vertices: usize) -> std::result::Result<(), String> {
    let ids: Vec<i64> = ids.collect();
    if ids.len() < 3 {
        return Err(format!("face with {} vertices", ids.len()));
    }
    if let Some(bad) = ids.iter().find(|&&i| i < 0 || i as usize >= n_vertices) {
        return Err(format!("vertex index {bad} out of range"));
    }
    for k in 1..ids.len() - 1 {
        out.push([ids[0] as u32, ids[k] as u32, ids[k + 1] as u32]);
    }
    Ok(())
}
