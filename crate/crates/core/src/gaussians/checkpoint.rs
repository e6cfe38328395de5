//! Binary PLY checkpoints.
//!
//! One `vertex` element per Gaussian with `double` properties:
//! `x y z`, `rot_0..rot_3` (w, x, y, z), `scale_0..scale_2` (log scales),
//! `opacity` (logit), `f_dc_0..f_dc_2` (base RGB) and, when degree-1 SH is
//! enabled, `f_rest_0..f_rest_8` (basis-major: `f_rest_{3k+c}` is channel `c`
//! of basis function `k`).

use std::path::Path;

use nalgebra::Vector3;

use super::GaussianCloud;
use crate::error::{Error, Result};
use crate::ply::{read_ply, write_ply, Element, Field, Ply, PlyFormat, Property, ScalarType};

const BASE: [&str; 14] = [
    "x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3", "scale_0", "scale_1", "scale_2", "opacity", "f_dc_0",
    "f_dc_1", "f_dc_2",
];

pub fn save_checkpoint(path: &Path, cloud: &GaussianCloud) -> Result<()> {
    let mut names: Vec<String> = BASE.iter().map(|s| s.to_string()).collect();
    if cloud.sh.is_some() {
        names.extend((0..9).map(|k| format!("f_rest_{k}")));
    }
    let mut el = Element::new(
        "vertex",
        names.iter().map(|n| Property::scalar(n, ScalarType::F64)).collect(),
    );
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        let q = cloud.rotations[i];
        let s = cloud.log_scales[i];
        let c = cloud.colors[i];
        let mut row = vec![
            p.x, p.y, p.z, q[0], q[1], q[2], q[3], s.x, s.y, s.z, cloud.opacity_logits[i], c.x, c.y, c.z,
        ];
        if let Some(sh) = &cloud.sh {
            for k in 0..3 {
                row.extend(sh[i][k].iter());
            }
        }
        el.rows.push(row.into_iter().map(Field::Scalar).collect());
    }
    write_ply(path, &Ply { elements: vec![el] }, PlyFormat::BinaryLittleEndian)
}

pub fn load_checkpoint(path: &Path) -> Result<GaussianCloud> {
    let ply = read_ply(path)?;
    let el = ply
        .element("vertex")
        .ok_or_else(|| Error::parse(path, 1, "checkpoint has no vertex element"))?;
    let idx = |name: &str| {
        el.property_index(name)
            .ok_or_else(|| Error::parse(path, 1, format!("checkpoint is missing property {name}")))
    };
    let base: Vec<usize> = BASE.iter().map(|n| idx(n)).collect::<Result<_>>()?;
    let rest: Option<Vec<usize>> = (0..9)
        .map(|k| el.property_index(&format!("f_rest_{k}")))
        .collect();
    let mut cloud = GaussianCloud {
        sh: rest.as_ref().map(|_| Vec::with_capacity(el.rows.len())),
        ..Default::default()
    };
    for row in &el.rows {
        let v = |k: usize| row[base[k]].as_scalar();
        cloud.positions.push(Vector3::new(v(0), v(1), v(2)));
        cloud.rotations.push([v(3), v(4), v(5), v(6)]);
        cloud.log_scales.push(Vector3::new(v(7), v(8), v(9)));
        cloud.opacity_logits.push(v(10));
        cloud.colors.push(Vector3::new(v(11), v(12), v(13)));
        if let (Some(rest), Some(sh)) = (&rest, &mut cloud.sh) {
            let r = |k: usize| row[rest[k]].as_scalar();
            sh.push([
                Vector3::new(r(0), r(1), r(2)),
                Vector3::new(r(3), r(4), r(5)),
                Vector3::new(r(6), r(7), r(8)),
            ]);
        }
    }
    Ok(cloud)
}
