//! Marching cubes over the zero level set of a [`TsdfVolume`].
//!
//! Instead of a precomputed case table, each cell builds its polygon(s)
//! directly: every cube face contributes segments between its sign-change
//! edges, the segments close into loops, and the loops are fanned into
//! triangles. Faces with alternating corner signs always separate the
//! negative corners, which neighbors sharing the face agree on, so the
//! surface has no cracks.

use std::collections::HashMap;

use nalgebra::Vector3;
use rayon::prelude::*;

use super::mesh::TriangleMesh;
use super::tsdf::TsdfVolume;

/// Corner `c` sits at offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// Local edge id of the edge between two corners that differ in one bit:
/// `4 * axis + (lower corner with that bit removed)`.
fn edge_id(a: usize, b: usize) -> usize {
    let diff = a ^ b;
    let axis = diff.trailing_zeros() as usize;
    let low = a.min(b);
    // squeeze the axis bit out of the lower corner
    let rest = (low & ((1 << axis) - 1)) | ((low >> (axis + 1)) << axis);
    4 * axis + rest
}

fn edge_corners(e: usize) -> (usize, usize) {
    let axis = e / 4;
    let rest = e % 4;
    let low = (rest & ((1 << axis) - 1)) | ((rest >> axis) << (axis + 1));
    (low, low | (1 << axis))
}

/// The six faces as corner cycles.
const FACES: [[usize; 4]; 6] = [
    [0, 2, 6, 4],
    [1, 3, 7, 5],
    [0, 1, 5, 4],
    [2, 3, 7, 6],
    [0, 1, 3, 2],
    [4, 5, 7, 6],
];

/// Polygon loops (as local edge ids) for one cell given which corners are
/// negative.
fn cell_loops(negative: [bool; 8]) -> Vec<Vec<usize>> {
    let mut link: [Vec<usize>; 12] = Default::default();
    for face in FACES {
        let crossing: Vec<usize> = (0..4).filter(|&k| negative[face[k]] != negative[face[(k + 1) % 4]]).collect();
        match crossing.len() {
            2 => {
                let a = edge_id(face[crossing[0]], face[(crossing[0] + 1) % 4]);
                let b = edge_id(face[crossing[1]], face[(crossing[1] + 1) % 4]);
                link[a].push(b);
                link[b].push(a);
            }
            4 => {
                for k in 0..4 {
                    if negative[face[k]] {
                        let a = edge_id(face[(k + 3) % 4], face[k]);
                        let b = edge_id(face[k], face[(k + 1) % 4]);
                        link[a].push(b);
                        link[b].push(a);
                    }
                }
            }
            _ => {}
        }
    }
    let mut seen = [false; 12];
    let mut loops = Vec::new();
    for start in 0..12 {
        if seen[start] || link[start].is_empty() {
            continue;
        }
        debug_assert_eq!(link[start].len(), 2);
        let mut lp = vec![start];
        seen[start] = true;
        let mut prev = start;
        let mut cur = link[start][0];
        while cur != start {
            seen[cur] = true;
            lp.push(cur);
            let next = if link[cur][0] == prev { link[cur][1] } else { link[cur][0] };
            prev = cur;
            cur = next;
        }
        loops.push(lp);
    }
    loops
}

/// Triangulates the zero crossing. Cells with any unobserved (zero-weight)
/// corner are skipped; values `>= 0` count as outside.
pub fn extract_mesh(volume: &TsdfVolume) -> TriangleMesh {
    let [nx, ny, nz] = volume.dims;
    let key_of = |i: usize, j: usize, k: usize, axis: usize| (volume.index(i, j, k) * 3 + axis) as u64;
    let corner_key = |i: usize, j: usize, k: usize| (volume.len() * 3 + volume.index(i, j, k)) as u64;

    let slabs: Vec<(Vec<(u64, Vector3<f64>)>, Vec<[u64; 3]>)> = (0..nz.saturating_sub(1))
        .into_par_iter()
        .map(|k| {
            let mut verts = Vec::new();
            let mut tris = Vec::new();
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let mut vals = [0.0f64; 8];
                    let mut observed = true;
                    for (c, v) in vals.iter_mut().enumerate() {
                        let [a, b, d] = corner_offset(c);
                        let idx = volume.index(i + a, j + b, k + d);
                        if volume.weights[idx] <= 0.0 {
                            observed = false;
                            break;
                        }
                        *v = volume.tsdf[idx] as f64;
                    }
                    if !observed {
                        continue;
                    }
                    let negative = vals.map(|v| v < 0.0);
                    if negative.iter().all(|&n| n) || negative.iter().all(|&n| !n) {
                        continue;
                    }
                    for lp in cell_loops(negative) {
                        let mut pts = Vec::with_capacity(lp.len());
                        let mut keys = Vec::with_capacity(lp.len());
                        let mut outward = Vector3::zeros();
                        for &e in &lp {
                            let (c0, c1) = edge_corners(e);
                            let [a, b, d] = corner_offset(c0);
                            let axis = e / 4;
                            let t = vals[c0] / (vals[c0] - vals[c1]);
                            let p0 = volume.position(i + a, j + b, k + d);
                            let mut dir = Vector3::zeros();
                            dir[axis] = volume.voxel_size;
                            pts.push(p0 + dir * t);
                            // crossings exactly on a corner are shared by
                            // every edge meeting there
                            keys.push(if t == 0.0 {
                                corner_key(i + a, j + b, k + d)
                            } else if t == 1.0 {
                                let [a1, b1, d1] = corner_offset(c1);
                                corner_key(i + a1, j + b1, k + d1)
                            } else {
                                key_of(i + a, j + b, k + d, axis)
                            });
                            // from the negative corner toward the positive one
                            outward[axis] += if negative[c0] { 1.0 } else { -1.0 };
                        }
                        let mut normal = Vector3::zeros();
                        for m in 0..pts.len() {
                            normal += pts[m].cross(&pts[(m + 1) % pts.len()]);
                        }
                        if normal.dot(&outward) < 0.0 {
                            pts.reverse();
                            keys.reverse();
                        }
                        for m in 1..keys.len() - 1 {
                            tris.push([keys[0], keys[m], keys[m + 1]]);
                        }
                        verts.extend(keys.into_iter().zip(pts));
                    }
                }
            }
            (verts, tris)
        })
        .collect();

    let mut index: HashMap<u64, u32> = HashMap::new();
    let mut mesh = TriangleMesh::default();
    for (verts, tris) in slabs {
        for (key, p) in verts {
            index.entry(key).or_insert_with(|| {
                mesh.vertices.push(p);
                (mesh.vertices.len() - 1) as u32
            });
        }
        mesh.triangles.extend(tris.into_iter().map(|t| t.map(|k| index[&k])));
    }
    let vs = volume.voxel_size;
    mesh.remove_degenerate(1e-12 * vs * vs);
    mesh
}
