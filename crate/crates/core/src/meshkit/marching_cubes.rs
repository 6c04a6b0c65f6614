//! Iso-surface extraction on a regular grid.
//!
//! Instead of the usual 256-entry triangle table, each active cube traces the
//! iso-contour on its six faces and closes it into loops, which are then
//! fan-triangulated. Ambiguous faces are resolved with the face-centre mean,
//! which both cubes sharing the face evaluate identically, so the output is
//! watertight and consistently oriented. Normals point from the region above
//! the iso value toward the region below it.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use super::{MeshError, TriMesh};
use crate::volumes::Volume;

const EDGE_T_MARGIN: f64 = 1e-3;

/// Corner `c` sits at offset `(c & 1, c >> 1 & 1, c >> 2 & 1)` in `(x, y, z)`.
fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

struct CubeTopology {
    /// Corner pairs `(low, high)` of the twelve edges.
    edges: [(usize, usize); 12],
    /// Four corners per face, counter-clockwise seen from outside.
    faces: [[usize; 4]; 6],
}

impl CubeTopology {
    fn new() -> Self {
        let mut edges = [(0, 0); 12];
        let mut n = 0;
        for axis in 0..3 {
            for c in 0..8 {
                if c & (1 << axis) == 0 {
                    edges[n] = (c, c | (1 << axis));
                    n += 1;
                }
            }
        }
        let mut faces = [[0; 4]; 6];
        let mut n = 0;
        for axis in 0..3 {
            let (u, v) = match axis {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            for side in 0..2 {
                let base = side << axis;
                let mut cyc = [
                    base,
                    base | (1 << u),
                    base | (1 << u) | (1 << v),
                    base | (1 << v),
                ];
                let mut eu = Vector3::zeros();
                eu[u] = 1.0;
                let mut ev = Vector3::zeros();
                ev[v] = 1.0;
                let mut normal = Vector3::zeros();
                normal[axis] = if side == 1 { 1.0 } else { -1.0 };
                if eu.cross(&ev).dot(&normal) < 0.0 {
                    cyc.reverse();
                }
                faces[n] = cyc;
                n += 1;
            }
        }
        Self { edges, faces }
    }

    fn edge_between(&self, a: usize, b: usize) -> usize {
        let key = (a.min(b), a.max(b));
        self.edges
            .iter()
            .position(|&e| e == key)
            .expect("adjacent corners")
    }
}

/// Extracts the `iso_value` surface of a CT or mask volume.
pub fn marching_cubes(volume: &Volume, iso_value: f64) -> Result<TriMesh, MeshError> {
    marching_cubes_field(
        volume.dims,
        volume.spacing,
        volume.origin,
        iso_value,
        |k, j, i| volume.get(k, j, i) as f64,
    )
}

/// Extracts an iso-surface from any scalar field sampled on a grid.
///
/// `dims`, `spacing` and `origin` are in `(z, y, x)` order; sample
/// `(k, j, i)` lies at `x = ox + i·sx`, `y = oy + j·sy`, `z = oz + k·sz`.
/// Output vertex coordinates are `(x, y, z)` in mm.
pub fn marching_cubes_field(
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    iso_value: f64,
    value: impl Fn(usize, usize, usize) -> f64,
) -> Result<TriMesh, MeshError> {
    let [nz, ny, nx] = dims;
    if nz < 2 || ny < 2 || nx < 2 {
        return Err(MeshError::EmptySurface);
    }
    let topo = CubeTopology::new();
    let sample = |p: [usize; 3]| value(p[2], p[1], p[0]);
    let position = |p: [usize; 3]| {
        Vector3::new(
            origin[2] + p[0] as f64 * spacing[2],
            origin[1] + p[1] as f64 * spacing[1],
            origin[0] + p[2] as f64 * spacing[0],
        )
    };

    let mut vertex_ids: HashMap<([usize; 3], usize), usize> = HashMap::new();
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();

    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut vals = [0.0; 8];
                let mut above = [false; 8];
                for c in 0..8 {
                    let o = corner_offset(c);
                    vals[c] = sample([i + o[0], j + o[1], k + o[2]]);
                    above[c] = vals[c] > iso_value;
                }
                if above.iter().all(|&a| a) || above.iter().all(|&a| !a) {
                    continue;
                }

                // next[e] = edge reached from crossing e along the contour.
                let mut next = [usize::MAX; 12];
                for face in &topo.faces {
                    let mut crossings: Vec<(usize, bool)> = Vec::with_capacity(4);
                    for s in 0..4 {
                        let (a, b) = (face[s], face[(s + 1) % 4]);
                        if above[a] != above[b] {
                            crossings.push((topo.edge_between(a, b), above[b]));
                        }
                    }
                    let m = crossings.len();
                    if m == 0 {
                        continue;
                    }
                    let centre = face.iter().map(|&c| vals[c]).sum::<f64>() / 4.0;
                    let above_connected = m == 4 && centre > iso_value;
                    for s in 0..m {
                        let (edge, entering) = crossings[s];
                        if entering {
                            continue;
                        }
                        // Exit crossing: link to the neighbouring entry.
                        let partner = if above_connected {
                            crossings[(s + 1) % m]
                        } else {
                            crossings[(s + m - 1) % m]
                        };
                        debug_assert!(partner.1);
                        next[edge] = partner.0;
                    }
                }

                let mut visited = [false; 12];
                for start in 0..12 {
                    if next[start] == usize::MAX || visited[start] {
                        continue;
                    }
                    let mut ring = Vec::new();
                    let mut e = start;
                    while !visited[e] {
                        visited[e] = true;
                        let (ca, cb) = topo.edges[e];
                        let oa = corner_offset(ca);
                        let ga = [i + oa[0], j + oa[1], k + oa[2]];
                        let axis = (0..3).find(|&a| (ca ^ cb) == 1 << a).unwrap();
                        let id = *vertex_ids.entry((ga, axis)).or_insert_with(|| {
                            // Samples lying exactly on the iso value would give
                            // coincident vertices and zero-area triangles.
                            let t = ((iso_value - vals[ca]) / (vals[cb] - vals[ca]))
                                .clamp(EDGE_T_MARGIN, 1.0 - EDGE_T_MARGIN);
                            let ob = corner_offset(cb);
                            let gb = [i + ob[0], j + ob[1], k + ob[2]];
                            let p = position(ga) + (position(gb) - position(ga)) * t;
                            vertices.push(Point3::from(p));
                            vertices.len() - 1
                        });
                        ring.push(id);
                        e = next[e];
                    }
                    triangulate_loop(&ring, &vertices, &mut faces);
                }
            }
        }
    }
    if faces.is_empty() {
        return Err(MeshError::EmptySurface);
    }
    Ok(TriMesh::from_parts(vertices, faces).cleaned())
}

/// Fan triangulation from the apex that maximises the smallest triangle.
/// Traced loops keep the region above the iso value on their left, so the
/// fan is wound in reverse to point normals toward the region below.
fn triangulate_loop(ring: &[usize], vertices: &[Point3<f64>], faces: &mut Vec<[usize; 3]>) {
    let n = ring.len();
    if n < 3 {
        return;
    }
    let area = |a: usize, b: usize, c: usize| {
        let (pa, pb, pc) = (vertices[a], vertices[b], vertices[c]);
        (pb - pa).cross(&(pc - pa)).norm()
    };
    let mut best = (0, f64::NEG_INFINITY);
    for apex in 0..n {
        let min = (1..n - 1)
            .map(|s| area(ring[apex], ring[(apex + s) % n], ring[(apex + s + 1) % n]))
            .fold(f64::INFINITY, f64::min);
        if min > best.1 {
            best = (apex, min);
        }
    }
    let apex = best.0;
    for s in 1..n - 1 {
        faces.push([ring[apex], ring[(apex + s + 1) % n], ring[(apex + s) % n]]);
    }
}
