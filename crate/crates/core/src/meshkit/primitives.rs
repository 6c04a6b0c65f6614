//! Closed reference meshes used by the synthetic generator and tests.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use super::TriMesh;

const ICOSAHEDRON_FACES: [[usize; 3]; 20] = [
    [0, 11, 5],
    [0, 5, 1],
    [0, 1, 7],
    [0, 7, 10],
    [0, 10, 11],
    [1, 5, 9],
    [5, 11, 4],
    [11, 10, 2],
    [10, 7, 6],
    [7, 1, 8],
    [3, 9, 4],
    [3, 4, 2],
    [3, 2, 6],
    [3, 6, 8],
    [3, 8, 9],
    [4, 9, 5],
    [2, 4, 11],
    [6, 2, 10],
    [8, 6, 7],
    [9, 8, 1],
];

fn icosahedron_vertices() -> [Vector3<f64>; 12] {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    [
        Vector3::new(-1.0, t, 0.0),
        Vector3::new(1.0, t, 0.0),
        Vector3::new(-1.0, -t, 0.0),
        Vector3::new(1.0, -t, 0.0),
        Vector3::new(0.0, -1.0, t),
        Vector3::new(0.0, 1.0, t),
        Vector3::new(0.0, -1.0, -t),
        Vector3::new(0.0, 1.0, -t),
        Vector3::new(t, 0.0, -1.0),
        Vector3::new(t, 0.0, 1.0),
        Vector3::new(-t, 0.0, -1.0),
        Vector3::new(-t, 0.0, 1.0),
    ]
    .map(|v| v.normalize())
}

/// Geodesic sphere obtained by splitting every icosahedron face into
/// `frequency²` triangles and projecting onto the sphere.
///
/// The result has `10·f² + 2` vertices and `20·f²` outward-facing faces.
pub fn icosphere(radius: f64, frequency: usize) -> TriMesh {
    let f = frequency.max(1);
    let corners = icosahedron_vertices();
    // Keyed by the sorted (corner, weight) pairs with non-zero weight, so
    // points on shared edges are generated once.
    let mut index: HashMap<Vec<(usize, usize)>, usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut vertex_id = |key: Vec<(usize, usize)>, vertices: &mut Vec<Point3<f64>>| -> usize {
        if let Some(&id) = index.get(&key) {
            return id;
        }
        let mut p = Vector3::zeros();
        for &(c, w) in &key {
            p += corners[c] * (w as f64 / f as f64);
        }
        let id = vertices.len();
        vertices.push(Point3::from(p.normalize() * radius));
        index.insert(key, id);
        id
    };
    let mut faces = Vec::with_capacity(20 * f * f);
    for tri in ICOSAHEDRON_FACES {
        let mut grid = vec![vec![0usize; f + 1]; f + 1];
        for i in 0..=f {
            for j in 0..=(f - i) {
                let k = f - i - j;
                let mut key: Vec<(usize, usize)> = [(tri[0], k), (tri[1], i), (tri[2], j)]
                    .into_iter()
                    .filter(|&(_, w)| w > 0)
                    .collect();
                key.sort_unstable();
                grid[i][j] = vertex_id(key, &mut vertices);
            }
        }
        for i in 0..f {
            for j in 0..(f - i) {
                faces.push([grid[i][j], grid[i + 1][j], grid[i][j + 1]]);
                if j + 1 < f - i {
                    faces.push([grid[i + 1][j], grid[i + 1][j + 1], grid[i][j + 1]]);
                }
            }
        }
    }
    TriMesh::from_parts(vertices, faces)
}

/// Axis-aligned unit cube `[0,1]³` with outward-facing triangles.
pub fn unit_cube() -> TriMesh {
    let vertices = (0..8)
        .map(|k| Point3::new((k & 1) as f64, ((k >> 1) & 1) as f64, ((k >> 2) & 1) as f64))
        .collect();
    let faces = vec![
        [0, 2, 1],
        [1, 2, 3],
        [4, 5, 6],
        [5, 7, 6],
        [0, 1, 4],
        [1, 5, 4],
        [2, 6, 3],
        [3, 6, 7],
        [0, 4, 2],
        [2, 4, 6],
        [1, 3, 5],
        [3, 7, 5],
    ];
    TriMesh::from_parts(vertices, faces)
}

/// Regular tetrahedron inscribed in the unit sphere.
pub fn tetrahedron() -> TriMesh {
    let s = 1.0 / 3f64.sqrt();
    let vertices = vec![
        Point3::new(s, s, s),
        Point3::new(s, -s, -s),
        Point3::new(-s, s, -s),
        Point3::new(-s, -s, s),
    ];
    let faces = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
    TriMesh::from_parts(vertices, faces)
}
