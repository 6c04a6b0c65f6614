//! Triangle-mesh data model and surface pre-processing.
//!
//! [`TriMesh`] is the shape representation used everywhere else in the
//! crate. The operators in this module take a mesh by reference and return
//! a new mesh; none of them mutate their input.

mod decimate;
mod edit;
pub mod io;
mod marching_cubes;
pub mod primitives;
mod remesh;
mod rigid;
mod smooth;

use std::collections::{BTreeSet, HashMap};

use nalgebra::{Point3, Vector3};
use thiserror::Error;

pub use decimate::{quadric_decimate, Decimation};
pub use marching_cubes::{marching_cubes, marching_cubes_field};
pub use remesh::remesh_optimize;
pub use rigid::{apply_rigid, RigidTransform};
pub use smooth::taubin_smooth;

/// Faces with area below this are treated as degenerate.
pub const MIN_FACE_AREA: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        count: usize,
    },
    #[error("face {0} references the same vertex twice")]
    RepeatedVertex(usize),
    #[error("face {face} is degenerate (area {area:e} mm^2)")]
    DegenerateFace { face: usize, area: f64 },
    #[error("edge ({0}, {1}) is shared by more than two faces")]
    NonManifoldEdge(usize, usize),
    #[error("edge ({0}, {1}) is traversed in the same direction by two faces")]
    InconsistentOrientation(usize, usize),
    #[error("no voxel crosses the iso value")]
    EmptySurface,
    #[error("rotation is not orthonormal with determinant +1")]
    InvalidTransform,
    #[error("malformed mesh file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Triangle mesh with vertex positions in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Builds a mesh and checks every [`TriMesh`] invariant.
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let mesh = Self { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Builds a mesh without validation.
    pub fn from_parts(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Self {
        Self { vertices, faces }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Checks index bounds, repeated indices, face areas, edge manifoldness
    /// and orientation consistency.
    pub fn validate(&self) -> Result<(), MeshError> {
        let count = self.vertices.len();
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        let mut undirected: HashMap<(usize, usize), usize> = HashMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            for &index in f {
                if index >= count {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        index,
                        count,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::RepeatedVertex(fi));
            }
            let area = self.face_area(fi);
            if !(area > MIN_FACE_AREA) {
                return Err(MeshError::DegenerateFace { face: fi, area });
            }
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let shared = undirected.entry(key).or_insert(0);
                *shared += 1;
                if *shared > 2 {
                    return Err(MeshError::NonManifoldEdge(key.0, key.1));
                }
                let seen = directed.entry((a, b)).or_insert(0);
                *seen += 1;
                if *seen > 1 {
                    return Err(MeshError::InconsistentOrientation(a, b));
                }
            }
        }
        Ok(())
    }

    /// Undirected edges as sorted `[lo, hi]` pairs, in ascending order.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut set = BTreeSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                set.insert([a.min(b), a.max(b)]);
            }
        }
        set.into_iter().collect()
    }

    /// Sorted neighbour lists; isolated vertices get an empty list.
    pub fn one_ring(&self) -> Vec<Vec<usize>> {
        let mut ring: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                ring[a].insert(b);
                ring[b].insert(a);
            }
        }
        ring.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    pub fn face_normal_unnormalized(&self, face: usize) -> Vector3<f64> {
        let [a, b, c] = self.faces[face];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        (pb - pa).cross(&(pc - pa))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.face_normal_unnormalized(face).norm()
    }

    /// Sum of triangle areas in mm².
    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Signed enclosed volume (positive for outward-facing closed surfaces).
    pub fn enclosed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                let (pa, pb, pc) = (
                    self.vertices[a].coords,
                    self.vertices[b].coords,
                    self.vertices[c].coords,
                );
                pa.dot(&pb.cross(&pc)) / 6.0
            })
            .sum()
    }

    pub fn edge_lengths(&self) -> Vec<f64> {
        self.edges()
            .iter()
            .map(|&[a, b]| (self.vertices[a] - self.vertices[b]).norm())
            .collect()
    }

    /// Ratio of the longest to the shortest edge.
    pub fn edge_length_ratio(&self) -> f64 {
        let lengths = self.edge_lengths();
        let max = lengths.iter().cloned().fold(0.0, f64::max);
        let min = lengths.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    }

    pub fn bounding_box(&self) -> (Point3<f64>, Point3<f64>) {
        let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    pub fn bounding_box_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    pub fn centroid(&self) -> Point3<f64> {
        let n = self.vertices.len().max(1) as f64;
        let sum = self
            .vertices
            .iter()
            .fold(Vector3::zeros(), |acc, v| acc + v.coords);
        Point3::from(sum / n)
    }

    /// Row-major `n × 3` coordinate buffer.
    pub fn coordinate_rows(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }

    /// Replaces vertex positions, keeping the face list.
    pub fn with_vertices(&self, vertices: Vec<Point3<f64>>) -> TriMesh {
        debug_assert_eq!(vertices.len(), self.vertices.len());
        TriMesh {
            vertices,
            faces: self.faces.clone(),
        }
    }

    /// Euler characteristic V − E + F.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges().len() as i64 + self.faces.len() as i64
    }

    /// Number of connected components of the face graph (isolated vertices
    /// are not counted).
    pub fn component_count(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for f in &self.faces {
            for k in 1..3 {
                let (ra, rb) = (find(&mut parent, f[0]), find(&mut parent, f[k]));
                if ra != rb {
                    parent[ra] = rb;
                }
            }
        }
        let mut roots = BTreeSet::new();
        for f in &self.faces {
            roots.insert(find(&mut parent, f[0]));
        }
        roots.len()
    }

    /// Removes faces below [`MIN_FACE_AREA`] and vertices no face uses.
    pub fn cleaned(&self) -> TriMesh {
        let faces: Vec<[usize; 3]> = (0..self.faces.len())
            .filter(|&f| {
                let [a, b, c] = self.faces[f];
                a != b && b != c && a != c && self.face_area(f) >= MIN_FACE_AREA
            })
            .map(|f| self.faces[f])
            .collect();
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        for f in &faces {
            for &v in f {
                if remap[v] == usize::MAX {
                    remap[v] = usize::MAX - 1;
                }
            }
        }
        for (v, slot) in remap.iter_mut().enumerate() {
            if *slot != usize::MAX {
                *slot = vertices.len();
                vertices.push(self.vertices[v]);
            }
        }
        let faces = faces
            .into_iter()
            .map(|[a, b, c]| [remap[a], remap[b], remap[c]])
            .collect();
        TriMesh { vertices, faces }
    }
}
