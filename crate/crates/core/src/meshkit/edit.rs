//! Mutable face-list mesh supporting edge collapse and edge split.

use std::collections::BTreeSet;

use nalgebra::{Point3, Vector3};

use super::{TriMesh, MIN_FACE_AREA};

pub(crate) struct EditMesh {
    pub pos: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vert_faces: Vec<Vec<usize>>,
    vert_alive: Vec<bool>,
    alive_faces: usize,
    alive_verts: usize,
}

impl EditMesh {
    pub fn from_mesh(mesh: &TriMesh) -> Self {
        let mut vert_faces = vec![Vec::new(); mesh.vertices.len()];
        for (fi, f) in mesh.faces.iter().enumerate() {
            for &v in f {
                vert_faces[v].push(fi);
            }
        }
        Self {
            pos: mesh.vertices.clone(),
            faces: mesh.faces.clone(),
            face_alive: vec![true; mesh.faces.len()],
            alive_verts: vert_faces.iter().filter(|f| !f.is_empty()).count(),
            vert_alive: vert_faces.iter().map(|f| !f.is_empty()).collect(),
            vert_faces,
            alive_faces: mesh.faces.len(),
        }
    }

    pub fn face_count(&self) -> usize {
        self.alive_faces
    }

    pub fn is_alive(&self, v: usize) -> bool {
        self.vert_alive[v]
    }

    pub fn neighbours(&self, v: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for &f in &self.vert_faces[v] {
            for &w in &self.faces[f] {
                if w != v {
                    out.insert(w);
                }
            }
        }
        out
    }

    /// Alive faces containing both endpoints.
    pub fn edge_faces(&self, a: usize, b: usize) -> Vec<usize> {
        self.vert_faces[a]
            .iter()
            .copied()
            .filter(|&f| self.faces[f].contains(&b))
            .collect()
    }

    /// All undirected edges, ascending.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut set = BTreeSet::new();
        for (fi, f) in self.faces.iter().enumerate() {
            if !self.face_alive[fi] {
                continue;
            }
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                set.insert([a.min(b), a.max(b)]);
            }
        }
        set.into_iter().collect()
    }

    pub fn edge_length(&self, a: usize, b: usize) -> f64 {
        (self.pos[a] - self.pos[b]).norm()
    }

    fn normal_with(&self, f: usize, replace: &[(usize, Point3<f64>)]) -> Vector3<f64> {
        let p = self.faces[f].map(|v| {
            replace
                .iter()
                .find(|(r, _)| *r == v)
                .map(|(_, q)| *q)
                .unwrap_or(self.pos[v])
        });
        (p[1] - p[0]).cross(&(p[2] - p[0]))
    }

    fn is_boundary_vertex(&self, v: usize) -> bool {
        self.neighbours(v)
            .into_iter()
            .any(|w| self.edge_faces(v, w).len() != 2)
    }

    /// Checks whether collapsing `b` into `a` with the merged vertex at `p`
    /// keeps the surface a valid manifold without flipped or degenerate faces.
    pub fn can_collapse(&self, a: usize, b: usize, p: Point3<f64>) -> bool {
        if !self.vert_alive[a] || !self.vert_alive[b] || a == b {
            return false;
        }
        let shared = self.edge_faces(a, b);
        if shared.len() != 2 || self.alive_verts <= 4 {
            return false;
        }
        if self.is_boundary_vertex(a) || self.is_boundary_vertex(b) {
            return false;
        }
        // Link condition: the only common neighbours are the two apexes.
        let apexes: BTreeSet<usize> = shared
            .iter()
            .flat_map(|&f| self.faces[f])
            .filter(|&v| v != a && v != b)
            .collect();
        let na = self.neighbours(a);
        let nb = self.neighbours(b);
        let common: BTreeSet<usize> = na.intersection(&nb).copied().collect();
        if common != apexes || apexes.len() != 2 {
            return false;
        }
        let replace = [(a, p), (b, p)];
        let mut seen = BTreeSet::new();
        for &v in &[a, b] {
            for &f in &self.vert_faces[v] {
                if shared.contains(&f) {
                    continue;
                }
                let before = self.normal_with(f, &[]);
                let after = self.normal_with(f, &replace);
                if after.norm() * 0.5 < MIN_FACE_AREA || before.dot(&after) < 0.0 {
                    return false;
                }
                let mut key = self.faces[f].map(|w| if w == b { a } else { w });
                key.sort_unstable();
                if !seen.insert(key) {
                    return false;
                }
            }
        }
        true
    }

    /// Merges `b` into `a`, moving `a` to `p`. Call [`Self::can_collapse`] first.
    pub fn collapse(&mut self, a: usize, b: usize, p: Point3<f64>) {
        for f in self.edge_faces(a, b) {
            self.face_alive[f] = false;
            self.alive_faces -= 1;
            for &v in &self.faces[f] {
                self.vert_faces[v].retain(|&g| g != f);
            }
        }
        let moved = std::mem::take(&mut self.vert_faces[b]);
        for f in moved {
            for v in self.faces[f].iter_mut() {
                if *v == b {
                    *v = a;
                }
            }
            self.vert_faces[a].push(f);
        }
        self.vert_alive[b] = false;
        self.alive_verts -= 1;
        self.pos[a] = p;
    }

    /// Splits edge `(a, b)` at its midpoint; returns the new vertex.
    pub fn split(&mut self, a: usize, b: usize) -> usize {
        let m = self.pos.len();
        self.pos.push(Point3::from(
            (self.pos[a].coords + self.pos[b].coords) * 0.5,
        ));
        self.vert_faces.push(Vec::new());
        self.vert_alive.push(true);
        self.alive_verts += 1;
        for f in self.edge_faces(a, b) {
            let old = self.faces[f];
            let first = old.map(|v| if v == b { m } else { v });
            let second = old.map(|v| if v == a { m } else { v });
            // `first` reuses slot f; b no longer belongs to it.
            self.faces[f] = first;
            self.vert_faces[b].retain(|&g| g != f);
            self.vert_faces[m].push(f);
            let g = self.faces.len();
            self.faces.push(second);
            self.face_alive.push(true);
            self.alive_faces += 1;
            for &v in &second {
                self.vert_faces[v].push(g);
            }
        }
        m
    }

    pub fn to_mesh(&self) -> TriMesh {
        let mut remap = vec![usize::MAX; self.pos.len()];
        let mut vertices = Vec::new();
        for v in 0..self.pos.len() {
            if self.vert_alive[v] && !self.vert_faces[v].is_empty() {
                remap[v] = vertices.len();
                vertices.push(self.pos[v]);
            }
        }
        let faces = self
            .faces
            .iter()
            .zip(&self.face_alive)
            .filter(|(_, &alive)| alive)
            .map(|(f, _)| f.map(|v| remap[v]))
            .collect();
        TriMesh::from_parts(vertices, faces).cleaned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshkit::primitives::{icosphere, tetrahedron};

    #[test]
    fn split_then_export_is_valid() {
        let m = icosphere(1.0, 2);
        let mut e = EditMesh::from_mesh(&m);
        let [a, b] = m.edges()[0];
        e.split(a, b);
        let out = e.to_mesh();
        out.validate().unwrap();
        assert_eq!(out.face_count(), m.face_count() + 2);
        assert_eq!(out.euler_characteristic(), 2);
    }

    #[test]
    fn collapse_keeps_manifold() {
        let m = icosphere(1.0, 3);
        let mut e = EditMesh::from_mesh(&m);
        let [a, b] = m.edges()[5];
        let mid = Point3::from((m.vertices[a].coords + m.vertices[b].coords) * 0.5);
        assert!(e.can_collapse(a, b, mid));
        e.collapse(a, b, mid);
        let out = e.to_mesh();
        out.validate().unwrap();
        assert_eq!(out.face_count(), m.face_count() - 2);
        assert_eq!(out.euler_characteristic(), 2);
    }

    #[test]
    fn tetrahedron_edges_cannot_collapse() {
        let m = tetrahedron();
        let e = EditMesh::from_mesh(&m);
        for [a, b] in m.edges() {
            assert!(!e.can_collapse(a, b, m.vertices[a]));
        }
    }
}
