//! Greedy quadric-error edge collapse.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{Matrix3, Matrix4, Point3, Vector3, Vector4};

use super::edit::EditMesh;
use super::TriMesh;

/// Result of [`quadric_decimate`].
#[derive(Debug, Clone)]
pub struct Decimation {
    pub mesh: TriMesh,
    /// False when no legal collapse remained before the face target was met;
    /// `mesh` is then the best effort.
    pub reached_target: bool,
}

#[derive(Debug)]
struct Candidate {
    cost: f64,
    a: usize,
    b: usize,
    stamp_a: u32,
    stamp_b: u32,
    target: Point3<f64>,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    // Min-heap on cost, ties on the vertex pair.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

fn plane_quadric(mesh: &TriMesh, face: usize) -> Matrix4<f64> {
    let n = mesh.face_normal_unnormalized(face);
    let len = n.norm();
    if len == 0.0 {
        return Matrix4::zeros();
    }
    let n = n / len;
    let d = -n.dot(&mesh.vertices[mesh.faces[face][0]].coords);
    let p = Vector4::new(n.x, n.y, n.z, d);
    p * p.transpose()
}

fn quadric_error(q: &Matrix4<f64>, p: &Point3<f64>) -> f64 {
    let h = Vector4::new(p.x, p.y, p.z, 1.0);
    (h.transpose() * q * h)[(0, 0)].max(0.0)
}

fn optimal_position(q: &Matrix4<f64>, pa: Point3<f64>, pb: Point3<f64>) -> (Point3<f64>, f64) {
    let a = Matrix3::new(
        q[(0, 0)],
        q[(0, 1)],
        q[(0, 2)],
        q[(1, 0)],
        q[(1, 1)],
        q[(1, 2)],
        q[(2, 0)],
        q[(2, 1)],
        q[(2, 2)],
    );
    let rhs = -Vector3::new(q[(0, 3)], q[(1, 3)], q[(2, 3)]);
    let mid = Point3::from((pa.coords + pb.coords) * 0.5);
    let mut best = (mid, quadric_error(q, &mid));
    for cand in [pa, pb] {
        let e = quadric_error(q, &cand);
        if e < best.1 {
            best = (cand, e);
        }
    }
    if a.determinant().abs() > 1e-12 {
        if let Some(inv) = a.try_inverse() {
            let p = Point3::from(inv * rhs);
            // Keep the solve only when it stays near the edge.
            let reach = (pa - pb).norm() * 2.0;
            if (p - mid).norm() <= reach {
                let e = quadric_error(q, &p);
                if e <= best.1 {
                    best = (p, e);
                }
            }
        }
    }
    best
}

/// Collapses minimum-quadric-error edges until the face count is at most
/// `target_faces`.
///
/// Collapses that would create non-manifold edges, flip a face normal or
/// produce a degenerate face are skipped.
pub fn quadric_decimate(mesh: &TriMesh, target_faces: usize) -> Decimation {
    if mesh.face_count() <= target_faces {
        return Decimation {
            mesh: mesh.clone(),
            reached_target: true,
        };
    }
    let mut quadrics = vec![Matrix4::<f64>::zeros(); mesh.vertex_count()];
    for f in 0..mesh.face_count() {
        let q = plane_quadric(mesh, f);
        for &v in &mesh.faces[f] {
            quadrics[v] += q;
        }
    }
    let mut edit = EditMesh::from_mesh(mesh);
    let mut stamps = vec![0u32; mesh.vertex_count()];
    let mut heap = BinaryHeap::new();
    let push = |heap: &mut BinaryHeap<Candidate>,
                edit: &EditMesh,
                quadrics: &[Matrix4<f64>],
                stamps: &[u32],
                a: usize,
                b: usize| {
        let (a, b) = (a.min(b), a.max(b));
        let q = quadrics[a] + quadrics[b];
        let (target, cost) = optimal_position(&q, edit.pos[a], edit.pos[b]);
        heap.push(Candidate {
            cost,
            a,
            b,
            stamp_a: stamps[a],
            stamp_b: stamps[b],
            target,
        });
    };
    for [a, b] in mesh.edges() {
        push(&mut heap, &edit, &quadrics, &stamps, a, b);
    }
    while edit.face_count() > target_faces {
        let Some(c) = heap.pop() else {
            return Decimation {
                mesh: edit.to_mesh(),
                reached_target: false,
            };
        };
        if !edit.is_alive(c.a) || !edit.is_alive(c.b) {
            continue;
        }
        if stamps[c.a] != c.stamp_a || stamps[c.b] != c.stamp_b {
            continue;
        }
        if !edit.can_collapse(c.a, c.b, c.target) {
            continue;
        }
        edit.collapse(c.a, c.b, c.target);
        quadrics[c.a] = quadrics[c.a] + quadrics[c.b];
        stamps[c.a] += 1;
        stamps[c.b] += 1;
        for w in edit.neighbours(c.a) {
            stamps[w] += 1;
        }
        // Neighbour stamps changed, so every edge around them is re-queued.
        let ring: Vec<usize> = edit.neighbours(c.a).into_iter().collect();
        for &w in &ring {
            for x in edit.neighbours(w) {
                push(&mut heap, &edit, &quadrics, &stamps, w, x);
            }
        }
    }
    Decimation {
        mesh: edit.to_mesh(),
        reached_target: true,
    }
}
