use nalgebra::Point3;

use super::edit::EditMesh;
use super::TriMesh;

const SPLIT_FACTOR: f64 = 4.0 / 3.0;
const COLLAPSE_FACTOR: f64 = 4.0 / 5.0;

/// Edge-length equalisation by long-edge splits and short-edge collapses.
///
/// Per iteration, with `L` the current mean edge length, edges longer than
/// `4/3·L` are split at their midpoint and edges shorter than `4/5·L` are
/// collapsed to their midpoint. A split is skipped when it would create an
/// edge shorter than the shortest edge of the iteration's input, and a
/// collapse when it would create one shorter than that or longer than
/// `4/3·L`, so the extremes only move inwards. An iteration whose result
/// still has a larger max/min edge ratio, or is invalid, is discarded and
/// the loop stops.
pub fn remesh_optimize(mesh: &TriMesh, iterations: usize) -> TriMesh {
    let mut current = mesh.clone();
    for _ in 0..iterations {
        let lengths = current.edge_lengths();
        if lengths.is_empty() {
            break;
        }
        let mean = lengths.iter().sum::<f64>() / lengths.len() as f64;
        let (hi, lo) = (SPLIT_FACTOR * mean, COLLAPSE_FACTOR * mean);
        if lengths.iter().all(|&l| l <= hi && l >= lo) {
            break;
        }
        let next = remesh_pass(&current, hi, lo);
        if next.edge_length_ratio() > current.edge_length_ratio() || next.validate().is_err() {
            break;
        }
        current = next;
    }
    current
}

fn remesh_pass(mesh: &TriMesh, hi: f64, lo: f64) -> TriMesh {
    let mut edit = EditMesh::from_mesh(mesh);
    let floor = mesh
        .edge_lengths()
        .into_iter()
        .fold(f64::INFINITY, f64::min);

    let mut long: Vec<([usize; 2], f64)> = edit
        .edges()
        .into_iter()
        .map(|[a, b]| ([a, b], edit.edge_length(a, b)))
        .filter(|&(_, l)| l > hi)
        .collect();
    long.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    for ([a, b], _) in long {
        if edit.edge_faces(a, b).is_empty() || edit.edge_length(a, b) <= hi {
            continue;
        }
        let mid = Point3::from((edit.pos[a].coords + edit.pos[b].coords) * 0.5);
        let creates_short = edit.edge_length(a, b) * 0.5 < floor
            || edit
                .neighbours(a)
                .intersection(&edit.neighbours(b))
                .any(|&w| (edit.pos[w] - mid).norm() < floor);
        if creates_short {
            continue;
        }
        edit.split(a, b);
    }

    let mut short: Vec<([usize; 2], f64)> = edit
        .edges()
        .into_iter()
        .map(|[a, b]| ([a, b], edit.edge_length(a, b)))
        .filter(|&(_, l)| l < lo)
        .collect();
    short.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
    for ([a, b], _) in short {
        if !edit.is_alive(a) || !edit.is_alive(b) || edit.edge_faces(a, b).is_empty() {
            continue;
        }
        if edit.edge_length(a, b) >= lo {
            continue;
        }
        let mid = Point3::from((edit.pos[a].coords + edit.pos[b].coords) * 0.5);
        // Do not undo the split pass by creating new long edges.
        let out_of_range = edit
            .neighbours(a)
            .into_iter()
            .chain(edit.neighbours(b))
            .filter(|&w| w != a && w != b)
            .any(|w| {
                let l = (edit.pos[w] - mid).norm();
                l > hi || l < floor
            });
        if out_of_range || !edit.can_collapse(a, b, mid) {
            continue;
        }
        edit.collapse(a, b, mid);
    }
    edit.to_mesh()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshkit::primitives::{icosphere, tetrahedron};
    use crate::meshkit::quadric_decimate;

    #[test]
    fn zero_iterations_is_identity() {
        let m = quadric_decimate(&icosphere(10.0, 10), 400).mesh;
        assert_eq!(remesh_optimize(&m, 0), m);
    }

    #[test]
    fn uniform_mesh_is_untouched() {
        let t = tetrahedron();
        assert_eq!(remesh_optimize(&t, 5), t);
    }

    #[test]
    fn decimated_sphere_ratio_improves() {
        let m = quadric_decimate(&icosphere(10.0, 12), 500).mesh;
        let before = m.edge_length_ratio();
        let out = remesh_optimize(&m, 5);
        out.validate().unwrap();
        assert!(
            out.edge_length_ratio() < before,
            "{} -> {}",
            before,
            out.edge_length_ratio()
        );
    }
}
