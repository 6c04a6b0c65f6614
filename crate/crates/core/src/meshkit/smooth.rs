use nalgebra::{Point3, Vector3};

use super::TriMesh;

/// Taubin λ/μ smoothing with uniform one-ring weights.
///
/// Each iteration applies a shrinking umbrella step with `lambda` followed by
/// an inflating step with `mu` (negative). Isolated vertices stay put.
pub fn taubin_smooth(mesh: &TriMesh, iterations: usize, lambda: f64, mu: f64) -> TriMesh {
    let ring = mesh.one_ring();
    let mut positions = mesh.vertices.clone();
    for _ in 0..iterations {
        positions = umbrella_step(&positions, &ring, lambda);
        positions = umbrella_step(&positions, &ring, mu);
    }
    mesh.with_vertices(positions)
}

fn umbrella_step(positions: &[Point3<f64>], ring: &[Vec<usize>], factor: f64) -> Vec<Point3<f64>> {
    positions
        .iter()
        .zip(ring)
        .map(|(p, neighbours)| {
            if neighbours.is_empty() {
                return *p;
            }
            let mean = neighbours
                .iter()
                .fold(Vector3::zeros(), |acc, &j| acc + positions[j].coords)
                / neighbours.len() as f64;
            p + (mean - p.coords) * factor
        })
        .collect()
}
