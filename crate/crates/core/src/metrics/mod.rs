//! Correspondence evaluation: geodesic error, chamfer distance, conformal
//! distortion, landmark error, the nearest-neighbour baseline assignment and
//! a paired signed-rank test.

mod kdtree;
mod report;
mod stats;

use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

pub use kdtree::{brute_force_nearest, squared_distance, KdTree};
pub use report::{
    read_metrics_csv, write_curve_csv, write_metrics_csv, MetricReport, MetricRow, Summary,
};
pub use stats::{
    cumulative_curve, fraction_at_or_below, significance_marker, wilcoxon_enumerated,
    wilcoxon_signed_rank, WilcoxonResult, EXACT_LIMIT,
};

use crate::corrnet::InterpolationSequence;
use crate::geodesics::GeodesicTable;
use crate::meshkit::TriMesh;

/// Distortion assigned to a triangle that collapses in the final frame.
pub const DEGENERATE_SENTINEL: f64 = 1e9;
/// Smallest singular value below which a final triangle counts as collapsed.
pub const DEGENERATE_SIGMA: f64 = 1e-9;
/// Smallest admissible source triangle area in mm².
pub const MIN_SOURCE_AREA: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("source triangle {0} is degenerate")]
    DegenerateSource(usize),
    #[error("fewer than 5 non-zero paired differences ({0})")]
    TooFewSamples(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which mesh's surface area normalises the geodesic error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AreaNormalization {
    #[default]
    Target,
    Source,
}

/// Named landmark points of one patient, in mm.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LandmarkSet {
    pub points: BTreeMap<String, [f64; 3]>,
}

/// Landmark names used by the synthetic generator and the clinical files.
pub const LANDMARK_NAMES: [&str; 4] = [
    "pineal_gland",
    "spinal_cord_C1",
    "styloid_process",
    "mandible_lingula",
];

impl LandmarkSet {
    pub fn insert(&mut self, name: &str, p: [f64; 3]) -> Result<(), MetricsError> {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(MetricsError::Format(format!(
                "landmark {name} is not finite"
            )));
        }
        self.points.insert(name.to_owned(), p);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<[f64; 3]> {
        self.points.get(name).copied()
    }
}

fn as_array(p: &Point3<f64>) -> [f64; 3] {
    [p.x, p.y, p.z]
}

fn vertex_tree(mesh: &TriMesh) -> KdTree {
    KdTree::new(mesh.vertices.iter().map(as_array).collect())
}

/// Normalised geodesic error over the sampled source pairs.
pub fn geodesic_error(
    pi_hard: &[usize],
    mesh_x: &TriMesh,
    mesh_y: &TriMesh,
    dx: &GeodesicTable,
    dy: &GeodesicTable,
    pairs: &[(usize, usize)],
    normalization: AreaNormalization,
) -> Vec<f64> {
    let area = match normalization {
        AreaNormalization::Target => mesh_y.surface_area(),
        AreaNormalization::Source => mesh_x.surface_area(),
    };
    let scale = area.sqrt();
    pairs
        .iter()
        .map(|&(i, j)| (dy.get(pi_hard[i], pi_hard[j]) - dx.get(i, j)).abs() / scale)
        .collect()
}

/// Geodesic distance on the target between predicted and true images of
/// each source vertex.
pub fn ground_truth_error(pred: &[usize], truth: &[usize], dy: &GeodesicTable) -> Vec<f64> {
    pred.iter()
        .zip(truth)
        .map(|(&p, &t)| dy.get(p, t))
        .collect()
}

/// Mean distance from each point to its nearest target vertex.
pub fn chamfer(points: &[[f64; 3]], target: &TriMesh) -> f64 {
    if points.is_empty() || target.vertices.is_empty() {
        return 0.0;
    }
    let tree = vertex_tree(target);
    let total: f64 = points
        .iter()
        .map(|p| tree.nearest(p).map_or(0.0, |(_, d)| d.sqrt()))
        .sum();
    total / points.len() as f64
}

/// Index of the nearest `b` vertex for every vertex of `deformed_a`.
pub fn nn_baseline(deformed_a: &TriMesh, b: &TriMesh) -> Vec<usize> {
    let tree = vertex_tree(b);
    deformed_a
        .vertices
        .iter()
        .map(|p| tree.nearest(&as_array(p)).map_or(0, |(i, _)| i))
        .collect()
}

/// Coordinates of a triangle in its own plane: `(|e1|, 0)` and `(e2·u, e2·w)`.
fn planar(p0: &Point3<f64>, p1: &Point3<f64>, p2: &Point3<f64>) -> Option<[[f64; 2]; 2]> {
    let e1: Vector3<f64> = p1 - p0;
    let e2: Vector3<f64> = p2 - p0;
    let l1 = e1.norm();
    let n = e1.cross(&e2);
    let nn = n.norm();
    if l1 == 0.0 || nn == 0.0 {
        return None;
    }
    let u = e1 / l1;
    let w = n.cross(&u) / nn;
    Some([[l1, e2.dot(&u)], [0.0, e2.dot(&w)]])
}

/// Distortion of the linear map taking triangle `a` onto triangle `b`.
fn triangle_distortion(a: [[f64; 2]; 2], b: Option<[[f64; 2]; 2]>) -> f64 {
    let Some(b) = b else {
        return DEGENERATE_SENTINEL;
    };
    // M = B·A⁻¹ with A upper triangular.
    let det_a = a[0][0] * a[1][1];
    let inv = [[1.0 / a[0][0], -a[0][1] / det_a], [0.0, 1.0 / a[1][1]]];
    let m = [
        [
            b[0][0] * inv[0][0] + b[0][1] * inv[1][0],
            b[0][0] * inv[0][1] + b[0][1] * inv[1][1],
        ],
        [
            b[1][0] * inv[0][0] + b[1][1] * inv[1][0],
            b[1][0] * inv[0][1] + b[1][1] * inv[1][1],
        ],
    ];
    // σ₁² + σ₂² is the squared Frobenius norm and σ₁σ₂ = |det|.
    let s = m[0][0] * m[0][0] + m[0][1] * m[0][1] + m[1][0] * m[1][0] + m[1][1] * m[1][1];
    let det = (m[0][0] * m[1][1] - m[0][1] * m[1][0]).abs();
    let sigma1 = ((s + (s * s - 4.0 * det * det).max(0.0).sqrt()) / 2.0).sqrt();
    if sigma1 == 0.0 || det / sigma1 < DEGENERATE_SIGMA {
        return DEGENERATE_SENTINEL;
    }
    (s / det - 2.0).max(0.0)
}

/// Per-triangle distortion between `source` and a deformed copy with the
/// same connectivity.
pub fn distortion_between(
    source: &TriMesh,
    deformed: &[Point3<f64>],
) -> Result<Vec<f64>, MetricsError> {
    if deformed.len() != source.vertices.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} deformed vertices for {} source vertices",
            deformed.len(),
            source.vertices.len()
        )));
    }
    source
        .faces
        .iter()
        .enumerate()
        .map(|(f, &[i, j, k])| {
            if source.face_area(f) < MIN_SOURCE_AREA {
                return Err(MetricsError::DegenerateSource(f));
            }
            let v = &source.vertices;
            let a = planar(&v[i], &v[j], &v[k]).ok_or(MetricsError::DegenerateSource(f))?;
            Ok(triangle_distortion(
                a,
                planar(&deformed[i], &deformed[j], &deformed[k]),
            ))
        })
        .collect()
}

/// Per-triangle conformal distortion between the source and the final frame.
pub fn conformal_distortion(
    mesh_x: &TriMesh,
    sequence: &InterpolationSequence,
) -> Result<Vec<f64>, MetricsError> {
    check_sequence(mesh_x, sequence)?;
    if sequence.is_empty() {
        return Ok(vec![0.0; mesh_x.faces.len()]);
    }
    distortion_between(mesh_x, &sequence.final_frame(mesh_x).vertices)
}

/// Distortion of every intermediate step relative to the previous frame,
/// one vector per step. Exposed for inspection only.
pub fn conformal_distortion_per_step(
    mesh_x: &TriMesh,
    sequence: &InterpolationSequence,
) -> Result<Vec<Vec<f64>>, MetricsError> {
    check_sequence(mesh_x, sequence)?;
    let mut prev = mesh_x.clone();
    let mut out = Vec::with_capacity(sequence.len());
    for k in 1..=sequence.len() {
        let frame = sequence.frame(mesh_x, k);
        out.push(distortion_between(&prev, &frame.vertices)?);
        prev = frame;
    }
    Ok(out)
}

fn check_sequence(mesh: &TriMesh, seq: &InterpolationSequence) -> Result<(), MetricsError> {
    if seq
        .displacements
        .iter()
        .any(|f| f.len() != mesh.vertices.len())
    {
        return Err(MetricsError::ShapeMismatch(
            "sequence does not conform to mesh".into(),
        ));
    }
    Ok(())
}

/// Landmark error: the target landmark's nearest `mesh_y` vertex is carried
/// to `mesh_x` by `pi_hard` and compared with the vertex of `mesh_x`
/// nearest the source landmark.
pub fn landmark_error(
    landmark_target: [f64; 3],
    landmark_source: [f64; 3],
    mesh_y: &TriMesh,
    mesh_x: &TriMesh,
    pi_hard: &[usize],
) -> f64 {
    let y_star = vertex_tree(mesh_y)
        .nearest(&landmark_target)
        .map_or(0, |(i, _)| i);
    let x_ref = vertex_tree(mesh_x)
        .nearest(&landmark_source)
        .map_or(0, |(i, _)| i);
    (mesh_x.vertices[pi_hard[y_star]] - mesh_x.vertices[x_ref]).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesics::{geodesic_all_pairs, sample_pairs};
    use crate::meshkit::primitives::icosphere;
    use nalgebra::{Rotation3, Unit};

    fn tri(vertices: Vec<Point3<f64>>) -> TriMesh {
        TriMesh::from_parts(vertices, vec![[0, 1, 2]])
    }

    #[test]
    fn chamfer_examples() {
        let m = icosphere(10.0, 2);
        let pts: Vec<[f64; 3]> = m.vertices.iter().map(as_array).collect();
        assert_eq!(chamfer(&pts, &m), 0.0);
        let v = m.vertices[0];
        let target = TriMesh::from_parts(vec![v, v + Vector3::new(50.0, 0.0, 0.0)], vec![]);
        assert_eq!(chamfer(&[[v.x, v.y, v.z + 2.0]], &target), 2.0);
    }

    #[test]
    fn nn_baseline_examples() {
        let m = icosphere(10.0, 2);
        assert_eq!(
            nn_baseline(&m, &m),
            (0..m.vertices.len()).collect::<Vec<_>>()
        );
        let mut b = vec![Point3::new(100.0, 0.0, 0.0); 8];
        b[3] = Point3::new(1.0, 0.0, 0.0);
        b[7] = Point3::new(-1.0, 0.0, 0.0);
        let a = TriMesh::from_parts(vec![Point3::origin()], vec![]);
        assert_eq!(nn_baseline(&a, &TriMesh::from_parts(b, vec![])), vec![3]);
    }

    #[test]
    fn geodesic_error_identity_and_scaling() {
        let x = icosphere(10.0, 2);
        let dx = geodesic_all_pairs(&x);
        let pairs = sample_pairs(x.vertices.len(), 50, 1);
        let id: Vec<usize> = (0..x.vertices.len()).collect();
        let e = geodesic_error(&id, &x, &x, &dx, &dx, &pairs, AreaNormalization::Target);
        assert!(e.iter().all(|&v| v == 0.0));
        let s = 1.5;
        let y = x.with_vertices(
            x.vertices
                .iter()
                .map(|p| Point3::from(p.coords * s))
                .collect(),
        );
        let dy = geodesic_all_pairs(&y);
        let e = geodesic_error(&id, &x, &y, &dx, &dy, &pairs, AreaNormalization::Target);
        for (k, &(i, j)) in pairs.iter().enumerate() {
            let want = (s - 1.0) * dx.get(i, j) / (s * x.surface_area().sqrt());
            assert!((e[k] - want).abs() <= 1e-12 * (1.0 + want));
        }
    }

    #[test]
    fn distortion_examples() {
        let src = tri(vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(3.0, 0.5, 1.0),
            Point3::new(-1.0, 2.0, 0.5),
        ]);
        let same = distortion_between(&src, &src.vertices).unwrap();
        assert!(same[0].abs() <= 1e-9);
        let rot =
            Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(1.0, 2.0, 3.0)), 0.8);
        let sim: Vec<_> = src
            .vertices
            .iter()
            .map(|p| Point3::from(rot * p.coords * 2.0 + Vector3::new(5.0, -1.0, 2.0)))
            .collect();
        assert!(distortion_between(&src, &sim).unwrap()[0].abs() <= 1e-9);
        // Stretch by 2 along the in-plane direction of the first edge.
        let u = (src.vertices[1] - src.vertices[0]).normalize();
        let stretched: Vec<_> = src
            .vertices
            .iter()
            .map(|p| p + u * p.coords.dot(&u))
            .collect();
        let k = distortion_between(&src, &stretched).unwrap()[0];
        assert!((k - 0.5).abs() <= 1e-9, "{k}");
        let flat = vec![
            Point3::origin(),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
        ];
        assert_eq!(
            distortion_between(&src, &flat).unwrap()[0],
            DEGENERATE_SENTINEL
        );
        assert!(matches!(
            distortion_between(&TriMesh::from_parts(flat.clone(), vec![[0, 1, 2]]), &flat),
            Err(MetricsError::DegenerateSource(0))
        ));
    }

    #[test]
    fn conformal_distortion_of_identity_sequence_is_zero() {
        let m = icosphere(10.0, 2);
        let seq = InterpolationSequence {
            times: vec![0.5, 1.0],
            displacements: vec![vec![[0.0; 3]; m.vertices.len()]; 2],
        };
        let k = conformal_distortion(&m, &seq).unwrap();
        assert_eq!(k.len(), m.faces.len());
        assert!(k.iter().all(|v| v.abs() <= 1e-9));
        assert_eq!(conformal_distortion_per_step(&m, &seq).unwrap().len(), 2);
    }

    #[test]
    fn landmark_examples() {
        let m = icosphere(10.0, 2);
        let id: Vec<usize> = (0..m.vertices.len()).collect();
        let p = as_array(&m.vertices[5]);
        assert_eq!(landmark_error(p, p, &m, &m, &id), 0.0);
        // A source landmark on the vertex 3mm along the axis from vertex 5.
        let a = Point3::new(0.0, 0.0, 0.0);
        let b = Point3::new(3.0, 0.0, 0.0);
        let line = TriMesh::from_parts(vec![a, b], vec![]);
        assert_eq!(
            landmark_error([0.1, 0.0, 0.0], [2.9, 0.0, 0.0], &line, &line, &[0, 1]),
            3.0
        );
    }
}
