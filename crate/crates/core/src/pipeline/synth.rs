//! Synthetic organ dataset with known correspondences.
//!
//! Every shape is a radial deformation of one icosphere template: a
//! randomly scaled ellipsoid with a few smooth bumps, rotated and shifted.
//! Vertex order is shuffled per shape and the permutation is
//! saved, so any pair's true correspondence is known. Each patient gets a
//! CT-like volume whose intensity follows the signed distance to its
//! organs, landmarks at fixed template vertices, and for every ordered
//! pair a source mesh registered onto the target by matching centroids and
//! per-axis spreads, standing in for externally registered meshes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Rotation3, Unit, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::folds::pair_id;
use super::manifest::{write_landmarks, DatasetManifest, GroundTruth, PatientLandmarks};
use super::PipelineError;
use crate::meshkit::io::save_mesh;
use crate::meshkit::primitives::icosphere;
use crate::meshkit::TriMesh;
use crate::metrics::LANDMARK_NAMES;
use crate::volumes::Volume;

/// Angular width of the surface bumps (on the `1 − cos θ` scale).
const BUMP_WIDTH: f64 = 0.15;
const BUMPS: usize = 3;
/// Background and organ intensities in HU.
const BACKGROUND_HU: f64 = -60.0;
const ORGAN_HU: f64 = 50.0;
/// Organ intensity varies linearly along the shape's local x and y axes
/// by these amounts per unit of normalised coordinate.
const ORGAN_HU_GRADIENT: [f64; 2] = [120.0, 60.0];
/// Width of the intensity transition across the surface in mm.
const EDGE_MM: f64 = 1.0;
const VOLUME_SPACING: [f64; 3] = [2.5, 1.0, 1.0];
const VOLUME_MARGIN_MM: f64 = 12.0;
/// Template directions the four landmarks sit on.
const LANDMARK_DIRECTIONS: [[f64; 3]; 4] = [
    [0.0, 0.0, 1.0],
    [1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub organs: Vec<String>,
    /// Icosphere frequency of the template; 5 gives 252 vertices.
    pub frequency: usize,
    /// Amplitude of the uniform intensity noise in HU.
    pub noise_hu: f64,
    /// Write registered source meshes for every ordered pair.
    pub nn_deformed: bool,
    /// Largest pose rotation in radians.
    pub max_rotation: f64,
    /// Largest relative bump height.
    pub bump_amplitude: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            organs: vec!["gland".to_owned()],
            frequency: 5,
            noise_hu: 10.0,
            nn_deformed: true,
            max_rotation: 0.4,
            bump_amplitude: 0.3,
        }
    }
}

/// Nominal semi-axes per organ slot.
const BASE_RADII: [[f64; 3]; 3] = [[18.0, 13.0, 10.0], [10.0, 10.0, 22.0], [14.0, 9.0, 9.0]];

struct Shape {
    radii: [f64; 3],
    bumps: Vec<(Vector3<f64>, f64)>,
    rotation: Rotation3<f64>,
    centre: Vector3<f64>,
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, slot: usize, opts: &SynthOptions) -> Self {
        let base = BASE_RADII[slot % BASE_RADII.len()];
        let radii = base.map(|r| r * rng.random_range(0.85..1.15));
        let bumps = (0..BUMPS)
            .map(|_| {
                (
                    random_unit(rng),
                    rng.random_range(-opts.bump_amplitude..=opts.bump_amplitude),
                )
            })
            .collect();
        let axis = Unit::new_normalize(random_unit(rng));
        let rotation = Rotation3::from_axis_angle(
            &axis,
            rng.random_range(-opts.max_rotation..=opts.max_rotation),
        );
        let centre = Vector3::new(slot as f64 * 60.0, 0.0, 0.0)
            + Vector3::new(
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
            );
        Self {
            radii,
            bumps,
            rotation,
            centre,
        }
    }

    /// Surface radius along a local unit direction.
    fn radius(&self, u: &Vector3<f64>) -> f64 {
        let [a, b, c] = self.radii;
        let ellipsoid = 1.0 / ((u.x / a).powi(2) + (u.y / b).powi(2) + (u.z / c).powi(2)).sqrt();
        let bump: f64 = self
            .bumps
            .iter()
            .map(|(d, amp)| amp * ((u.dot(d) - 1.0) / BUMP_WIDTH).exp())
            .sum();
        ellipsoid * (1.0 + bump)
    }

    fn surface_point(&self, u: &Vector3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * (u * self.radius(u)) + self.centre)
    }

    /// Approximate signed distance (negative inside) and the local
    /// direction of `q`.
    fn signed_distance(&self, q: &Point3<f64>) -> (f64, Vector3<f64>) {
        let local = self.rotation.inverse() * (q.coords - self.centre);
        let r = local.norm();
        if r < 1e-9 {
            let u = Vector3::x();
            return (-self.radius(&u), u);
        }
        let u = local / r;
        (r - self.radius(&u), u)
    }
}

fn nearest_template_vertex(template: &[Vector3<f64>], dir: [f64; 3]) -> usize {
    let d = Vector3::from(dir);
    (0..template.len())
        .max_by(|&a, &b| {
            template[a]
                .dot(&d)
                .total_cmp(&template[b].dot(&d))
                .then(b.cmp(&a))
        })
        .unwrap_or(0)
}

/// Source mesh moved onto the target by matching centroids and per-axis
/// standard deviations.
fn moment_registered(source: &TriMesh, target: &TriMesh) -> TriMesh {
    let stats = |m: &TriMesh| {
        let c = m.centroid();
        let n = m.vertices.len() as f64;
        let mut var = Vector3::zeros();
        for v in &m.vertices {
            var += (v - c).component_mul(&(v - c));
        }
        (c, (var / n).map(f64::sqrt))
    };
    let (ca, sa) = stats(source);
    let (cb, sb) = stats(target);
    let scale = sb.component_div(&sa);
    source.with_vertices(
        source
            .vertices
            .iter()
            .map(|v| cb + (v - ca).component_mul(&scale))
            .collect(),
    )
}

fn patient_volume(
    shapes: &[Shape],
    meshes: &[TriMesh],
    rng: &mut ChaCha8Rng,
    noise: f64,
) -> Result<Volume, PipelineError> {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for m in meshes {
        let (a, b) = m.bounding_box();
        lo = lo.inf(&a.coords);
        hi = hi.sup(&b.coords);
    }
    lo -= Vector3::repeat(VOLUME_MARGIN_MM);
    hi += Vector3::repeat(VOLUME_MARGIN_MM);
    // Volume axes are (z, y, x).
    let origin = [lo.z, lo.y, lo.x];
    let extent = [hi.z - lo.z, hi.y - lo.y, hi.x - lo.x];
    let dims: [usize; 3] =
        std::array::from_fn(|a| (extent[a] / VOLUME_SPACING[a]).ceil() as usize + 1);
    let mut vol = Volume::filled(dims, VOLUME_SPACING, origin, 0)?;
    for k in 0..dims[0] {
        for j in 0..dims[1] {
            for i in 0..dims[2] {
                let q = Point3::from(vol.voxel_center(k, j, i));
                let (sd, u) = shapes
                    .iter()
                    .map(|s| s.signed_distance(&q))
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .unwrap_or((f64::INFINITY, Vector3::x()));
                let inside = 1.0 / (1.0 + (sd / EDGE_MM).exp());
                let organ = ORGAN_HU + ORGAN_HU_GRADIENT[0] * u.x + ORGAN_HU_GRADIENT[1] * u.y;
                let hu = BACKGROUND_HU
                    + inside * (organ - BACKGROUND_HU)
                    + rng.random_range(-noise..=noise);
                vol.set(
                    k,
                    j,
                    i,
                    hu.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16,
                );
            }
        }
    }
    Ok(vol)
}

/// Generates `n_shapes` synthetic patients with the default options.
pub fn synth_generate(
    seed: u64,
    n_shapes: usize,
    out_dir: &Path,
) -> Result<DatasetManifest, PipelineError> {
    SynthOptions::default().generate(seed, n_shapes, out_dir)
}

impl SynthOptions {
    pub fn generate(
        &self,
        seed: u64,
        n_shapes: usize,
        out_dir: &Path,
    ) -> Result<DatasetManifest, PipelineError> {
        if n_shapes < 4 {
            return Err(PipelineError::Validation(format!(
                "need at least 4 shapes, got {n_shapes}"
            )));
        }
        if self.organs.is_empty() {
            return Err(PipelineError::Validation("no organs requested".into()));
        }
        for sub in [
            "meshes",
            "volumes",
            "landmarks",
            "ground_truth",
            "nn_deformed",
        ] {
            fs::create_dir_all(out_dir.join(sub))?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sphere = icosphere(1.0, self.frequency);
        let template: Vec<Vector3<f64>> = sphere
            .vertices
            .iter()
            .map(|v| v.coords.normalize())
            .collect();
        let nv = template.len();
        let landmark_vertices: Vec<usize> = LANDMARK_DIRECTIONS
            .iter()
            .map(|&d| nearest_template_vertex(&template, d))
            .collect();

        let width = (n_shapes - 1).to_string().len().max(2);
        let patients: Vec<String> = (0..n_shapes).map(|k| format!("s{k:0width$}")).collect();
        let mut manifest = DatasetManifest {
            patients: patients.clone(),
            organs: self.organs.clone(),
            meshes: BTreeMap::new(),
            volumes: BTreeMap::new(),
            landmarks: BTreeMap::new(),
            alignment: BTreeMap::new(),
            ground_truth: BTreeMap::new(),
            root: out_dir.to_path_buf(),
        };
        let mut all_meshes: BTreeMap<(String, String), TriMesh> = BTreeMap::new();
        for p in &patients {
            let mut shapes = Vec::new();
            let mut meshes = Vec::new();
            let mut landmarks = PatientLandmarks::new();
            for (slot, organ) in self.organs.iter().enumerate() {
                let shape = Shape::random(&mut rng, slot, self);
                let mut perm: Vec<usize> = (0..nv).collect();
                perm.shuffle(&mut rng);
                let gt = GroundTruth {
                    template_index: perm,
                };
                let inv = gt.inverse();
                let vertices = gt
                    .template_index
                    .iter()
                    .map(|&t| shape.surface_point(&template[t]))
                    .collect();
                let faces = sphere.faces.iter().map(|f| f.map(|t| inv[t])).collect();
                let mesh = TriMesh::new(vertices, faces)?;

                let rel = PathBuf::from("meshes").join(format!("{p}__{organ}.ply"));
                save_mesh(&mesh, &out_dir.join(&rel))?;
                manifest
                    .meshes
                    .entry(p.clone())
                    .or_default()
                    .insert(organ.clone(), rel);
                let rel = PathBuf::from("ground_truth").join(format!("{p}__{organ}.csv"));
                gt.save(&out_dir.join(&rel))?;
                manifest
                    .ground_truth
                    .entry(p.clone())
                    .or_default()
                    .insert(organ.clone(), rel);

                let set = landmarks.entry(organ.clone()).or_default();
                for (name, &t) in LANDMARK_NAMES.iter().zip(&landmark_vertices) {
                    let v = mesh.vertices[inv[t]];
                    set.insert(name, [v.x, v.y, v.z])?;
                }
                all_meshes.insert((p.clone(), organ.clone()), mesh.clone());
                shapes.push(shape);
                meshes.push(mesh);
            }
            let vol = patient_volume(&shapes, &meshes, &mut rng, self.noise_hu)?;
            let rel = PathBuf::from("volumes").join(format!("{p}.vhdr"));
            vol.save(&out_dir.join(&rel))?;
            manifest.volumes.insert(p.clone(), rel);
            let rel = PathBuf::from("landmarks").join(format!("{p}.csv"));
            write_landmarks(&out_dir.join(&rel), &landmarks)?;
            manifest.landmarks.insert(p.clone(), rel);
        }
        if self.nn_deformed {
            for organ in &self.organs {
                for a in &patients {
                    for b in &patients {
                        if a == b {
                            continue;
                        }
                        let src = &all_meshes[&(a.clone(), organ.clone())];
                        let dst = &all_meshes[&(b.clone(), organ.clone())];
                        let path = out_dir
                            .join("nn_deformed")
                            .join(format!("{}.ply", pair_id(a, b, organ)));
                        save_mesh(&moment_registered(src, dst), &path)?;
                    }
                }
            }
        }
        manifest.save(&out_dir.join("manifest.json"))?;
        Ok(manifest)
    }
}
