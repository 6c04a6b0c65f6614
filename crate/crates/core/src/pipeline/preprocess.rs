//! Organ masks to aligned, simplified surface meshes.
//!
//! Input layout: `masks/<patient>/<organ>.vhdr` binary mask volumes and
//! `volumes/<patient>.vhdr` CT volumes, all in the volume header format of
//! [`crate::volumes`]. Each mask is meshed at the iso level, smoothed,
//! decimated and remeshed. Patients are aligned to the first one by
//! translating the centroid of all their mask voxels onto the reference
//! centroid.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use super::manifest::DatasetManifest;
use super::PipelineError;
use crate::meshkit::io::save_mesh;
use crate::meshkit::{
    apply_rigid, marching_cubes_field, quadric_decimate, remesh_optimize, taubin_smooth,
    RigidTransform, TriMesh,
};
use crate::volumes::Volume;

const TAUBIN_LAMBDA: f64 = 0.5;
const TAUBIN_MU: f64 = -0.53;

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessOptions {
    pub faces: usize,
    /// Target for organs whose name contains one of `small_organs`.
    pub faces_small: usize,
    pub small_organs: Vec<String>,
    pub taubin_iters: usize,
    pub remesh_iters: usize,
    pub iso: f64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            faces: 3000,
            faces_small: 2000,
            small_organs: vec!["submandibular".to_owned()],
            taubin_iters: 10,
            remesh_iters: 3,
            iso: 0.5,
        }
    }
}

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<PathBuf>, PipelineError> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() == want_dirs {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Mesh of one binary mask, padded by a ring of background so organs
/// touching the scan border still close.
pub fn mask_to_mesh(
    mask: &Volume,
    target_faces: usize,
    opts: &PreprocessOptions,
) -> Result<TriMesh, PipelineError> {
    let [nz, ny, nx] = mask.dims;
    let origin = [
        mask.origin[0] - mask.spacing[0],
        mask.origin[1] - mask.spacing[1],
        mask.origin[2] - mask.spacing[2],
    ];
    let surface = marching_cubes_field(
        [nz + 2, ny + 2, nx + 2],
        mask.spacing,
        origin,
        opts.iso,
        |k, j, i| {
            if k == 0 || j == 0 || i == 0 || k > nz || j > ny || i > nx {
                0.0
            } else {
                mask.get(k - 1, j - 1, i - 1) as f64
            }
        },
    )?;
    let smooth = taubin_smooth(&surface, opts.taubin_iters, TAUBIN_LAMBDA, TAUBIN_MU);
    let decimated = quadric_decimate(&smooth, target_faces).mesh;
    Ok(remesh_optimize(&decimated, opts.remesh_iters))
}

fn foreground_sum(mask: &Volume, iso: f64) -> (Vector3<f64>, f64) {
    let mut sum = Vector3::zeros();
    let mut count = 0.0;
    for k in 0..mask.dims[0] {
        for j in 0..mask.dims[1] {
            for i in 0..mask.dims[2] {
                if mask.get(k, j, i) as f64 > iso {
                    sum += Vector3::from(mask.voxel_center(k, j, i));
                    count += 1.0;
                }
            }
        }
    }
    (sum, count)
}

pub fn preprocess(
    masks_dir: &Path,
    volumes_dir: &Path,
    out_dir: &Path,
    opts: &PreprocessOptions,
) -> Result<DatasetManifest, PipelineError> {
    let patient_dirs = sorted_entries(masks_dir, true)?;
    if patient_dirs.is_empty() {
        return Err(PipelineError::Validation(format!(
            "no patient folders in {}",
            masks_dir.display()
        )));
    }
    let organs: Vec<String> = sorted_entries(&patient_dirs[0], false)?
        .iter()
        .filter(|p| p.extension().is_some_and(|e| e == "vhdr"))
        .map(|p| stem(p))
        .collect();
    if organs.is_empty() {
        return Err(PipelineError::Validation("no organ masks found".into()));
    }
    fs::create_dir_all(out_dir.join("meshes"))?;
    let mut manifest = DatasetManifest {
        patients: Vec::new(),
        organs: organs.clone(),
        meshes: BTreeMap::new(),
        volumes: BTreeMap::new(),
        landmarks: BTreeMap::new(),
        alignment: BTreeMap::new(),
        ground_truth: BTreeMap::new(),
        root: out_dir.to_path_buf(),
    };
    let mut reference: Option<Vector3<f64>> = None;
    for dir in &patient_dirs {
        let patient = stem(dir);
        let ct = volumes_dir.join(format!("{patient}.vhdr"));
        if !ct.exists() {
            return Err(PipelineError::MissingFile(ct.display().to_string()));
        }
        let mut masks = Vec::new();
        let (mut sum, mut count) = (Vector3::zeros(), 0.0);
        for organ in &organs {
            let path = dir.join(format!("{organ}.vhdr"));
            if !path.exists() {
                return Err(PipelineError::MissingFile(path.display().to_string()));
            }
            let mask = Volume::load(&path)?;
            let (s, c) = foreground_sum(&mask, opts.iso);
            sum += s;
            count += c;
            masks.push(mask);
        }
        if count == 0.0 {
            return Err(PipelineError::Validation(format!(
                "patient {patient} has empty masks"
            )));
        }
        let centroid = sum / count;
        let shift = *reference.get_or_insert(centroid) - centroid;
        let align = RigidTransform::translation(shift);
        for (organ, mask) in organs.iter().zip(&masks) {
            let small = opts.small_organs.iter().any(|s| organ.contains(s.as_str()));
            let target = if small { opts.faces_small } else { opts.faces };
            let mesh = apply_rigid(&mask_to_mesh(mask, target, opts)?, &align)?;
            mesh.validate()?;
            let rel = PathBuf::from("meshes").join(format!("{patient}__{organ}.ply"));
            save_mesh(&mesh, &out_dir.join(&rel))?;
            manifest
                .meshes
                .entry(patient.clone())
                .or_default()
                .insert(organ.clone(), rel);
        }
        manifest
            .volumes
            .insert(patient.clone(), fs::canonicalize(&ct)?);
        manifest
            .alignment
            .insert(patient.clone(), [shift.x, shift.y, shift.z]);
        manifest.patients.push(patient);
    }
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball_mask(centre: [f64; 3], radius: f64) -> Volume {
        let mut v = Volume::filled([14, 36, 36], [2.5, 1.0, 1.0], [0.0; 3], 0).unwrap();
        for k in 0..14 {
            for j in 0..36 {
                for i in 0..36 {
                    let [x, y, z] = v.voxel_center(k, j, i);
                    let d = ((x - centre[0]).powi(2)
                        + (y - centre[1]).powi(2)
                        + (z - centre[2]).powi(2))
                    .sqrt();
                    if d < radius {
                        v.set(k, j, i, 1);
                    }
                }
            }
        }
        v
    }

    #[test]
    fn masks_become_aligned_meshes() {
        let dir = tempfile::tempdir().unwrap();
        let masks = dir.path().join("masks");
        let vols = dir.path().join("volumes");
        fs::create_dir_all(&vols).unwrap();
        for (p, c) in [("a", [17.0, 17.0, 16.0]), ("b", [20.0, 15.0, 17.5])] {
            fs::create_dir_all(masks.join(p)).unwrap();
            ball_mask(c, 9.0)
                .save(&masks.join(p).join("gland.vhdr"))
                .unwrap();
            Volume::filled([4, 4, 4], [1.0; 3], [0.0; 3], 0)
                .unwrap()
                .save(&vols.join(format!("{p}.vhdr")))
                .unwrap();
        }
        let opts = PreprocessOptions {
            faces: 400,
            ..PreprocessOptions::default()
        };
        let out = dir.path().join("out");
        let m = preprocess(&masks, &vols, &out, &opts).unwrap();
        assert_eq!(m.patients, vec!["a", "b"]);
        let loaded = DatasetManifest::load(&out.join("manifest.json")).unwrap();
        let a = crate::meshkit::io::load_mesh(&loaded.mesh_path("a", "gland").unwrap()).unwrap();
        let b = crate::meshkit::io::load_mesh(&loaded.mesh_path("b", "gland").unwrap()).unwrap();
        assert!(a.face_count() <= 400);
        assert_eq!(a.euler_characteristic(), 2);
        assert!((a.centroid() - b.centroid()).norm() < 1.0);
        let shift = loaded.alignment("b");
        assert!((shift[0] + 3.0).abs() < 0.5 && (shift[1] - 2.0).abs() < 0.5);
    }
}
