//! Dataset manifest (JSON) and landmark files.
//!
//! Paths in a manifest are relative to the manifest's directory unless
//! absolute. Landmark files are CSV with header `name,organ,x,y,z`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::metrics::LandmarkSet;

/// Landmarks of one patient grouped by organ.
pub type PatientLandmarks = BTreeMap<String, LandmarkSet>;

/// Known vertex correspondence of a synthetic shape: entry `k` is the
/// template vertex that vertex `k` was generated from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub template_index: Vec<usize>,
}

impl GroundTruth {
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![usize::MAX; self.template_index.len()];
        for (k, &t) in self.template_index.iter().enumerate() {
            inv[t] = k;
        }
        inv
    }

    /// Map from this shape's vertices to `other`'s.
    pub fn map_to(&self, other: &GroundTruth) -> Vec<usize> {
        let inv = other.inverse();
        self.template_index.iter().map(|&t| inv[t]).collect()
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("vertex_index,template_index") {
            return Err(PipelineError::Validation(format!(
                "{}: missing header",
                path.display()
            )));
        }
        let mut template_index = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (k, t) = line
                .split_once(',')
                .ok_or_else(|| PipelineError::Validation(format!("bad line {line:?}")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| PipelineError::Validation(format!("{e} in {line:?}")))
            };
            if parse(k)? != template_index.len() {
                return Err(PipelineError::Validation(
                    "vertex indices must be consecutive".into(),
                ));
            }
            template_index.push(parse(t)?);
        }
        let gt = Self { template_index };
        if gt.inverse().contains(&usize::MAX) {
            return Err(PipelineError::Validation(format!(
                "{}: not a permutation",
                path.display()
            )));
        }
        Ok(gt)
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let mut s = String::from("vertex_index,template_index\n");
        for (k, t) in self.template_index.iter().enumerate() {
            s.push_str(&format!("{k},{t}\n"));
        }
        fs::write(path, s)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub patients: Vec<String>,
    pub organs: Vec<String>,
    /// Patient, then organ, to mesh file.
    pub meshes: BTreeMap<String, BTreeMap<String, PathBuf>>,
    /// Patient to CT volume header.
    #[serde(default)]
    pub volumes: BTreeMap<String, PathBuf>,
    /// Patient to landmark CSV.
    #[serde(default)]
    pub landmarks: BTreeMap<String, PathBuf>,
    /// Patient to the translation (mm) that was added to its meshes to
    /// align it with the reference patient. Patches are sampled at the
    /// unaligned positions.
    #[serde(default)]
    pub alignment: BTreeMap<String, [f64; 3]>,
    /// Patient, then organ, to ground-truth correspondence file.
    #[serde(default)]
    pub ground_truth: BTreeMap<String, BTreeMap<String, PathBuf>>,
    /// Directory the relative paths are resolved against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let mut m: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    fn check_exists(&self, p: &Path) -> Result<(), PipelineError> {
        let full = self.resolve(p);
        if full.exists() {
            Ok(())
        } else {
            Err(PipelineError::MissingFile(full.display().to_string()))
        }
    }

    /// Every patient has every organ and every referenced file exists.
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.patients.is_empty() || self.organs.is_empty() {
            return Err(PipelineError::Validation(
                "manifest lists no patients or organs".into(),
            ));
        }
        for p in &self.patients {
            let meshes = self
                .meshes
                .get(p)
                .ok_or_else(|| PipelineError::Validation(format!("no meshes for patient {p}")))?;
            let organs: Vec<&String> = meshes.keys().collect();
            let mut expected: Vec<&String> = self.organs.iter().collect();
            expected.sort();
            if organs != expected {
                return Err(PipelineError::Validation(format!(
                    "patient {p} has organs {organs:?}, expected {expected:?}"
                )));
            }
            for path in meshes.values() {
                self.check_exists(path)?;
            }
        }
        let files = self
            .volumes
            .values()
            .chain(self.landmarks.values())
            .chain(self.ground_truth.values().flat_map(|m| m.values()));
        for path in files {
            self.check_exists(path)?;
        }
        Ok(())
    }

    pub fn mesh_path(&self, patient: &str, organ: &str) -> Result<PathBuf, PipelineError> {
        self.meshes
            .get(patient)
            .and_then(|m| m.get(organ))
            .map(|p| self.resolve(p))
            .ok_or_else(|| PipelineError::Validation(format!("no mesh for {patient}/{organ}")))
    }

    pub fn volume_path(&self, patient: &str) -> Option<PathBuf> {
        self.volumes.get(patient).map(|p| self.resolve(p))
    }

    pub fn alignment(&self, patient: &str) -> [f64; 3] {
        self.alignment.get(patient).copied().unwrap_or([0.0; 3])
    }

    pub fn ground_truth(
        &self,
        patient: &str,
        organ: &str,
    ) -> Result<Option<GroundTruth>, PipelineError> {
        match self.ground_truth.get(patient).and_then(|m| m.get(organ)) {
            Some(p) => Ok(Some(GroundTruth::load(&self.resolve(p))?)),
            None => Ok(None),
        }
    }

    pub fn landmarks(&self, patient: &str) -> Result<PatientLandmarks, PipelineError> {
        match self.landmarks.get(patient) {
            Some(p) => read_landmarks(&self.resolve(p)),
            None => Ok(PatientLandmarks::new()),
        }
    }
}

pub fn read_landmarks(path: &Path) -> Result<PatientLandmarks, PipelineError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("name,organ,x,y,z") {
        return Err(PipelineError::Validation(format!(
            "{}: missing landmark header",
            path.display()
        )));
    }
    let mut out = PatientLandmarks::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(PipelineError::Validation(format!(
                "bad landmark row {line:?}"
            )));
        }
        let mut xyz = [0.0; 3];
        for (k, v) in f[2..].iter().enumerate() {
            xyz[k] = v
                .parse()
                .map_err(|e| PipelineError::Validation(format!("{e} in {line:?}")))?;
        }
        out.entry(f[1].to_owned()).or_default().insert(f[0], xyz)?;
    }
    Ok(out)
}

pub fn write_landmarks(path: &Path, landmarks: &PatientLandmarks) -> Result<(), PipelineError> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "name,organ,x,y,z")?;
    for (organ, set) in landmarks {
        for (name, p) in &set.points {
            writeln!(f, "{name},{organ},{:?},{:?},{:?}", p[0], p[1], p[2])?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_truth_composes_to_identity() {
        let a = GroundTruth {
            template_index: vec![2, 0, 3, 1],
        };
        let b = GroundTruth {
            template_index: vec![1, 3, 0, 2],
        };
        let ab = a.map_to(&b);
        let ba = b.map_to(&a);
        for k in 0..4 {
            assert_eq!(ba[ab[k]], k);
            assert_eq!(b.template_index[ab[k]], a.template_index[k]);
        }
        assert_eq!(a.map_to(&a), vec![0, 1, 2, 3]);
    }

    #[test]
    fn landmark_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.csv");
        let mut lm = PatientLandmarks::new();
        lm.entry("gland".into())
            .or_default()
            .insert("pineal_gland", [1.5, -2.0, 0.1])
            .unwrap();
        write_landmarks(&path, &lm).unwrap();
        assert_eq!(read_landmarks(&path).unwrap(), lm);
    }
}
