//! Disk caches for geodesic tables and patch sets, keyed by content hashes
//! of the mesh and volume they derive from. Files are written to a
//! temporary name and renamed into place.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::geodesics::{geodesic_all_pairs, GeodesicTable};
use crate::meshkit::TriMesh;
use crate::volumes::{extract_patch_hu, raw_path, PatchSet, Volume, PATCH_LEN};

const PATCH_MAGIC: &[u8; 4] = b"PTCH";

/// SHA-256 of the vertex coordinates and faces.
pub fn mesh_digest(mesh: &TriMesh) -> String {
    let mut h = Sha256::new();
    h.update((mesh.vertices.len() as u64).to_le_bytes());
    for v in &mesh.vertices {
        for c in [v.x, v.y, v.z] {
            h.update(c.to_le_bytes());
        }
    }
    for f in &mesh.faces {
        for &i in f {
            h.update((i as u64).to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Content-addressed store. Without a directory every request is computed
/// afresh; results are identical either way.
#[derive(Debug, Default)]
pub struct AssetCache {
    dir: Option<PathBuf>,
    volume_digests: RefCell<BTreeMap<PathBuf, String>>,
    last_volume: RefCell<Option<(PathBuf, std::rc::Rc<Volume>)>>,
}

impl AssetCache {
    pub fn new(dir: Option<PathBuf>) -> Result<Self, PipelineError> {
        if let Some(d) = &dir {
            fs::create_dir_all(d)?;
        }
        Ok(Self {
            dir,
            ..Self::default()
        })
    }

    /// All-pairs geodesics at the precision they are stored with.
    pub fn geodesics(&self, mesh: &TriMesh) -> Result<GeodesicTable, PipelineError> {
        let Some(dir) = &self.dir else {
            return Ok(geodesic_all_pairs(mesh).quantized());
        };
        let path = dir.join(format!("geod_{}.bin", mesh_digest(mesh)));
        if let Ok(f) = fs::File::open(&path) {
            if let Ok(t) = GeodesicTable::read_from(&mut BufReader::new(f)) {
                if t.len() == mesh.vertex_count() {
                    return Ok(t);
                }
            }
        }
        let table = geodesic_all_pairs(mesh).quantized();
        let mut buf = Vec::new();
        table.write_to(&mut buf)?;
        atomic_write(&path, &buf)?;
        Ok(table)
    }

    fn volume_digest(&self, path: &Path) -> Result<String, PipelineError> {
        if let Some(d) = self.volume_digests.borrow().get(path) {
            return Ok(d.clone());
        }
        let mut h = Sha256::new();
        h.update(fs::read(path)?);
        h.update(fs::read(raw_path(path))?);
        let d = hex::encode(h.finalize());
        self.volume_digests
            .borrow_mut()
            .insert(path.to_path_buf(), d.clone());
        Ok(d)
    }

    fn volume(&self, path: &Path) -> Result<std::rc::Rc<Volume>, PipelineError> {
        if let Some((p, v)) = &*self.last_volume.borrow() {
            if p == path {
                return Ok(v.clone());
            }
        }
        let v = std::rc::Rc::new(Volume::load(path)?);
        *self.last_volume.borrow_mut() = Some((path.to_path_buf(), v.clone()));
        Ok(v)
    }

    /// Patches around every vertex, sampled at `vertex − translation` in
    /// the volume's frame.
    pub fn patches(
        &self,
        volume_path: &Path,
        mesh: &TriMesh,
        translation: [f64; 3],
    ) -> Result<PatchSet, PipelineError> {
        let compute = || -> Result<Vec<i16>, PipelineError> {
            let vol = self.volume(volume_path)?;
            let mut hu = Vec::with_capacity(mesh.vertex_count() * PATCH_LEN);
            for v in &mesh.vertices {
                let p = [
                    v.x - translation[0],
                    v.y - translation[1],
                    v.z - translation[2],
                ];
                hu.extend(extract_patch_hu(&vol, p));
            }
            Ok(hu)
        };
        let n = mesh.vertex_count();
        let Some(dir) = &self.dir else {
            return Ok(PatchSet::from_hu(n, &compute()?)?);
        };
        let mut h = Sha256::new();
        h.update(mesh_digest(mesh));
        h.update(self.volume_digest(volume_path)?);
        for t in translation {
            h.update(t.to_le_bytes());
        }
        let path = dir.join(format!("ptch_{}.bin", hex::encode(h.finalize())));
        if let Ok(bytes) = fs::read(&path) {
            if bytes.len() == 12 + n * PATCH_LEN * 2
                && &bytes[..4] == PATCH_MAGIC
                && u64::from_le_bytes(bytes[4..12].try_into().unwrap()) == n as u64
            {
                let hu: Vec<i16> = bytes[12..]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]))
                    .collect();
                return Ok(PatchSet::from_hu(n, &hu)?);
            }
        }
        let hu = compute()?;
        let mut buf = Vec::with_capacity(12 + hu.len() * 2);
        buf.extend_from_slice(PATCH_MAGIC);
        buf.extend_from_slice(&(n as u64).to_le_bytes());
        for v in &hu {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        atomic_write(&path, &buf)?;
        Ok(PatchSet::from_hu(n, &hu)?)
    }
}
