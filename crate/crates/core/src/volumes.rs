//! CT volumes, soft-tissue windowing and per-vertex image patches.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::meshkit::TriMesh;

/// Patch extent in voxels along `(z, y, x)`.
pub const PATCH_DIMS: [usize; 3] = [7, 19, 19];
/// Scalars per flattened patch.
pub const PATCH_LEN: usize = PATCH_DIMS[0] * PATCH_DIMS[1] * PATCH_DIMS[2];
/// Fill value for voxels outside the scan.
pub const AIR_HU: i16 = -1000;
pub const DEFAULT_WINDOW_WIDTH: f64 = 350.0;
pub const DEFAULT_WINDOW_LEVEL: f64 = 40.0;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("voxel buffer holds {actual} values but dims require {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("invalid volume geometry: {0}")]
    Geometry(String),
    #[error("malformed volume header: {0}")]
    Header(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scalar CT grid of Hounsfield units, stored z-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    /// `(nz, ny, nx)`.
    pub dims: [usize; 3],
    /// `(sz, sy, sx)` in mm.
    pub spacing: [f64; 3],
    /// `(oz, oy, ox)` in mm: the centre of voxel `(0, 0, 0)`.
    pub origin: [f64; 3],
    pub voxels: Vec<i16>,
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        voxels: Vec<i16>,
    ) -> Result<Self, VolumeError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(VolumeError::Geometry(format!(
                "dims {dims:?} must all be >= 1"
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(VolumeError::Geometry(format!(
                "spacing {spacing:?} must be positive"
            )));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if voxels.len() != expected {
            return Err(VolumeError::BufferLength {
                expected,
                actual: voxels.len(),
            });
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            voxels,
        })
    }

    pub fn filled(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        hu: i16,
    ) -> Result<Self, VolumeError> {
        Self::new(dims, spacing, origin, vec![hu; dims[0] * dims[1] * dims[2]])
    }

    #[inline]
    pub fn index(&self, k: usize, j: usize, i: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[2] + i
    }

    #[inline]
    pub fn get(&self, k: usize, j: usize, i: usize) -> i16 {
        self.voxels[self.index(k, j, i)]
    }

    pub fn set(&mut self, k: usize, j: usize, i: usize, hu: i16) {
        let idx = self.index(k, j, i);
        self.voxels[idx] = hu;
    }

    /// HU at signed voxel coordinates, air outside the grid.
    #[inline]
    pub fn get_or_air(&self, k: i64, j: i64, i: i64) -> i16 {
        if k < 0 || j < 0 || i < 0 {
            return AIR_HU;
        }
        let (k, j, i) = (k as usize, j as usize, i as usize);
        if k >= self.dims[0] || j >= self.dims[1] || i >= self.dims[2] {
            return AIR_HU;
        }
        self.get(k, j, i)
    }

    /// Index `(k, j, i)` of the voxel whose centre is nearest to `(x, y, z)`.
    pub fn nearest_voxel(&self, point: [f64; 3]) -> [i64; 3] {
        let [x, y, z] = point;
        let f = |p: f64, o: f64, s: f64| ((p - o) / s + 0.5).floor() as i64;
        [
            f(z, self.origin[0], self.spacing[0]),
            f(y, self.origin[1], self.spacing[1]),
            f(x, self.origin[2], self.spacing[2]),
        ]
    }

    /// World position `(x, y, z)` of a voxel centre.
    pub fn voxel_center(&self, k: usize, j: usize, i: usize) -> [f64; 3] {
        [
            self.origin[2] + i as f64 * self.spacing[2],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[0] + k as f64 * self.spacing[0],
        ]
    }

    /// Reads `path` (the text header) and its sibling `.raw` voxel file.
    pub fn load(path: &Path) -> Result<Self, VolumeError> {
        let text = fs::read_to_string(path)?;
        let mut dims = None;
        let mut spacing = None;
        let mut origin = None;
        let mut dtype = None;
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| VolumeError::Header(format!("expected key=value, got {line:?}")))?;
            let triple = |v: &str| -> Result<[f64; 3], VolumeError> {
                let parts: Vec<f64> = v
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| VolumeError::Header(format!("{key}: {e}")))?;
                parts
                    .try_into()
                    .map_err(|_| VolumeError::Header(format!("{key} needs three values")))
            };
            match key.trim() {
                "dims" => {
                    let d = triple(value)?;
                    if d.iter().any(|x| x.fract() != 0.0 || *x < 0.0) {
                        return Err(VolumeError::Header(
                            "dims must be non-negative integers".into(),
                        ));
                    }
                    dims = Some(d.map(|x| x as usize));
                }
                "spacing" => spacing = Some(triple(value)?),
                "origin" => origin = Some(triple(value)?),
                "dtype" => dtype = Some(value.trim().to_owned()),
                other => return Err(VolumeError::Header(format!("unknown key {other:?}"))),
            }
        }
        let missing = |k: &str| VolumeError::Header(format!("missing {k}"));
        let dims = dims.ok_or_else(|| missing("dims"))?;
        let spacing = spacing.ok_or_else(|| missing("spacing"))?;
        let origin = origin.ok_or_else(|| missing("origin"))?;
        match dtype.as_deref() {
            Some("int16-le") => {}
            other => return Err(VolumeError::Header(format!("unsupported dtype {other:?}"))),
        }
        let raw = fs::read(raw_path(path))?;
        if raw.len() % 2 != 0 {
            return Err(VolumeError::BufferLength {
                expected: dims.iter().product(),
                actual: raw.len() / 2,
            });
        }
        let voxels = raw
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]))
            .collect();
        Self::new(dims, spacing, origin, voxels)
    }

    /// Writes the header to `path` and voxels to its sibling `.raw` file.
    pub fn save(&self, path: &Path) -> Result<(), VolumeError> {
        let fmt = |a: [f64; 3]| format!("{:?},{:?},{:?}", a[0], a[1], a[2]);
        let header = format!(
            "dims={},{},{}\nspacing={}\norigin={}\ndtype=int16-le\n",
            self.dims[0],
            self.dims[1],
            self.dims[2],
            fmt(self.spacing),
            fmt(self.origin)
        );
        fs::write(path, header)?;
        let raw: Vec<u8> = self.voxels.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(raw_path(path), raw)?;
        Ok(())
    }
}

/// Voxel file accompanying a header: same stem, `.raw` extension.
pub fn raw_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

/// Maps HU onto `[0, 1]` with a linear window of the given width and level.
#[inline]
pub fn window_normalize(hu: f64, width: f64, level: f64) -> f64 {
    ((hu - (level - width / 2.0)) / width).clamp(0.0, 1.0)
}

/// Soft-tissue window (W 350, L 40).
#[inline]
pub fn window_soft_tissue(hu: f64) -> f64 {
    window_normalize(hu, DEFAULT_WINDOW_WIDTH, DEFAULT_WINDOW_LEVEL)
}

/// Windowed `7×19×19` patch centred on the voxel containing `point`,
/// flattened z-major. Voxels outside the scan read as air.
pub fn extract_patch(volume: &Volume, point: [f64; 3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(PATCH_LEN);
    write_patch(volume, point, &mut out);
    out
}

fn for_patch_hu(volume: &Volume, point: [f64; 3], mut f: impl FnMut(i16)) {
    let [kc, jc, ic] = volume.nearest_voxel(point);
    let half = PATCH_DIMS.map(|d| (d / 2) as i64);
    for dk in -half[0]..=half[0] {
        for dj in -half[1]..=half[1] {
            for di in -half[2]..=half[2] {
                f(volume.get_or_air(kc + dk, jc + dj, ic + di));
            }
        }
    }
}

fn write_patch(volume: &Volume, point: [f64; 3], out: &mut Vec<f64>) {
    for_patch_hu(volume, point, |hu| out.push(window_soft_tissue(hu as f64)));
}

/// Raw HU of the patch around `point`, in the same order as
/// [`extract_patch`].
pub fn extract_patch_hu(volume: &Volume, point: [f64; 3]) -> Vec<i16> {
    let mut out = Vec::with_capacity(PATCH_LEN);
    for_patch_hu(volume, point, |hu| out.push(hu));
    out
}

/// Per-vertex flattened patches, one row per mesh vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    count: usize,
    data: Vec<f64>,
}

impl PatchSet {
    pub fn from_rows(count: usize, data: Vec<f64>) -> Result<Self, VolumeError> {
        if data.len() != count * PATCH_LEN {
            return Err(VolumeError::BufferLength {
                expected: count * PATCH_LEN,
                actual: data.len(),
            });
        }
        Ok(Self { count, data })
    }

    /// Windows raw HU rows as produced by [`extract_patch_hu`].
    pub fn from_hu(count: usize, hu: &[i16]) -> Result<Self, VolumeError> {
        Self::from_rows(
            count,
            hu.iter().map(|&v| window_soft_tissue(v as f64)).collect(),
        )
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.data[v * PATCH_LEN..(v + 1) * PATCH_LEN]
    }

    /// Row-major `count × 2527` buffer.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// Extracts one patch per mesh vertex, in vertex order.
pub fn extract_patchset(volume: &Volume, mesh: &TriMesh) -> PatchSet {
    let mut data = Vec::with_capacity(mesh.vertex_count() * PATCH_LEN);
    for v in &mesh.vertices {
        write_patch(volume, [v.x, v.y, v.z], &mut data);
    }
    PatchSet {
        count: mesh.vertex_count(),
        data,
    }
}
