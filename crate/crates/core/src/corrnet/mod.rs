//! Siamese residual-EdgeConv correspondence network with a time-stepped
//! displacement interpolator and an optional CT-patch encoder.
//!
//! Both meshes of a pair go through the same feature extractor. Feature
//! inner products, scaled by a temperature and softmax-normalised per row,
//! give the soft correspondence matrix Π. The interpolator then consumes
//! `[V_X ‖ Δ ‖ t]` with `Δ = Π·V_Y − V_X` and predicts one displacement
//! field per time step.

pub mod io;
mod model;
mod params;

use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::meshkit::TriMesh;

pub use model::{
    compute_offsets, edgeconv_block, extract_features, forward_pair, forward_pair_on_tape,
    image_encoder, interpolate, match_features, PairInput, PairOutput,
};
pub use params::{BoundParams, ModelParams};

#[derive(Debug, Error)]
pub enum CorrnetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("image features are enabled but no patches were supplied")]
    MissingPatches,
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("parameter {0} is missing or has the wrong shape")]
    BadParameter(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("bad correspondence file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub geo_width: usize,
    pub geo_depth: usize,
    pub use_image_features: bool,
    pub img_width: usize,
    pub time_steps: usize,
    /// Matching temperature; `None` means `√D` for feature width `D`.
    pub softmax_temperature: Option<f64>,
    /// Length in mm that maps to one unit of network input.
    pub coord_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            geo_width: 128,
            geo_depth: 6,
            use_image_features: false,
            img_width: 64,
            time_steps: 5,
            softmax_temperature: None,
            coord_scale: 30.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), CorrnetError> {
        let bad = |m: &str| Err(CorrnetError::InvalidConfig(m.to_owned()));
        if self.geo_width == 0 || self.img_width == 0 {
            return bad("widths must be at least 1");
        }
        if self.geo_depth == 0 {
            return bad("depth must be at least 1");
        }
        if self.time_steps == 0 {
            return bad("time_steps must be at least 1");
        }
        if !(self.coord_scale > 0.0) {
            return bad("coord_scale must be positive");
        }
        if let Some(t) = self.softmax_temperature {
            if !(t > 0.0) {
                return bad("softmax_temperature must be positive");
            }
        }
        Ok(())
    }

    /// Width `D` of the matched feature vectors.
    pub fn feature_dim(&self) -> usize {
        if self.use_image_features {
            self.geo_width + self.img_width
        } else {
            self.geo_width
        }
    }

    pub fn temperature(&self) -> f64 {
        self.softmax_temperature
            .unwrap_or_else(|| (self.feature_dim() as f64).sqrt())
    }

    /// `t_k = k / T` for `k = 1..=T`.
    pub fn time_values(&self) -> Vec<f64> {
        (1..=self.time_steps)
            .map(|k| k as f64 / self.time_steps as f64)
            .collect()
    }
}

/// Directed edge lists grouped by receiving vertex, for EdgeConv.
///
/// Edge `e` carries a message from `dst[e]` to `src[e]`; the edges of
/// vertex `i` occupy `offsets[i]..offsets[i + 1]`. Vertices without
/// neighbours get a self-loop so every segment is non-empty.
#[derive(Debug, Clone)]
pub struct MeshGraph {
    pub n: usize,
    pub src: Rc<[usize]>,
    pub dst: Rc<[usize]>,
    pub offsets: Vec<usize>,
}

impl MeshGraph {
    pub fn from_mesh(mesh: &TriMesh) -> Self {
        Self::from_rings(&mesh.one_ring())
    }

    pub fn from_rings(rings: &[Vec<usize>]) -> Self {
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut offsets = vec![0];
        for (i, ring) in rings.iter().enumerate() {
            if ring.is_empty() {
                src.push(i);
                dst.push(i);
            }
            for &j in ring {
                src.push(i);
                dst.push(j);
            }
            offsets.push(src.len());
        }
        Self {
            n: rings.len(),
            src: src.into(),
            dst: dst.into(),
            offsets,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.src.len()
    }
}

/// Row-stochastic soft correspondence, source rows × target columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMatrix {
    pub n: usize,
    pub m: usize,
    pub data: Vec<f64>,
}

impl CorrespondenceMatrix {
    pub fn new(n: usize, m: usize, data: Vec<f64>) -> Result<Self, CorrnetError> {
        if data.len() != n * m {
            return Err(CorrnetError::ShapeMismatch(format!(
                "{n}×{m} correspondence with {} entries",
                data.len()
            )));
        }
        Ok(Self { n, m, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, m: n, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    /// Largest deviation of a row sum from one, or `INFINITY` if any entry is
    /// negative or not finite.
    pub fn stochasticity_error(&self) -> f64 {
        if self.data.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return f64::INFINITY;
        }
        (0..self.n)
            .map(|i| (self.row(i).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Row-wise argmax with ties going to the lowest column.
pub fn hard_correspondence(pi: &CorrespondenceMatrix) -> Vec<usize> {
    (0..pi.n)
        .map(|i| {
            let row = pi.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Displacement fields `d(t_k)` for `t_k = k/T`, each `n × 3` in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationSequence {
    pub times: Vec<f64>,
    pub displacements: Vec<Vec<[f64; 3]>>,
}

impl InterpolationSequence {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.displacements.first().map_or(0, Vec::len)
    }

    /// Deformed source mesh at step `k` (`k = 0` is the source itself).
    pub fn frame(&self, source: &TriMesh, k: usize) -> TriMesh {
        if k == 0 {
            return source.clone();
        }
        let d = &self.displacements[k - 1];
        let verts = source
            .vertices
            .iter()
            .zip(d)
            .map(|(v, d)| nalgebra::Point3::new(v.x + d[0], v.y + d[1], v.z + d[2]))
            .collect();
        source.with_vertices(verts)
    }

    /// Deformed source mesh at `t = 1`.
    pub fn final_frame(&self, source: &TriMesh) -> TriMesh {
        self.frame(source, self.len())
    }

    pub fn is_finite(&self) -> bool {
        self.displacements
            .iter()
            .all(|f| f.iter().all(|d| d.iter().all(|v| v.is_finite())))
    }
}
