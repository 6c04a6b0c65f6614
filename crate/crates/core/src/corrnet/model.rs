use super::params::{CONV_FLAT, INTERP_INPUT};
use super::{
    BoundParams, CorrespondenceMatrix, CorrnetError, InterpolationSequence, MeshGraph, ModelConfig,
    ModelParams,
};
use crate::autodiff::{Tape, Tensor, Var};
use crate::meshkit::TriMesh;
use crate::volumes::{PatchSet, PATCH_DIMS, PATCH_LEN};

/// One mesh of a pair together with its precomputed graph and, for the
/// image-feature variant, its CT patches.
#[derive(Clone, Copy)]
pub struct PairInput<'a> {
    pub mesh: &'a TriMesh,
    pub graph: &'a MeshGraph,
    pub patches: Option<&'a PatchSet>,
}

/// Tape handles produced by one forward pass.
pub struct PairOutput<'t> {
    pub features_x: Var<'t>,
    pub features_y: Var<'t>,
    /// Soft correspondence `n × m`.
    pub pi: Var<'t>,
    /// Source coordinates `n × 3` (constant).
    pub vx: Var<'t>,
    /// Target coordinates `m × 3` (constant).
    pub vy: Var<'t>,
    /// `Π·V_Y − V_X`, `n × 3`.
    pub delta: Var<'t>,
    /// `d(t_k)` for each time step, `n × 3` each.
    pub displacements: Vec<Var<'t>>,
}

impl PairOutput<'_> {
    pub fn correspondence(&self) -> Result<CorrespondenceMatrix, CorrnetError> {
        let pi = self.pi.value();
        CorrespondenceMatrix::new(pi.rows(), pi.cols(), pi.data().to_vec())
    }

    pub fn sequence(&self, times: Vec<f64>) -> InterpolationSequence {
        let displacements = self
            .displacements
            .iter()
            .map(|d| {
                d.value()
                    .data()
                    .chunks_exact(3)
                    .map(|c| [c[0], c[1], c[2]])
                    .collect()
            })
            .collect();
        InterpolationSequence {
            times,
            displacements,
        }
    }
}

fn coords(mesh: &TriMesh) -> Result<Tensor, CorrnetError> {
    Ok(Tensor::matrix(
        mesh.vertex_count(),
        3,
        mesh.coordinate_rows(),
    )?)
}

/// Vertex coordinates relative to the centroid, divided by `scale`.
fn centred_coords(mesh: &TriMesh, scale: f64) -> Result<Tensor, CorrnetError> {
    let c = mesh.centroid();
    let data = mesh
        .vertices
        .iter()
        .flat_map(|v| {
            [
                (v.x - c.x) / scale,
                (v.y - c.y) / scale,
                (v.z - c.z) / scale,
            ]
        })
        .collect();
    Ok(Tensor::matrix(mesh.vertex_count(), 3, data)?)
}

/// Vertex coordinates relative to the centroid, divided per axis by their
/// standard deviation.
fn standardized_coords(mesh: &TriMesh) -> Result<Tensor, CorrnetError> {
    let c = mesh.centroid();
    let n = mesh.vertex_count() as f64;
    let mut var = [0.0; 3];
    for v in &mesh.vertices {
        let d = v - c;
        for a in 0..3 {
            var[a] += d[a] * d[a];
        }
    }
    let sd = var.map(|s| (s / n).sqrt().max(f64::MIN_POSITIVE));
    let data = mesh
        .vertices
        .iter()
        .flat_map(|v| {
            [
                (v.x - c.x) / sd[0],
                (v.y - c.y) / sd[1],
                (v.z - c.z) / sd[2],
            ]
        })
        .collect();
    Ok(Tensor::matrix(mesh.vertex_count(), 3, data)?)
}

/// Residual EdgeConv: `out_i = h_i + max_j MLP([h_i ‖ h_j − h_i])`.
///
/// The first MLP layer `[h_i ‖ h_j − h_i]·[W_a; W_b]` is evaluated as
/// `h_i·(W_a − W_b) + h_j·W_b`, so the per-vertex products are computed
/// once and only gathered per edge.
pub fn edgeconv_block<'t>(
    h: Var<'t>,
    graph: &MeshGraph,
    params: &BoundParams<'t>,
    prefix: &str,
) -> Result<Var<'t>, CorrnetError> {
    if h.value().rows() != graph.n {
        return Err(CorrnetError::ShapeMismatch(format!(
            "{} feature rows for a {}-vertex graph",
            h.value().rows(),
            graph.n
        )));
    }
    let wa = params.get(&format!("{prefix}.wa"))?;
    let wb = params.get(&format!("{prefix}.wb"))?;
    let b1 = params.get(&format!("{prefix}.b1"))?;
    let w2 = params.get(&format!("{prefix}.l2.w"))?;
    let b2 = params.get(&format!("{prefix}.l2.b"))?;
    let self_part = h.matmul(wa.sub(wb)?)?;
    let neighbour_part = h.matmul(wb)?;
    let hidden = self_part
        .gather_rows(graph.src.clone())?
        .add(neighbour_part.gather_rows(graph.dst.clone())?)?
        .add_bias(b1)?
        .relu();
    let messages = hidden.matmul(w2)?.add_bias(b2)?;
    let pooled = messages.segment_max(&graph.offsets)?;
    Ok(h.add(pooled)?)
}

fn graph_network<'t>(
    input: Var<'t>,
    graph: &MeshGraph,
    params: &BoundParams<'t>,
    net: &str,
    depth: usize,
) -> Result<Var<'t>, CorrnetError> {
    let mut h = input
        .matmul(params.get(&format!("{net}.lift.w"))?)?
        .add_bias(params.get(&format!("{net}.lift.b"))?)?;
    for k in 0..depth {
        h = edgeconv_block(h, graph, params, &format!("{net}.block{k}"))?;
    }
    Ok(h)
}

/// Per-patch 3D CNN: three 3×3×3 conv stages (1→8→16→32 channels, relu)
/// with 2×2 in-plane max pooling between stages, then a linear layer.
pub fn image_encoder<'t>(
    tape: &'t Tape,
    patches: &PatchSet,
    params: &BoundParams<'t>,
) -> Result<Var<'t>, CorrnetError> {
    let n = patches.count();
    if n == 0 {
        return Err(CorrnetError::ShapeMismatch("no patches to encode".into()));
    }
    debug_assert_eq!(patches.data().len(), n * PATCH_LEN);
    let [d, h, w] = PATCH_DIMS;
    let mut x = tape.constant(Tensor::new(vec![n, 1, d, h, w], patches.data().to_vec())?);
    for stage in 0..3 {
        let wgt = params.get(&format!("img.conv{stage}.w"))?;
        let bias = params.get(&format!("img.conv{stage}.b"))?;
        x = x.conv3d(wgt, bias)?.relu();
        if stage < 2 {
            x = x.pool_in_plane()?;
        }
    }
    let flat = x.reshape(&[n, CONV_FLAT])?;
    Ok(flat
        .matmul(params.get("img.fc.w")?)?
        .add_bias(params.get("img.fc.b")?)?)
}

/// `n × D` per-vertex features of one mesh.
pub fn extract_features<'t>(
    tape: &'t Tape,
    input: PairInput<'_>,
    params: &BoundParams<'t>,
    config: &ModelConfig,
) -> Result<Var<'t>, CorrnetError> {
    let n = input.mesh.vertex_count();
    if n == 0 {
        return Err(CorrnetError::ShapeMismatch("mesh has no vertices".into()));
    }
    let x = tape.constant(standardized_coords(input.mesh)?);
    let geo = graph_network(x, input.graph, params, "feat", config.geo_depth)?;
    if !config.use_image_features {
        return Ok(geo);
    }
    let patches = input.patches.ok_or(CorrnetError::MissingPatches)?;
    if patches.count() != n {
        return Err(CorrnetError::ShapeMismatch(format!(
            "{} patches for {n} vertices",
            patches.count()
        )));
    }
    let img = image_encoder(tape, patches, params)?;
    Ok(Var::concat_cols(&[geo, img])?)
}

/// `Π = row_softmax(F_X · F_Yᵀ / temperature)`.
pub fn match_features<'t>(
    fx: Var<'t>,
    fy: Var<'t>,
    temperature: f64,
) -> Result<Var<'t>, CorrnetError> {
    if fx.value().cols() != fy.value().cols() {
        return Err(CorrnetError::ShapeMismatch(format!(
            "feature widths {} and {}",
            fx.value().cols(),
            fy.value().cols()
        )));
    }
    Ok(fx.matmul(fy.transpose()?)?.row_softmax(temperature)?)
}

/// `Δ = Π·V_Y − V_X`.
pub fn compute_offsets<'t>(pi: Var<'t>, vy: Var<'t>, vx: Var<'t>) -> Result<Var<'t>, CorrnetError> {
    let (p, y, x) = (pi.value(), vy.value(), vx.value());
    if p.cols() != y.rows() || p.rows() != x.rows() || y.cols() != 3 || x.cols() != 3 {
        return Err(CorrnetError::ShapeMismatch(format!(
            "Π {:?}, V_Y {:?}, V_X {:?}",
            p.shape(),
            y.shape(),
            x.shape()
        )));
    }
    Ok(pi.matmul(vy)?.sub(vx)?)
}

/// Displacements `d(t_k)` from `[V_X ‖ Δ ‖ t_k]` for each time step.
pub fn interpolate<'t>(
    tape: &'t Tape,
    source: PairInput<'_>,
    delta: Var<'t>,
    params: &BoundParams<'t>,
    config: &ModelConfig,
) -> Result<Vec<Var<'t>>, CorrnetError> {
    let n = source.mesh.vertex_count();
    if delta.value().shape() != [n, 3] {
        return Err(CorrnetError::ShapeMismatch(format!(
            "offsets {:?} for {n} vertices",
            delta.value().shape()
        )));
    }
    let s = config.coord_scale;
    let pos = tape.constant(centred_coords(source.mesh, s)?);
    let offsets = delta.scale(1.0 / s);
    let head_w = params.get("interp.head.w")?;
    let head_b = params.get("interp.head.b")?;
    let mut out = Vec::with_capacity(config.time_steps);
    for t in config.time_values() {
        let tcol = tape.constant(Tensor::filled(&[n, 1], t));
        let input = Var::concat_cols(&[pos, offsets, tcol])?;
        debug_assert_eq!(input.value().cols(), INTERP_INPUT);
        let h = graph_network(input, source.graph, params, "interp", config.geo_depth)?;
        out.push(h.matmul(head_w)?.add_bias(head_b)?.scale(s));
    }
    Ok(out)
}

/// Full forward pass on an existing tape.
pub fn forward_pair_on_tape<'t>(
    tape: &'t Tape,
    x: PairInput<'_>,
    y: PairInput<'_>,
    params: &BoundParams<'t>,
    config: &ModelConfig,
) -> Result<PairOutput<'t>, CorrnetError> {
    let features_x = extract_features(tape, x, params, config)?;
    let features_y = extract_features(tape, y, params, config)?;
    let pi = match_features(features_x, features_y, config.temperature())?;
    let vx = tape.constant(coords(x.mesh)?);
    let vy = tape.constant(coords(y.mesh)?);
    let delta = compute_offsets(pi, vy, vx)?;
    let displacements = interpolate(tape, x, delta, params, config)?;
    Ok(PairOutput {
        features_x,
        features_y,
        pi,
        vx,
        vy,
        delta,
        displacements,
    })
}

/// Inference: soft correspondence and interpolation sequence for one pair.
pub fn forward_pair(
    mesh_x: &TriMesh,
    mesh_y: &TriMesh,
    patches_x: Option<&PatchSet>,
    patches_y: Option<&PatchSet>,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(CorrespondenceMatrix, InterpolationSequence), CorrnetError> {
    let gx = MeshGraph::from_mesh(mesh_x);
    let gy = MeshGraph::from_mesh(mesh_y);
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    let out = forward_pair_on_tape(
        &tape,
        PairInput {
            mesh: mesh_x,
            graph: &gx,
            patches: patches_x,
        },
        PairInput {
            mesh: mesh_y,
            graph: &gy,
            patches: patches_y,
        },
        &bound,
        config,
    )?;
    let pi = out.correspondence()?;
    debug_assert!(pi.stochasticity_error() < 1e-6);
    Ok((pi, out.sequence(config.time_values())))
}
