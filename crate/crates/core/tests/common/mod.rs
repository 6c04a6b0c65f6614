//! Shared fixtures, brute-force oracles and the acceptance checks.
#![allow(dead_code)]

use std::time::{Duration, Instant};

use nalgebra::{Point3, Rotation3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use organcorr::autodiff::gradcheck::{check_op, relative_error, FD_STEP, OPS};
use organcorr::autodiff::{Tape, Tensor};
use organcorr::corrnet::{forward_pair, hard_correspondence, MeshGraph, ModelConfig, ModelParams};
use organcorr::geodesics::{geodesic_all_pairs, sample_pairs, GeodesicTable};
use organcorr::losses::{
    arap_loss, frames_from_displacements, geodesic_loss, imaging_loss, registration_loss,
    total_loss, LossTerms, LossWeights,
};
use organcorr::meshkit::primitives::icosphere;
use organcorr::meshkit::{quadric_decimate, remesh_optimize, taubin_smooth, TriMesh};
use organcorr::metrics::{
    brute_force_nearest, chamfer, distortion_between, nn_baseline, wilcoxon_enumerated,
    wilcoxon_signed_rank,
};
use organcorr::pipeline::{
    make_folds, pair_loss, pair_scheduler, AssetCache, PairAssets, Phase, TrainConfig, Variant,
};
use organcorr::volumes::{window_soft_tissue, PatchSet, PATCH_LEN};

/// Result of one acceptance criterion.
pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(&[rows, cols], |_| rng.random_range(lo..hi))
}

/// Random row-stochastic `n × m` matrix.
pub fn random_stochastic(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * m);
    for _ in 0..n {
        let row: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = row.iter().sum();
        data.extend(row.iter().map(|v| v / s));
    }
    Tensor::matrix(n, m, data).unwrap()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Mesh with its vertices relabelled: new vertex `perm[i]` is old vertex `i`.
pub fn permuted(mesh: &TriMesh, perm: &[usize]) -> TriMesh {
    let mut vertices = vec![Point3::origin(); mesh.vertices.len()];
    for (old, &new) in perm.iter().enumerate() {
        vertices[new] = mesh.vertices[old];
    }
    let faces = mesh.faces.iter().map(|f| f.map(|v| perm[v])).collect();
    TriMesh::new(vertices, faces).unwrap()
}

pub fn random_permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Icosphere with every vertex pushed radially by a random factor.
pub fn bumpy_sphere(rng: &mut ChaCha8Rng, radius: f64, frequency: usize, jitter: f64) -> TriMesh {
    let m = icosphere(radius, frequency);
    let v = m
        .vertices
        .iter()
        .map(|p| Point3::from(p.coords * (1.0 + rng.random_range(-jitter..jitter))))
        .collect();
    m.with_vertices(v)
}

/// Closed surface with 30 vertices: a frequency-2 icosphere decimated to
/// 56 faces and then moved off the sphere.
pub fn thirty_vertex_mesh(rng: &mut ChaCha8Rng, radius: f64) -> TriMesh {
    let base = quadric_decimate(&icosphere(radius, 2), 56).mesh;
    assert_eq!(base.vertex_count(), 30);
    let v = base
        .vertices
        .iter()
        .map(|p| {
            Point3::new(
                p.x * 1.3 * (1.0 + rng.random_range(-0.05..0.05)),
                p.y * (1.0 + rng.random_range(-0.05..0.05)),
                p.z * 0.8 * (1.0 + rng.random_range(-0.05..0.05)),
            )
        })
        .collect();
    base.with_vertices(v)
}

// ---------------------------------------------------------------------------
// Dense oracles

/// `(1/n) Σ_i Σ_c (X_ic − Σ_j Π_ij Y_jc)²` with explicit loops.
pub fn dense_registration(x: &Tensor, pi: &Tensor, y: &Tensor) -> f64 {
    let (n, m) = (pi.rows(), pi.cols());
    let mut total = 0.0;
    for i in 0..n {
        for c in 0..3 {
            let t: f64 = (0..m).map(|j| pi.at(i, j) * y.at(j, c)).sum();
            total += (x.at(i, c) - t).powi(2);
        }
    }
    total / n as f64
}

/// Mean over pairs of `(Σ_a Σ_b Π_ia D_ab Π_jb − D_X(i, j))²`.
pub fn dense_geodesic(
    pi: &Tensor,
    dx: &GeodesicTable,
    dy: &Tensor,
    pairs: &[(usize, usize)],
) -> f64 {
    let m = pi.cols();
    let mut total = 0.0;
    for &(i, j) in pairs {
        let mut p = 0.0;
        for a in 0..m {
            for b in 0..m {
                p += pi.at(i, a) * dy.at(a, b) * pi.at(j, b);
            }
        }
        total += (p - dx.get(i, j)).powi(2);
    }
    total / pairs.len() as f64
}

/// Mean over `n × 2527` entries of `(Σ_j Π_ij P_Y[j, k] − P_X[i, k])²`.
pub fn dense_imaging(pi: &Tensor, px: &PatchSet, py: &PatchSet) -> f64 {
    let (n, m) = (pi.rows(), pi.cols());
    let mut total = 0.0;
    for i in 0..n {
        for k in 0..PATCH_LEN {
            let p: f64 = (0..m).map(|j| pi.at(i, j) * py.row(j)[k]).sum();
            total += (p - px.row(i)[k]).powi(2);
        }
    }
    total / (n * PATCH_LEN) as f64
}

/// All-pairs shortest paths by Floyd–Warshall over the mesh edges.
pub fn floyd_warshall(mesh: &TriMesh) -> Vec<f64> {
    let n = mesh.vertex_count();
    let mut d = vec![f64::INFINITY; n * n];
    for i in 0..n {
        d[i * n + i] = 0.0;
    }
    for [a, b] in mesh.edges() {
        let w = (mesh.vertices[a] - mesh.vertices[b]).norm();
        d[a * n + b] = d[a * n + b].min(w);
        d[b * n + a] = d[b * n + a].min(w);
    }
    for k in 0..n {
        for i in 0..n {
            let dik = d[i * n + k];
            if dik.is_infinite() {
                continue;
            }
            for j in 0..n {
                let via = dik + d[k * n + j];
                if via < d[i * n + j] {
                    d[i * n + j] = via;
                }
            }
        }
    }
    d
}

pub fn brute_chamfer(points: &[[f64; 3]], target: &[[f64; 3]]) -> f64 {
    let total: f64 = points
        .iter()
        .map(|p| brute_force_nearest(target, p).map_or(0.0, |(_, d)| d.sqrt()))
        .sum();
    total / points.len() as f64
}

fn closest_on_triangle(
    p: Vector3<f64>,
    a: Vector3<f64>,
    b: Vector3<f64>,
    c: Vector3<f64>,
) -> Vector3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Largest distance from a sample of `a`'s surface (vertices, edge
/// midpoints and face centroids) to the surface of `b`.
fn one_sided_hausdorff(a: &TriMesh, b: &TriMesh) -> f64 {
    let mut samples: Vec<Vector3<f64>> = a.vertices.iter().map(|p| p.coords).collect();
    for f in &a.faces {
        let [p, q, r] = f.map(|v| a.vertices[v].coords);
        samples.push((p + q + r) / 3.0);
        samples.push((p + q) / 2.0);
        samples.push((q + r) / 2.0);
        samples.push((r + p) / 2.0);
    }
    samples
        .iter()
        .map(|s| {
            b.faces
                .iter()
                .map(|f| {
                    let [p, q, r] = f.map(|v| b.vertices[v].coords);
                    (closest_on_triangle(*s, p, q, r) - s).norm()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

pub fn hausdorff(a: &TriMesh, b: &TriMesh) -> f64 {
    one_sided_hausdorff(a, b).max(one_sided_hausdorff(b, a))
}

// ---------------------------------------------------------------------------
// Network fixtures

/// Small configuration used for gradient and invariance checks.
pub fn small_config(variant: Variant) -> TrainConfig {
    TrainConfig {
        geo_pairs: 60,
        model: ModelConfig {
            geo_width: 8,
            geo_depth: 2,
            img_width: 4,
            time_steps: 2,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
    .with_variant(variant)
}

/// Parameters with every tensor, including the zero-initialised ones,
/// filled with small random values.
pub fn random_params(config: &ModelConfig, seed: u64) -> ModelParams {
    let mut params = ModelParams::init(config, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for t in params.tensors.values_mut() {
        for v in t.data_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
    params
}

pub fn random_patches(rng: &mut ChaCha8Rng, count: usize) -> PatchSet {
    PatchSet::from_rows(
        count,
        (0..count * PATCH_LEN)
            .map(|_| rng.random_range(0.0..1.0))
            .collect(),
    )
    .unwrap()
}

/// Entries probed per parameter tensor in the network gradient check.
pub const PROBES_PER_TENSOR: usize = 6;

/// Worst per-tensor relative error between the tape gradient of the
/// training loss and central differences on a pair of 30-vertex meshes.
/// Every parameter tensor is probed at [`PROBES_PER_TENSOR`] seeded random
/// entries (all entries when it has fewer). An entry that disagrees with
/// the tape and whose central differences at steps h and h/2 also disagree
/// with each other, by more than a tenth of the tolerance on the tensor's
/// gradient scale, sits within one step of a relu or max kink; it is
/// replaced by the next random entry. A tensor
/// that runs out of entries scores infinity.
pub fn network_gradient_error(variant: Variant, seed: u64) -> f64 {
    let config = small_config(variant);
    let mut r = rng(seed);
    let cache = AssetCache::new(None).unwrap();
    let needs_patches = variant != Variant::Base;
    let mx = thirty_vertex_mesh(&mut r, 12.0);
    let my = thirty_vertex_mesh(&mut r, 14.0);
    let px = needs_patches.then(|| random_patches(&mut r, 30));
    let py = needs_patches.then(|| random_patches(&mut r, 30));
    let x = PairAssets::new(mx, px, &cache).unwrap();
    let y = PairAssets::new(my, py, &cache).unwrap();
    let pairs = sample_pairs(30, config.geo_pairs, seed);
    let params = random_params(&config.model, seed);

    let loss_of = |p: &ModelParams| -> f64 {
        let tape = Tape::new();
        let bound = p.bind(&tape, false);
        pair_loss(&tape, &bound, &x, &y, &config, &pairs)
            .unwrap()
            .0
            .value()
            .item()
    };
    let tape = Tape::new();
    let bound = params.bind(&tape, true);
    let (loss, _) = pair_loss(&tape, &bound, &x, &y, &config, &pairs).unwrap();
    let grads = tape.backward(loss).unwrap().into_named();

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for (name, tensor) in &params.tensors {
        let mut entries: Vec<usize> = (0..tensor.len()).collect();
        entries.shuffle(&mut r);
        let wanted = PROBES_PER_TENSOR.min(tensor.len());
        let scale = grads[name]
            .data()
            .iter()
            .fold(1e-12, |m: f64, g| m.max(g.abs()));
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for &k in &entries {
            if analytic.len() == wanted {
                break;
            }
            let v = tensor.data()[k];
            let mut central = |h: f64| {
                probe.tensors.get_mut(name).unwrap().data_mut()[k] = v + h;
                let up = loss_of(&probe);
                probe.tensors.get_mut(name).unwrap().data_mut()[k] = v - h;
                let down = loss_of(&probe);
                probe.tensors.get_mut(name).unwrap().data_mut()[k] = v;
                (up - down) / (2.0 * h)
            };
            let g = grads[name].data()[k];
            let full = central(FD_STEP);
            if (full - g).abs() > 0.1 * GRAD_TOL * scale
                && (full - central(FD_STEP / 2.0)).abs() > 0.1 * GRAD_TOL * scale
            {
                continue;
            }
            analytic.push(g);
            numeric.push(full);
        }
        if analytic.len() < wanted {
            return f64::INFINITY;
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

// ---------------------------------------------------------------------------
// Acceptance criteria 1 to 7 and 9

pub const GRAD_TOL: f64 = 1e-4;
pub const OP_INSTANCES: u64 = 20;

pub fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst_op = (String::new(), 0.0f64);
    for op in OPS {
        for seed in 0..OP_INSTANCES {
            let e = check_op(op, seed);
            if !(e <= worst_op.1) {
                worst_op = (op.to_string(), e);
            }
        }
    }
    let mut worst_net: f64 = 0.0;
    for variant in [Variant::Base, Variant::ImageFeatures, Variant::ImagingLoss] {
        let e = network_gradient_error(variant, 7);
        if !(e <= worst_net) {
            worst_net = e;
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        worst_op.1 <= GRAD_TOL && worst_net <= GRAD_TOL && elapsed < Duration::from_secs(60),
        format!(
            "{} ops x {OP_INSTANCES} instances, worst {:.2e} ({}); 30-vertex network worst {:.2e}; {:.1}s",
            OPS.len(),
            worst_op.1,
            worst_op.0,
            worst_net,
            elapsed.as_secs_f64()
        ),
    )
}

/// Worst relative disagreement of the three matrix losses with their
/// dense evaluations over random instances with `n, m ≤ 10`.
pub fn loss_oracle_errors(instances: u64) -> [f64; 3] {
    let mut worst = [0.0f64; 3];
    for seed in 0..instances {
        let mut r = rng(seed);
        let n = r.random_range(1..=10);
        let m = r.random_range(1..=10);
        let pi = random_stochastic(&mut r, n, m);
        let x = random_tensor(&mut r, n, 3, -20.0, 20.0);
        let y = random_tensor(&mut r, m, 3, -20.0, 20.0);
        let tape = Tape::new();
        let pv = tape.leaf(pi.clone());
        let reg = registration_loss(tape.leaf(x.clone()), pv, tape.constant(y.clone()))
            .unwrap()
            .value()
            .item();
        worst[0] = worst[0].max(rel_diff(reg, dense_registration(&x, &pi, &y)));

        let sym = |r: &mut ChaCha8Rng, k: usize| {
            let mut d = vec![0.0; k * k];
            for i in 0..k {
                for j in (i + 1)..k {
                    let v = r.random_range(0.5..30.0);
                    d[i * k + j] = v;
                    d[j * k + i] = v;
                }
            }
            d
        };
        let dx = GeodesicTable::from_dense(n, sym(&mut r, n));
        let dy = Tensor::matrix(m, m, sym(&mut r, m)).unwrap();
        let pairs: Vec<(usize, usize)> = (0..15)
            .map(|_| (r.random_range(0..n), r.random_range(0..n)))
            .collect();
        let geo = geodesic_loss(&tape, pv, &dx, &dy, &pairs)
            .unwrap()
            .value()
            .item();
        worst[1] = worst[1].max(rel_diff(geo, dense_geodesic(&pi, &dx, &dy, &pairs)));

        let px = random_patches(&mut r, n);
        let py = random_patches(&mut r, m);
        let img = imaging_loss(&tape, pv, &px, &py).unwrap().value().item();
        worst[2] = worst[2].max(rel_diff(img, dense_imaging(&pi, &px, &py)));
    }
    worst
}

/// ARAP loss of a sequence of rigid motions of a bumpy sphere.
pub fn arap_of_rigid_sequence(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mesh = bumpy_sphere(&mut r, 10.0, 3, 0.1);
    let graph = MeshGraph::from_mesh(&mesh);
    let tape = Tape::new();
    let base = Tensor::matrix(mesh.vertex_count(), 3, mesh.coordinate_rows()).unwrap();
    let mut displacements = Vec::new();
    for _ in 0..4 {
        let axis = Vector3::new(
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(0.1..1.0),
        );
        let rot = Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(axis),
            r.random_range(-1.5..1.5),
        );
        let t = Vector3::new(
            r.random_range(-5.0..5.0),
            r.random_range(-5.0..5.0),
            r.random_range(-5.0..5.0),
        );
        let d: Vec<f64> = mesh
            .vertices
            .iter()
            .flat_map(|p| {
                let q = rot * p.coords + t - p.coords;
                [q.x, q.y, q.z]
            })
            .collect();
        displacements.push(tape.constant(Tensor::matrix(mesh.vertex_count(), 3, d).unwrap()));
    }
    let frames = frames_from_displacements(tape.constant(base), &displacements).unwrap();
    arap_loss(&tape, &frames, &graph).unwrap().value().item()
}

/// ARAP loss of a single uniform scaling by `s` and its closed form
/// `(s − 1)² Σ_i Σ_{j∈N(i)} ‖v_i − v_j‖² / n`.
pub fn arap_of_scaling(seed: u64, s: f64) -> (f64, f64) {
    let mut r = rng(seed);
    let mesh = bumpy_sphere(&mut r, 10.0, 3, 0.1);
    let graph = MeshGraph::from_mesh(&mesh);
    let tape = Tape::new();
    let n = mesh.vertex_count();
    let base = Tensor::matrix(n, 3, mesh.coordinate_rows()).unwrap();
    let d = Tensor::matrix(
        n,
        3,
        mesh.coordinate_rows()
            .iter()
            .map(|v| v * (s - 1.0))
            .collect(),
    )
    .unwrap();
    let frames = frames_from_displacements(tape.constant(base), &[tape.constant(d)]).unwrap();
    let got = arap_loss(&tape, &frames, &graph).unwrap().value().item();
    let ring_sum: f64 = mesh
        .one_ring()
        .iter()
        .enumerate()
        .flat_map(|(i, ring)| ring.iter().map(move |&j| (i, j)))
        .map(|(i, j)| (mesh.vertices[i] - mesh.vertices[j]).norm_squared())
        .sum();
    (got, (s - 1.0).powi(2) * ring_sum / n as f64)
}

pub fn criterion_2() -> Outcome {
    let worst = loss_oracle_errors(20);
    let rigid = (0..5).map(arap_of_rigid_sequence).fold(0.0f64, f64::max);
    let scale = [(0, 2.0), (1, 0.5), (2, 1.3)]
        .iter()
        .map(|&(seed, s)| {
            let (got, want) = arap_of_scaling(seed, s);
            rel_diff(got, want)
        })
        .fold(0.0f64, f64::max);
    Outcome::new(
        worst.iter().all(|e| *e <= 1e-12) && rigid <= 1e-9 && scale <= 1e-9,
        format!(
            "registration {:.1e}, geodesic {:.1e}, imaging {:.1e}; ARAP rigid {:.1e}, scale rel {:.1e}",
            worst[0], worst[1], worst[2], rigid, scale
        ),
    )
}

/// Imaging contribution to the total at weight `lambda` and the gradient of
/// the total with respect to the imaging term.
pub fn imaging_contribution(lambda: f64) -> (f64, f64) {
    let tape = Tape::new();
    let reg = tape.leaf(Tensor::scalar(1.25));
    let arap = tape.leaf(Tensor::scalar(0.037));
    let geo = tape.leaf(Tensor::scalar(4.5));
    let img = tape.leaf(Tensor::scalar(0.0123));
    let weights = LossWeights {
        lambda_imaging: lambda,
        ..LossWeights::default()
    };
    let terms = LossTerms {
        reg,
        arap,
        geo,
        imaging: Some(img),
    };
    let (total, breakdown) = total_loss(&terms, &weights).unwrap();
    let without = total_loss(
        &LossTerms {
            imaging: None,
            ..terms
        },
        &weights,
    )
    .unwrap()
    .1
    .total;
    let grads = tape.backward(total).unwrap();
    (breakdown.total - without, grads.get(img).unwrap().item())
}

pub fn criterion_3() -> Outcome {
    let (c1, g1) = imaging_contribution(1000.0);
    let (c2, g2) = imaging_contribution(2000.0);
    let default = TrainConfig::from_toml("").unwrap().weights.lambda_imaging;
    let explicit = TrainConfig::from_toml("[weights]\nlambda_imaging = 1000.0\n")
        .unwrap()
        .weights
        .lambda_imaging;
    let round_trip = TrainConfig::from_toml(&TrainConfig::default().to_toml())
        .unwrap()
        .weights
        .lambda_imaging;
    let doubled = rel_diff(c2, 2.0 * c1) <= 1e-12 && g2 == 2.0 * g1;
    Outcome::new(
        doubled && default == 1000.0 && explicit == 1000.0 && round_trip == 1000.0,
        format!("contribution {c1} -> {c2}, gradient {g1} -> {g2}; default lambda {default}"),
    )
}

pub fn random_cloud(r: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            [
                r.random_range(-50.0..50.0),
                r.random_range(-50.0..50.0),
                r.random_range(-50.0..50.0),
            ]
        })
        .collect()
}

pub fn cloud_mesh(points: &[[f64; 3]]) -> TriMesh {
    TriMesh::from_parts(
        points.iter().map(|p| Point3::from(*p)).collect(),
        Vec::new(),
    )
}

/// Worst disagreement of chamfer and the nearest-neighbour assignment with
/// brute force, and whether every assignment matched exactly.
pub fn metric_brute_force(instances: u64) -> (f64, bool) {
    let mut worst: f64 = 0.0;
    let mut exact = true;
    for seed in 0..instances {
        let mut r = rng(seed);
        let n = r.random_range(1..=1000);
        let m = r.random_range(1..=1000);
        let a = random_cloud(&mut r, n);
        let b = random_cloud(&mut r, m);
        let mb = cloud_mesh(&b);
        worst = worst.max((chamfer(&a, &mb) - brute_chamfer(&a, &b)).abs());
        let map = nn_baseline(&cloud_mesh(&a), &mb);
        exact &= map
            .iter()
            .zip(&a)
            .all(|(&j, p)| Some(j) == brute_force_nearest(&b, p).map(|(i, _)| i));
    }
    (worst, exact)
}

/// Worst absolute difference between mesh geodesics and Floyd–Warshall.
pub fn geodesic_oracle_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mesh = bumpy_sphere(&mut r, 20.0, 4, 0.2);
    assert!(mesh.vertex_count() <= 200);
    let fast = geodesic_all_pairs(&mesh);
    let slow = floyd_warshall(&mesh);
    fast.as_slice()
        .iter()
        .zip(&slow)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Distortion of a random similarity and of the stretch-by-2 construction
/// (a right isosceles triangle stretched along its hypotenuse direction).
pub fn distortion_cases(seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let mesh = bumpy_sphere(&mut r, 10.0, 3, 0.2);
    let axis = nalgebra::Unit::new_normalize(Vector3::new(0.3, -0.5, 0.8));
    let rot = Rotation3::from_axis_angle(&axis, r.random_range(-3.0..3.0));
    let s = r.random_range(0.2..5.0);
    let t = Vector3::new(3.0, -2.0, 7.0);
    let moved: Vec<Point3<f64>> = mesh
        .vertices
        .iter()
        .map(|p| Point3::from(rot * p.coords * s + t))
        .collect();
    let similarity = distortion_between(&mesh, &moved)
        .unwrap()
        .into_iter()
        .fold(0.0, f64::max);

    let tri = TriMesh::from_parts(
        vec![
            Point3::origin(),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ],
        vec![[0, 1, 2]],
    );
    let stretched: Vec<Point3<f64>> = tri
        .vertices
        .iter()
        .map(|p| Point3::new(2.0 * p.x, p.y, p.z))
        .collect();
    let stretch = distortion_between(&tri, &stretched).unwrap()[0];
    (similarity, stretch)
}

/// Number of instances where the recursive exact p-value or statistic
/// differs from 2ⁿ enumeration, over `instances` random samples with
/// `5 ≤ n ≤ 12` (ties included).
pub fn wilcoxon_mismatches(instances: u64) -> usize {
    let mut bad = 0;
    for seed in 0..instances {
        let mut r = rng(seed);
        let n = r.random_range(5..=12);
        let a: Vec<f64> = (0..n).map(|_| r.random_range(0..8) as f64).collect();
        let b: Vec<f64> = (0..n)
            .map(|k| {
                if k == 0 {
                    a[0] + 1.0
                } else {
                    r.random_range(0..8) as f64
                }
            })
            .collect();
        match (wilcoxon_signed_rank(&a, &b), wilcoxon_enumerated(&a, &b)) {
            (Ok(x), Ok(y)) => {
                if !x.exact || rel_diff(x.p_value, y.p_value) > 1e-12 || x.statistic != y.statistic
                {
                    bad += 1;
                }
            }
            (Err(_), Err(_)) => {}
            _ => bad += 1,
        }
    }
    bad
}

pub fn criterion_4() -> Outcome {
    let (chamfer_err, nn_exact) = metric_brute_force(10);
    let geo = (0..2).map(geodesic_oracle_error).fold(0.0f64, f64::max);
    let (sim, stretch) = (0..5)
        .map(distortion_cases)
        .fold((0.0f64, 0.5f64), |(a, b), (s, t)| {
            (
                a.max(s),
                if (t - 0.5).abs() > (b - 0.5).abs() {
                    t
                } else {
                    b
                },
            )
        });
    let wil = wilcoxon_mismatches(200);
    Outcome::new(
        chamfer_err == 0.0
            && nn_exact
            && geo <= 1e-9
            && sim <= 1e-9
            && (stretch - 0.5).abs() <= 1e-9
            && wil == 0,
        format!(
            "chamfer diff {chamfer_err:.1e}, nn exact {nn_exact}; Floyd-Warshall diff {geo:.1e}; \
             similarity distortion {sim:.1e}, stretch {stretch}; wilcoxon mismatches {wil}"
        ),
    )
}

/// Enclosed volumes of the icosphere, after Taubin and after plain
/// Laplacian smoothing with the same iteration count.
pub fn smoothing_volumes() -> (f64, f64, f64) {
    let sphere = icosphere(10.0, 8);
    let taubin = taubin_smooth(&sphere, 10, 0.5, -0.53);
    let laplacian = taubin_smooth(&sphere, 10, 0.5, 0.0);
    (
        sphere.enclosed_volume(),
        taubin.enclosed_volume(),
        laplacian.enclosed_volume(),
    )
}

/// Irregular closed mesh: an icosphere with tangential vertex jitter.
pub fn irregular_mesh(seed: u64) -> TriMesh {
    let mut r = rng(seed);
    let sphere = icosphere(10.0, 4);
    let v = sphere
        .vertices
        .iter()
        .map(|p| {
            let jitter = Vector3::new(
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
            );
            Point3::from((p.coords + jitter * 1.2).normalize() * 10.0)
        })
        .collect();
    sphere.with_vertices(v)
}

pub fn criterion_5() -> Outcome {
    let start = Instant::now();
    let (v0, vt, vl) = smoothing_volumes();
    let taubin_change = (vt - v0).abs() / v0;
    let laplacian_change = (vl - v0).abs() / v0;

    let sphere = icosphere(10.0, 16);
    assert_eq!(sphere.face_count(), 5120);
    let dec = quadric_decimate(&sphere, 3000).mesh;
    let h = hausdorff(&sphere, &dec) / sphere.bounding_box_diagonal();

    let mut reduced = 0;
    let cases = 5;
    for seed in 0..cases {
        let m = irregular_mesh(seed);
        if remesh_optimize(&m, 3).edge_length_ratio() < m.edge_length_ratio() {
            reduced += 1;
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        taubin_change <= 0.02
            && laplacian_change > taubin_change
            && dec.face_count() <= 3000
            && h < 0.02
            && reduced == cases
            && elapsed < Duration::from_secs(120),
        format!(
            "volume change taubin {:.3}% laplacian {:.3}%; decimated to {} faces, Hausdorff {:.3}% of diagonal; \
             remesh reduced edge ratio {reduced}/{cases}; {:.1}s",
            100.0 * taubin_change,
            100.0 * laplacian_change,
            dec.face_count(),
            100.0 * h,
            elapsed.as_secs_f64()
        ),
    )
}

pub fn criterion_6() -> Outcome {
    let got = [
        window_soft_tissue(-135.0),
        window_soft_tissue(40.0),
        window_soft_tissue(215.0),
    ];
    Outcome::new(
        got == [0.0, 0.5, 1.0],
        format!("HU -135 -> {}, 40 -> {}, 215 -> {}", got[0], got[1], got[2]),
    )
}

pub fn seven_organs() -> Vec<String> {
    [
        "brainstem",
        "spinal_cord",
        "mandible",
        "parotid_l",
        "parotid_r",
        "submandibular_l",
        "submandibular_r",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Pair counts of fold 0 of 34 patients with seven organs.
pub fn scheduled_counts() -> ([usize; 3], [usize; 3]) {
    let ids: Vec<String> = (0..34).map(|k| format!("p{k:02}")).collect();
    let spec = make_folds(&ids, 11).unwrap();
    let f = &spec.folds[0];
    let organs = seven_organs();
    (
        [f.train.len(), f.val.len(), f.test.len()],
        [
            pair_scheduler(&f.train, &organs, Phase::Train { epoch: 0 }, 11).len(),
            pair_scheduler(&f.val, &organs, Phase::Validation, 11).len(),
            pair_scheduler(&f.test, &organs, Phase::Eval, 11).len(),
        ],
    )
}

pub fn criterion_7() -> Outcome {
    let (sizes, counts) = scheduled_counts();
    Outcome::new(
        sizes == [24, 3, 7] && counts == [4032, 63, 294],
        format!("patients {sizes:?}, pairs {counts:?}"),
    )
}

/// Row-stochasticity error, hard-map agreement under vertex permutation
/// and the largest untrained displacement, for one random pair of small
/// meshes.
pub fn invariance_case(seed: u64) -> (f64, bool, f64) {
    let mut r = rng(seed);
    let config = small_config(Variant::Base).model;
    let x = bumpy_sphere(&mut r, 10.0, 2, 0.15);
    let y = bumpy_sphere(&mut r, 12.0, 2, 0.15);
    assert!(x.vertex_count() <= 50);
    let trained_like = random_params(&config, seed);
    let (pi, _) = forward_pair(&x, &y, None, None, &trained_like, &config).unwrap();
    let hard = hard_correspondence(&pi);

    let px = random_permutation(&mut r, x.vertex_count());
    let py = random_permutation(&mut r, y.vertex_count());
    let (pi2, _) = forward_pair(
        &permuted(&x, &px),
        &permuted(&y, &py),
        None,
        None,
        &trained_like,
        &config,
    )
    .unwrap();
    let hard2 = hard_correspondence(&pi2);
    let equivariant = (0..x.vertex_count()).all(|i| hard2[px[i]] == py[hard[i]]);

    let init = ModelParams::init(&config, seed).unwrap();
    let (pi3, seq) = forward_pair(&x, &y, None, None, &init, &config).unwrap();
    let largest = seq
        .displacements
        .iter()
        .flatten()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let stochastic = pi
        .stochasticity_error()
        .max(pi2.stochasticity_error())
        .max(pi3.stochasticity_error());
    (stochastic, equivariant, largest)
}

pub fn criterion_9() -> Outcome {
    let cases = 10;
    let mut stochastic: f64 = 0.0;
    let mut equivariant = 0;
    let mut zero = 0;
    for seed in 0..cases {
        let (s, e, d) = invariance_case(seed);
        stochastic = stochastic.max(s);
        equivariant += e as usize;
        zero += (d == 0.0) as usize;
    }
    Outcome::new(
        stochastic <= 1e-6 && equivariant == cases as usize && zero == cases as usize,
        format!(
            "row-sum error {stochastic:.1e}; equivariant {equivariant}/{cases}; zero untrained field {zero}/{cases}"
        ),
    )
}
