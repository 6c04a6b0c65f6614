//! Unsupervised training losses on tape variables.
//!
//! * registration: mean squared distance between the final frame and the
//!   soft-corresponding target points `Π·V_Y`
//! * ARAP: as-rigid-as-possible energy summed over consecutive frames, with
//!   per-vertex Procrustes rotations held fixed during differentiation
//! * geodesic: squared mismatch between `(Π D_Y Πᵀ)_ij` and `(D_X)_ij` over
//!   sampled pairs
//! * imaging: mean squared difference between `Π·Y_patches` and `X_patches`

use std::rc::Rc;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::corrnet::MeshGraph;
use crate::geodesics::GeodesicTable;
use crate::volumes::{PatchSet, PATCH_LEN};

/// ARAP weight before the tenfold increase.
pub const ARAP_BASE_WEIGHT: f64 = 10.0;
pub const ARAP_WEIGHT_FACTOR: f64 = 10.0;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_reg: f64,
    pub w_arap: f64,
    pub w_geo: f64,
    pub lambda_imaging: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_reg: 1.0,
            w_arap: ARAP_BASE_WEIGHT * ARAP_WEIGHT_FACTOR,
            w_geo: 1.0,
            lambda_imaging: 1000.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let all = [self.w_reg, self.w_arap, self.w_geo, self.lambda_imaging];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(LossError::ShapeMismatch(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub reg: f64,
    pub arap: f64,
    pub geo: f64,
    pub imaging: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Weighted sum in a fixed order; an absent imaging term contributes 0.
    pub fn combine(reg: f64, arap: f64, geo: f64, imaging: Option<f64>, w: &LossWeights) -> Self {
        let imaging_term = imaging.map_or(0.0, |v| w.lambda_imaging * v);
        Self {
            reg,
            arap,
            geo,
            imaging: imaging.unwrap_or(0.0),
            total: w.w_reg * reg + w.w_arap * arap + w.w_geo * geo + imaging_term,
        }
    }
}

fn rows_cols(v: Var<'_>) -> (usize, usize) {
    let t = v.value();
    (t.rows(), t.cols())
}

/// `(1/n) Σ_i ‖X(1)_i − (Π V_Y)_i‖²`.
pub fn registration_loss<'t>(
    final_frame: Var<'t>,
    pi: Var<'t>,
    vy: Var<'t>,
) -> Result<Var<'t>, LossError> {
    let (n, c) = rows_cols(final_frame);
    let (pn, pm) = rows_cols(pi);
    let (m, yc) = rows_cols(vy);
    if c != 3 || yc != 3 || pn != n || pm != m {
        return Err(LossError::ShapeMismatch(format!(
            "frame {n}×{c}, Π {pn}×{pm}, V_Y {m}×{yc}"
        )));
    }
    let target = pi.matmul(vy)?;
    Ok(final_frame
        .sub(target)?
        .squared_norm()
        .scale(1.0 / n as f64))
}

/// Frames `X(t_0) = V_X, X(t_k) = V_X + d(t_k)` as tape variables.
pub fn frames_from_displacements<'t>(
    vx: Var<'t>,
    displacements: &[Var<'t>],
) -> Result<Vec<Var<'t>>, LossError> {
    let mut frames = vec![vx];
    for d in displacements {
        frames.push(vx.add(*d)?);
    }
    Ok(frames)
}

/// Rotation `R` minimising `Σ ‖e'_k − R e_k‖²` for edge vectors `e`, `e'`,
/// reflection-corrected to `det R = +1`.
pub fn procrustes_rotation(before: &[[f64; 3]], after: &[[f64; 3]]) -> Matrix3<f64> {
    let mut s = Matrix3::<f64>::zeros();
    for (e, f) in before.iter().zip(after) {
        for r in 0..3 {
            for c in 0..3 {
                s[(r, c)] += e[r] * f[c];
            }
        }
    }
    let svd = s.svd(true, true);
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested Vᵀ").transpose();
    let mut r = v * u.transpose();
    if r.determinant() < 0.0 {
        let smallest = (0..3)
            .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
            .unwrap();
        let mut v_fixed = v;
        v_fixed.column_mut(smallest).neg_mut();
        r = v_fixed * u.transpose();
    }
    r
}

fn edge_vectors(positions: &Tensor, graph: &MeshGraph) -> Vec<[f64; 3]> {
    graph
        .src
        .iter()
        .zip(graph.dst.iter())
        .map(|(&i, &j)| {
            let (a, b) = (positions.row(i), positions.row(j));
            [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
        })
        .collect()
}

/// ARAP energy between two frames:
/// `(1/n) Σ_i min_R Σ_{j∈N(i)} ‖(v'_i − v'_j) − R (v_i − v_j)‖²`.
pub fn arap_energy<'t>(
    before: Var<'t>,
    after: Var<'t>,
    graph: &MeshGraph,
) -> Result<Var<'t>, LossError> {
    let (b, a) = (before.value(), after.value());
    if b.shape() != [graph.n, 3] || a.shape() != [graph.n, 3] {
        return Err(LossError::ShapeMismatch(format!(
            "frames {:?} and {:?} for {} vertices",
            b.shape(),
            a.shape(),
            graph.n
        )));
    }
    let eb = edge_vectors(&b, graph);
    let ea = edge_vectors(&a, graph);
    let mut rotations = Vec::with_capacity(graph.n);
    for i in 0..graph.n {
        let range = graph.offsets[i]..graph.offsets[i + 1];
        rotations.push(procrustes_rotation(&eb[range.clone()], &ea[range]));
    }
    let per_edge: Rc<[[f64; 9]]> = graph
        .src
        .iter()
        .map(|&i| {
            let r = &rotations[i];
            std::array::from_fn(|k| r[(k / 3, k % 3)])
        })
        .collect();
    let edges = |x: Var<'t>| -> Result<Var<'t>, LossError> {
        Ok(x.gather_rows(graph.src.clone())?
            .sub(x.gather_rows(graph.dst.clone())?)?)
    };
    let rotated = edges(before)?.rotate_rows(per_edge)?;
    let diff = edges(after)?.sub(rotated)?;
    Ok(diff.squared_norm().scale(1.0 / graph.n as f64))
}

/// ARAP energy summed over consecutive frames `X(t_0) … X(t_T)`.
pub fn arap_loss<'t>(
    tape: &'t Tape,
    frames: &[Var<'t>],
    graph: &MeshGraph,
) -> Result<Var<'t>, LossError> {
    let mut total = tape.constant(Tensor::scalar(0.0));
    for w in frames.windows(2) {
        total = total.add(arap_energy(w[0], w[1], graph)?)?;
    }
    Ok(total)
}

/// Distance table as a dense tensor, with unreachable entries replaced by
/// the largest finite distance so they cannot poison products.
pub fn geodesic_tensor(table: &GeodesicTable) -> Tensor {
    let cap = table
        .as_slice()
        .iter()
        .filter(|v| v.is_finite())
        .fold(0.0, |m: f64, &v| m.max(v));
    let data = table
        .as_slice()
        .iter()
        .map(|&v| if v.is_finite() { v } else { cap })
        .collect();
    Tensor::new(vec![table.len(), table.len()], data).expect("non-empty table")
}

/// Mean over pairs `(i, j)` of `(row_i(Π)·D_Y·row_j(Π)ᵀ − D_X(i, j))²`.
/// Pairs whose source distance is infinite are skipped.
pub fn geodesic_loss<'t>(
    tape: &'t Tape,
    pi: Var<'t>,
    dx: &GeodesicTable,
    dy: &Tensor,
    pairs: &[(usize, usize)],
) -> Result<Var<'t>, LossError> {
    let (n, m) = rows_cols(pi);
    if dx.len() != n || dy.shape() != [m, m] {
        return Err(LossError::ShapeMismatch(format!(
            "Π {n}×{m} with tables of {} and {:?}",
            dx.len(),
            dy.shape()
        )));
    }
    let mut is = Vec::new();
    let mut js = Vec::new();
    let mut target = Vec::new();
    for &(i, j) in pairs {
        if i >= n || j >= n {
            return Err(LossError::ShapeMismatch(format!(
                "pair ({i}, {j}) outside {n} vertices"
            )));
        }
        let d = dx.get(i, j);
        if d.is_finite() {
            is.push(i);
            js.push(j);
            target.push(d);
        }
    }
    if is.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let k = is.len();
    let pd = pi.matmul(tape.constant(dy.clone()))?;
    let predicted = pd
        .gather_rows(is.into())?
        .mul(pi.gather_rows(js.into())?)?
        .sum_rows();
    let target = tape.constant(Tensor::matrix(k, 1, target)?);
    Ok(predicted.sub(target)?.squared_norm().scale(1.0 / k as f64))
}

/// Mean over all `n × 2527` entries of `(Π·Y_patches − X_patches)²`.
pub fn imaging_loss<'t>(
    tape: &'t Tape,
    pi: Var<'t>,
    x_patches: &PatchSet,
    y_patches: &PatchSet,
) -> Result<Var<'t>, LossError> {
    let (n, m) = rows_cols(pi);
    if x_patches.count() != n || y_patches.count() != m || n == 0 {
        return Err(LossError::ShapeMismatch(format!(
            "Π {n}×{m} with {} source and {} target patches",
            x_patches.count(),
            y_patches.count()
        )));
    }
    let y = tape.constant(Tensor::matrix(m, PATCH_LEN, y_patches.data().to_vec())?);
    let x = tape.constant(Tensor::matrix(n, PATCH_LEN, x_patches.data().to_vec())?);
    Ok(pi
        .matmul(y)?
        .sub(x)?
        .squared_norm()
        .scale(1.0 / (n * PATCH_LEN) as f64))
}

/// Loss components computed on one forward pass.
pub struct LossTerms<'t> {
    pub reg: Var<'t>,
    pub arap: Var<'t>,
    pub geo: Var<'t>,
    pub imaging: Option<Var<'t>>,
}

/// Weighted total on the tape plus the scalar breakdown.
pub fn total_loss<'t>(
    terms: &LossTerms<'t>,
    weights: &LossWeights,
) -> Result<(Var<'t>, LossBreakdown), LossError> {
    let mut total = terms
        .reg
        .scale(weights.w_reg)
        .add(terms.arap.scale(weights.w_arap))?
        .add(terms.geo.scale(weights.w_geo))?;
    if let Some(img) = terms.imaging {
        total = total.add(img.scale(weights.lambda_imaging))?;
    }
    let mut breakdown = LossBreakdown::combine(
        terms.reg.value().item(),
        terms.arap.value().item(),
        terms.geo.value().item(),
        terms.imaging.map(|v| v.value().item()),
        weights,
    );
    breakdown.total = total.value().item();
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshkit::primitives::icosphere;

    #[test]
    fn default_weights() {
        let w = LossWeights::default();
        assert_eq!(
            (w.w_reg, w.w_arap, w.w_geo, w.lambda_imaging),
            (1.0, 100.0, 1.0, 1000.0)
        );
    }

    #[test]
    fn combine_examples() {
        let w = LossWeights::default();
        assert_eq!(
            LossBreakdown::combine(0.0, 0.0, 0.0, Some(0.0), &w).total,
            0.0
        );
        assert_eq!(LossBreakdown::combine(1.0, 0.0, 0.0, None, &w).total, 1.0);
        assert_eq!(
            LossBreakdown::combine(0.0, 0.0, 0.0, Some(0.01), &w).total,
            10.0
        );
    }

    #[test]
    fn registration_unit_offset() {
        let tape = Tape::new();
        let vy = tape.constant(Tensor::from_fn(&[4, 3], |i| (i as f64).sin()));
        let pi = tape.constant(Tensor::identity(4));
        let shifted = Tensor::from_fn(&[4, 3], |i| {
            (i as f64).sin() + if i % 3 == 0 { 1.0 } else { 0.0 }
        });
        let l = registration_loss(tape.constant(shifted), pi, vy).unwrap();
        assert!((l.value().item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn procrustes_recovers_rotation() {
        let axis = nalgebra::Unit::new_normalize(nalgebra::Vector3::new(1.0, 2.0, -0.5));
        let r = nalgebra::Rotation3::from_axis_angle(&axis, 0.7).into_inner();
        let before: Vec<[f64; 3]> = vec![
            [1.0, 0.0, 0.2],
            [0.0, 1.0, -0.3],
            [0.4, 0.1, 1.0],
            [-1.0, 0.5, 0.0],
        ];
        let after: Vec<[f64; 3]> = before
            .iter()
            .map(|e| {
                let v = r * nalgebra::Vector3::from(*e);
                [v.x, v.y, v.z]
            })
            .collect();
        let got = procrustes_rotation(&before, &after);
        assert!((got - r).abs().max() < 1e-12);
    }

    #[test]
    fn arap_zero_for_translation() {
        let m = icosphere(5.0, 2);
        let g = MeshGraph::from_mesh(&m);
        let tape = Tape::new();
        let v = tape.constant(Tensor::matrix(m.vertex_count(), 3, m.coordinate_rows()).unwrap());
        let shifted = v
            .add(tape.constant(Tensor::from_fn(&[m.vertex_count(), 3], |i| {
                [1.0, -2.0, 0.5][i % 3]
            })))
            .unwrap();
        let e = arap_loss(&tape, &[v, shifted], &g).unwrap().value().item();
        assert!(e.abs() < 1e-9, "{e}");
    }
}
