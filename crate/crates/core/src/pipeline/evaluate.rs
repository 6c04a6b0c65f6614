//! Inference on single pairs, metric evaluation over held-out pairs, and
//! signed-rank comparison of two metric reports.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::cache::AssetCache;
use super::folds::{pair_scheduler, Fold, Phase};
use super::manifest::DatasetManifest;
use super::train::PairAssets;
use super::{PipelineError, TrainConfig, Variant};
use crate::autodiff::{load_checkpoint, Tape};
use crate::corrnet::io::write_outputs;
use crate::corrnet::{
    forward_pair, forward_pair_on_tape, hard_correspondence, CorrespondenceMatrix, CorrnetError,
    InterpolationSequence, ModelParams,
};
use crate::geodesics::sample_pairs;
use crate::meshkit::io::load_mesh;
use crate::meshkit::TriMesh;
use crate::metrics::{
    chamfer, conformal_distortion, cumulative_curve, geodesic_error, ground_truth_error,
    landmark_error, nn_baseline, significance_marker, wilcoxon_signed_rank, write_curve_csv,
    write_metrics_csv, AreaNormalization, MetricReport, MetricRow, MetricsError, WilcoxonResult,
};
use crate::volumes::{extract_patchset, Volume};

/// Metrics plotted as cumulative curves.
pub const CURVE_METRICS: [&str; 3] = ["geodesic_error", "chamfer", "conformal_distortion"];
pub const CURVE_POINTS: usize = 100;
/// Source vertex pairs sampled per evaluated pair for the geodesic error.
const EVAL_GEO_PAIRS: usize = 1000;

/// Reads a checkpoint and its configuration: `config` if given, else
/// `config.toml` next to the checkpoint.
pub fn load_model(
    params_path: &Path,
    config: Option<&Path>,
) -> Result<(ModelParams, TrainConfig), PipelineError> {
    let config_path = match config {
        Some(p) => p.to_path_buf(),
        None => params_path.with_file_name("config.toml"),
    };
    if !config_path.exists() {
        return Err(PipelineError::MissingFile(
            config_path.display().to_string(),
        ));
    }
    let config = TrainConfig::load(&config_path)?;
    let params = ModelParams {
        tensors: load_checkpoint(params_path)?.params,
    };
    params.check(&config.model)?;
    Ok((params, config))
}

/// Runs one pair and writes the outputs to `out_dir`. Volumes are read
/// only by the image-feature variant.
pub fn infer(
    params: &ModelParams,
    config: &TrainConfig,
    mesh_x: &TriMesh,
    mesh_y: &TriMesh,
    volumes: Option<(&Path, &Path)>,
    out_dir: &Path,
) -> Result<(CorrespondenceMatrix, InterpolationSequence), PipelineError> {
    infer_with_loader(params, config, mesh_x, mesh_y, volumes, out_dir, |p| {
        Volume::load(p)
    })
}

/// [`infer`] with a caller-supplied volume reader.
pub fn infer_with_loader(
    params: &ModelParams,
    config: &TrainConfig,
    mesh_x: &TriMesh,
    mesh_y: &TriMesh,
    volumes: Option<(&Path, &Path)>,
    out_dir: &Path,
    mut load_volume: impl FnMut(&Path) -> Result<Volume, crate::volumes::VolumeError>,
) -> Result<(CorrespondenceMatrix, InterpolationSequence), PipelineError> {
    params.check(&config.model)?;
    let patches = if config.variant.needs_patches_for_inference() {
        let (vx, vy) = volumes.ok_or(CorrnetError::MissingPatches)?;
        let px = extract_patchset(&load_volume(vx)?, mesh_x);
        let py = extract_patchset(&load_volume(vy)?, mesh_y);
        Some((px, py))
    } else {
        None
    };
    let (pi, seq) = forward_pair(
        mesh_x,
        mesh_y,
        patches.as_ref().map(|p| &p.0),
        patches.as_ref().map(|p| &p.1),
        params,
        &config.model,
    )?;
    write_outputs(out_dir, mesh_x, &pi, &hard_correspondence(&pi), &seq)?;
    Ok((pi, seq))
}

/// Where evaluated correspondences come from.
pub enum EvalSource {
    Model {
        params: ModelParams,
        config: TrainConfig,
    },
    /// Directory of registered source meshes named `<a>__<b>__<organ>.ply`.
    NnDeformed { dir: PathBuf },
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub reports: Vec<MetricReport>,
    pub curves: Vec<(String, Vec<(f64, f64)>)>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

impl Evaluation {
    /// Median over all vertices of all pairs.
    pub fn median_ground_truth_error(&self) -> Option<f64> {
        median(
            self.reports
                .iter()
                .flat_map(|r| r.ground_truth_errors.iter().copied())
                .collect(),
        )
    }

    /// Median over all triangles of all pairs.
    pub fn median_distortion(&self) -> Option<f64> {
        median(
            self.reports
                .iter()
                .flat_map(|r| r.distortions.iter().copied())
                .collect(),
        )
    }

    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(fs::File::create(dir.join("metrics.csv"))?);
        write_metrics_csv(&self.reports, &mut w)?;
        w.flush()?;
        let mut w = BufWriter::new(fs::File::create(dir.join("curves.csv"))?);
        write_curve_csv(&self.curves, &mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// All metrics over the ordered test pairs of `fold` (self-pairs
/// excluded). Results are written to `out_dir` when given.
pub fn evaluate(
    manifest: &DatasetManifest,
    fold: &Fold,
    source: &EvalSource,
    cache: &AssetCache,
    out_dir: Option<&Path>,
) -> Result<Evaluation, PipelineError> {
    let with_patches = matches!(source, EvalSource::Model { config, .. } if config.variant == Variant::ImageFeatures);
    let pairs = pair_scheduler(&fold.test, &manifest.organs, Phase::Eval, 0);
    let mut assets: BTreeMap<(String, String), PairAssets> = BTreeMap::new();
    for p in &fold.test {
        for o in &manifest.organs {
            assets.insert(
                (p.clone(), o.clone()),
                PairAssets::load(manifest, cache, p, o, with_patches)?,
            );
        }
    }
    let mut reports = Vec::with_capacity(pairs.len());
    for (k, pair) in pairs.iter().enumerate() {
        let x = &assets[&(pair.a.clone(), pair.organ.clone())];
        let y = &assets[&(pair.b.clone(), pair.organ.clone())];
        let (hard, points, distortions) = match source {
            EvalSource::Model { params, config } => {
                let tape = Tape::new();
                let bound = params.bind(&tape, false);
                let out = forward_pair_on_tape(
                    &tape,
                    x.input(with_patches),
                    y.input(with_patches),
                    &bound,
                    &config.model,
                )?;
                let pi = out.correspondence()?;
                let seq = out.sequence(config.model.time_values());
                let final_frame = seq.final_frame(&x.mesh);
                let points: Vec<[f64; 3]> = final_frame
                    .vertices
                    .iter()
                    .map(|v| [v.x, v.y, v.z])
                    .collect();
                (
                    hard_correspondence(&pi),
                    points,
                    conformal_distortion(&x.mesh, &seq)?,
                )
            }
            EvalSource::NnDeformed { dir } => {
                let path = dir.join(format!("{}.ply", pair.id()));
                if !path.exists() {
                    return Err(PipelineError::MissingFile(path.display().to_string()));
                }
                let deformed = load_mesh(&path)?;
                if deformed.vertex_count() != x.mesh.vertex_count() {
                    return Err(PipelineError::Validation(format!(
                        "{} has {} vertices, source has {}",
                        path.display(),
                        deformed.vertex_count(),
                        x.mesh.vertex_count()
                    )));
                }
                let points = deformed.vertices.iter().map(|v| [v.x, v.y, v.z]).collect();
                (nn_baseline(&deformed, &y.mesh), points, Vec::new())
            }
        };
        let geo_pairs = sample_pairs(x.mesh.vertex_count(), EVAL_GEO_PAIRS, k as u64);
        let geodesic_errors = geodesic_error(
            &hard,
            &x.mesh,
            &y.mesh,
            &x.geodesics,
            &y.geodesics,
            &geo_pairs,
            AreaNormalization::Target,
        );
        let lm_a = manifest.landmarks(&pair.a)?;
        let lm_b = manifest.landmarks(&pair.b)?;
        let mut landmark_errors = Vec::new();
        if let (Some(la), Some(lb)) = (lm_a.get(&pair.organ), lm_b.get(&pair.organ)) {
            for (name, pa) in &la.points {
                if let Some(pb) = lb.get(name) {
                    // The map runs from A to B, so A's landmark is projected
                    // and carried over, then compared on B.
                    landmark_errors.push((
                        name.clone(),
                        landmark_error(*pa, pb, &x.mesh, &y.mesh, &hard),
                    ));
                }
            }
        }
        let ground_truth_errors = match (
            manifest.ground_truth(&pair.a, &pair.organ)?,
            manifest.ground_truth(&pair.b, &pair.organ)?,
        ) {
            (Some(ga), Some(gb)) => ground_truth_error(&hard, &ga.map_to(&gb), &y.geodesics),
            _ => Vec::new(),
        };
        reports.push(MetricReport {
            pair_id: pair.id(),
            organ: pair.organ.clone(),
            geodesic_errors,
            chamfer: chamfer(&points, &y.mesh),
            distortions,
            landmark_errors,
            ground_truth_errors,
        });
    }
    let mut curves = Vec::new();
    for metric in CURVE_METRICS {
        let values: Vec<f64> = reports
            .iter()
            .flat_map(|r| match metric {
                "geodesic_error" => r.geodesic_errors.clone(),
                "chamfer" => vec![r.chamfer],
                _ => r.distortions.clone(),
            })
            .collect();
        match cumulative_curve(&values, CURVE_POINTS) {
            Ok(c) => curves.push((metric.to_owned(), c)),
            Err(MetricsError::EmptyInput) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let eval = Evaluation { reports, curves };
    if let Some(d) = out_dir {
        eval.write(d)?;
    }
    Ok(eval)
}

/// Signed-rank comparison of one metric between two reports.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub metric: String,
    /// Number of pairs present in both reports.
    pub pairs: usize,
    /// `None` when fewer than five pairs differ.
    pub result: Option<WilcoxonResult>,
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.result {
            Some(r) => write!(
                f,
                "{}: pairs={} n={} W={} p={:.6} {}",
                self.metric,
                self.pairs,
                r.n,
                r.statistic,
                r.p_value,
                significance_marker(r.p_value)
            ),
            None => write!(f, "{}: pairs={} no difference", self.metric, self.pairs),
        }
    }
}

/// Pairs per-pair landmark medians of two metrics CSVs and tests each
/// landmark, and all landmarks pooled, with the signed-rank test.
pub fn compare_reports(a: &[MetricRow], b: &[MetricRow]) -> Result<Vec<Comparison>, PipelineError> {
    let index = |rows: &[MetricRow]| -> BTreeMap<(String, String, String), f64> {
        rows.iter()
            .filter(|r| r.metric.starts_with("landmark_") && r.statistic == "median")
            .map(|r| {
                (
                    (r.metric.clone(), r.pair_id.clone(), r.organ.clone()),
                    r.value,
                )
            })
            .collect()
    };
    let (ia, ib) = (index(a), index(b));
    let mut by_metric: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (key, va) in &ia {
        if let Some(vb) = ib.get(key) {
            for m in [key.0.clone(), "landmark_all".to_owned()] {
                let e = by_metric.entry(m).or_default();
                e.0.push(*va);
                e.1.push(*vb);
            }
        }
    }
    let mut out = Vec::new();
    for (metric, (xa, xb)) in by_metric {
        let result = match wilcoxon_signed_rank(&xa, &xb) {
            Ok(r) => Some(r),
            Err(MetricsError::TooFewSamples(_)) => None,
            Err(e) => return Err(e.into()),
        };
        out.push(Comparison {
            metric,
            pairs: xa.len(),
            result,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrnet::ModelConfig;
    use crate::meshkit::primitives::icosphere;
    use std::cell::Cell;

    fn tiny(variant: Variant) -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                geo_width: 4,
                geo_depth: 1,
                img_width: 4,
                time_steps: 2,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        }
        .with_variant(variant)
    }

    #[test]
    fn inference_reads_volumes_only_for_image_features() {
        let dir = tempfile::tempdir().unwrap();
        let x = icosphere(8.0, 1);
        let y = icosphere(9.0, 1);
        let reads = Cell::new(0);
        let loader = |_: &Path| {
            reads.set(reads.get() + 1);
            Volume::filled([10, 30, 30], [2.5, 1.0, 1.0], [-12.0, -15.0, -15.0], 40)
        };
        let fake = Path::new("/nonexistent/ct.vhdr");
        for variant in [Variant::Base, Variant::ImagingLoss] {
            let c = tiny(variant);
            let p = ModelParams::init(&c.model, 0).unwrap();
            let (pi, seq) =
                infer_with_loader(&p, &c, &x, &y, Some((fake, fake)), dir.path(), loader).unwrap();
            assert!(pi.stochasticity_error() < 1e-6);
            assert_eq!(seq.len(), 2);
            infer(&p, &c, &x, &y, None, dir.path()).unwrap();
        }
        assert_eq!(reads.get(), 0);
        let c = tiny(Variant::ImageFeatures);
        let p = ModelParams::init(&c.model, 0).unwrap();
        assert!(matches!(
            infer(&p, &c, &x, &y, None, dir.path()),
            Err(PipelineError::Corrnet(CorrnetError::MissingPatches))
        ));
        infer_with_loader(&p, &c, &x, &y, Some((fake, fake)), dir.path(), loader).unwrap();
        assert_eq!(reads.get(), 2);
        assert!(dir.path().join("frame_2.ply").exists());
    }

    #[test]
    fn identical_reports_compare_as_no_difference() {
        let rows: Vec<MetricRow> = (0..8)
            .map(|k| MetricRow {
                pair_id: format!("p{k}"),
                organ: "gland".into(),
                metric: "landmark_pineal_gland".into(),
                statistic: "median".into(),
                value: k as f64,
            })
            .collect();
        let c = compare_reports(&rows, &rows).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|x| x.result.is_none()));
        assert!(c[0].to_string().contains("no difference"));
        let shifted: Vec<MetricRow> = rows
            .iter()
            .map(|r| MetricRow {
                value: r.value + 1.0 + 0.1 * r.value,
                ..r.clone()
            })
            .collect();
        let c = compare_reports(&rows, &shifted).unwrap();
        assert_eq!(c[0].result.as_ref().unwrap().p_value, 2.0 / 256.0);
    }
}
