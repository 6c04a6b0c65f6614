//! Per-pair training with Adam, loss logging and best-validation
//! checkpoints.
//!
//! One optimiser step is taken per ordered pair. Everything that draws
//! random numbers is seeded from the configuration seed, the epoch and the
//! step index, so a run is reproducible bit for bit on one thread.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::rc::Rc;

use super::cache::AssetCache;
use super::folds::{pair_scheduler, Fold, FoldSpec, Pair, Phase};
use super::manifest::DatasetManifest;
use super::{PipelineError, TrainConfig, Variant};
use crate::autodiff::{adam_step, save_checkpoint, AdamState, Tape, Tensor, Var};
use crate::corrnet::{
    forward_pair_on_tape, BoundParams, CorrnetError, MeshGraph, ModelParams, PairInput,
};
use crate::geodesics::{sample_pairs, GeodesicTable};
use crate::losses::{
    arap_loss, frames_from_displacements, geodesic_loss, geodesic_tensor, imaging_loss,
    registration_loss, total_loss, LossBreakdown, LossTerms,
};
use crate::meshkit::io::load_mesh;
use crate::meshkit::TriMesh;
use crate::volumes::PatchSet;

/// Everything the loss needs about one mesh.
pub struct PairAssets {
    pub mesh: TriMesh,
    pub graph: MeshGraph,
    pub geodesics: GeodesicTable,
    /// Dense distances with unreachable entries capped.
    pub geodesic_tensor: Tensor,
    pub patches: Option<PatchSet>,
}

impl PairAssets {
    pub fn new(
        mesh: TriMesh,
        patches: Option<PatchSet>,
        cache: &AssetCache,
    ) -> Result<Self, PipelineError> {
        let geodesics = cache.geodesics(&mesh)?;
        Ok(Self {
            graph: MeshGraph::from_mesh(&mesh),
            geodesic_tensor: geodesic_tensor(&geodesics),
            geodesics,
            mesh,
            patches,
        })
    }

    pub fn load(
        manifest: &DatasetManifest,
        cache: &AssetCache,
        patient: &str,
        organ: &str,
        with_patches: bool,
    ) -> Result<Self, PipelineError> {
        let mesh = load_mesh(&manifest.mesh_path(patient, organ)?)?;
        let patches = if with_patches {
            let vol = manifest.volume_path(patient).ok_or_else(|| {
                PipelineError::Validation(format!("no volume for patient {patient}"))
            })?;
            Some(cache.patches(&vol, &mesh, manifest.alignment(patient))?)
        } else {
            None
        };
        Self::new(mesh, patches, cache)
    }

    pub(crate) fn input(&self, with_patches: bool) -> PairInput<'_> {
        PairInput {
            mesh: &self.mesh,
            graph: &self.graph,
            patches: if with_patches {
                self.patches.as_ref()
            } else {
                None
            },
        }
    }
}

/// Forward pass and weighted loss for one ordered pair.
pub fn pair_loss<'t>(
    tape: &'t Tape,
    params: &BoundParams<'t>,
    x: &PairAssets,
    y: &PairAssets,
    config: &TrainConfig,
    geo_pairs: &[(usize, usize)],
) -> Result<(Var<'t>, LossBreakdown), PipelineError> {
    let feats = config.variant == Variant::ImageFeatures;
    let out = forward_pair_on_tape(tape, x.input(feats), y.input(feats), params, &config.model)?;
    let frames = frames_from_displacements(out.vx, &out.displacements)?;
    let last = *frames.last().expect("frames include the source");
    let reg = registration_loss(last, out.pi, out.vy)?;
    let arap = arap_loss(tape, &frames, &x.graph)?;
    let geo = geodesic_loss(tape, out.pi, &x.geodesics, &y.geodesic_tensor, geo_pairs)?;
    let imaging = if config.variant == Variant::ImagingLoss {
        match (&x.patches, &y.patches) {
            (Some(px), Some(py)) => Some(imaging_loss(tape, out.pi, px, py)?),
            _ => return Err(CorrnetError::MissingPatches.into()),
        }
    } else {
        None
    };
    Ok(total_loss(
        &LossTerms {
            reg,
            arap,
            geo,
            imaging,
        },
        &config.weights,
    )?)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub pair_id: String,
    pub loss: LossBreakdown,
}

const LOG_HEADER: &str = "epoch,pair_id,reg,arap,geo,imaging,total";

/// Values are written in shortest round-trip form, so equal logs mean
/// bit-identical losses.
pub fn write_log(rows: &[LogRow], w: &mut impl Write) -> Result<(), PipelineError> {
    writeln!(w, "{LOG_HEADER}")?;
    for r in rows {
        let l = &r.loss;
        writeln!(
            w,
            "{},{},{:?},{:?},{:?},{:?},{:?}",
            r.epoch, r.pair_id, l.reg, l.arap, l.geo, l.imaging, l.total
        )?;
    }
    Ok(())
}

pub fn read_log(r: impl std::io::Read) -> Result<Vec<LogRow>, PipelineError> {
    let mut lines = BufReader::new(r).lines();
    if lines.next().transpose()?.as_deref().map(str::trim) != Some(LOG_HEADER) {
        return Err(PipelineError::Validation("missing log header".into()));
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || PipelineError::Validation(format!("bad log row {line:?}"));
        if f.len() != 7 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        rows.push(LogRow {
            epoch: f[0].parse().map_err(|_| bad())?,
            pair_id: f[1].to_owned(),
            loss: LossBreakdown {
                reg: num(f[2])?,
                arap: num(f[3])?,
                geo: num(f[4])?,
                imaging: num(f[5])?,
                total: num(f[6])?,
            },
        });
    }
    Ok(rows)
}

/// Outcome of training one fold.
#[derive(Debug, Clone)]
pub struct FoldResult {
    /// Parameters with the lowest validation loss.
    pub best: ModelParams,
    pub best_epoch: usize,
    /// Parameters after the last epoch.
    pub last: ModelParams,
    pub log: Vec<LogRow>,
    /// Mean training total per epoch.
    pub epoch_means: Vec<f64>,
    /// Mean validation total per epoch.
    pub val_losses: Vec<f64>,
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub folds: Vec<FoldResult>,
}

/// SplitMix64 finaliser, used to derive per-step seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn step_seed(seed: u64, epoch: u64, step: u64) -> u64 {
    mix(mix(mix(seed) ^ epoch) ^ step)
}

type AssetMap = BTreeMap<(String, String), Rc<PairAssets>>;

fn load_assets(
    manifest: &DatasetManifest,
    cache: &AssetCache,
    patients: &[String],
    with_patches: bool,
    into: &mut AssetMap,
) -> Result<(), PipelineError> {
    for p in patients {
        for o in &manifest.organs {
            let key = (p.clone(), o.clone());
            if !into.contains_key(&key) {
                let a = PairAssets::load(manifest, cache, p, o, with_patches)?;
                into.insert(key, Rc::new(a));
            }
        }
    }
    Ok(())
}

fn assets<'a>(map: &'a AssetMap, pair: &Pair) -> (&'a PairAssets, &'a PairAssets) {
    (
        &map[&(pair.a.clone(), pair.organ.clone())],
        &map[&(pair.b.clone(), pair.organ.clone())],
    )
}

fn dump_nan(
    dir: Option<&Path>,
    params: &ModelParams,
    epoch: usize,
    pair: &str,
    loss: &LossBreakdown,
) -> Result<String, PipelineError> {
    let Some(dir) = dir else {
        return Ok("<no output directory>".into());
    };
    let dump = dir.join("nan_dump");
    fs::create_dir_all(&dump)?;
    save_checkpoint(&dump.join("params.ckpt"), &params.tensors, None)?;
    let text = format!(
        "epoch = {epoch}\npair = \"{pair}\"\nreg = \"{:?}\"\narap = \"{:?}\"\ngeo = \"{:?}\"\nimaging = \"{:?}\"\ntotal = \"{:?}\"\n",
        loss.reg, loss.arap, loss.geo, loss.imaging, loss.total
    );
    fs::write(dump.join("loss.toml"), text)?;
    Ok(dump.display().to_string())
}

/// Trains one fold. When `dir` is given the log, the configuration and the
/// checkpoints are written there.
pub fn train_fold(
    manifest: &DatasetManifest,
    fold: &Fold,
    fold_index: usize,
    config: &TrainConfig,
    cache: &AssetCache,
    dir: Option<&Path>,
) -> Result<FoldResult, PipelineError> {
    config.validate()?;
    if fold.train.is_empty() {
        return Err(PipelineError::Validation(
            "fold has no training patients".into(),
        ));
    }
    let with_patches = config.variant.needs_patches_for_training();
    let mut map = AssetMap::new();
    load_assets(manifest, cache, &fold.train, with_patches, &mut map)?;
    load_assets(manifest, cache, &fold.val, with_patches, &mut map)?;
    if let Some(d) = dir {
        fs::create_dir_all(d)?;
        fs::write(d.join("config.toml"), config.to_toml())?;
    }

    let mut params = ModelParams::init(&config.model, config.seed)?;
    let mut adam = AdamState::new(&params.tensors, config.lr);
    let mut best = (params.clone(), 0usize, f64::INFINITY);
    let mut log = Vec::new();
    let mut epoch_means = Vec::with_capacity(config.epochs);
    let mut val_losses = Vec::with_capacity(config.epochs);
    let val_pairs = pair_scheduler(&fold.val, &manifest.organs, Phase::Validation, config.seed);

    for epoch in 0..config.epochs {
        let pairs = pair_scheduler(
            &fold.train,
            &manifest.organs,
            Phase::Train {
                epoch: epoch as u64,
            },
            config.seed,
        );
        let mut sum = 0.0;
        for (step, pair) in pairs.iter().enumerate() {
            let (x, y) = assets(&map, pair);
            let geo = sample_pairs(
                x.mesh.vertex_count(),
                config.geo_pairs,
                step_seed(config.seed, epoch as u64, step as u64),
            );
            let tape = Tape::new();
            let bound = params.bind(&tape, true);
            let (loss, breakdown) = pair_loss(&tape, &bound, x, y, config, &geo)?;
            if !breakdown.total.is_finite() {
                let dump = dump_nan(dir, &params, epoch, &pair.id(), &breakdown)?;
                return Err(PipelineError::NanLoss {
                    fold: fold_index,
                    epoch,
                    pair: pair.id(),
                    dump,
                });
            }
            let grads = tape.backward(loss)?.into_named();
            adam_step(&mut params.tensors, &grads, &mut adam)?;
            sum += breakdown.total;
            log.push(LogRow {
                epoch,
                pair_id: pair.id(),
                loss: breakdown,
            });
        }
        let train_mean = sum / pairs.len() as f64;
        epoch_means.push(train_mean);

        let val = if val_pairs.is_empty() {
            train_mean
        } else {
            let mut total = 0.0;
            for (k, pair) in val_pairs.iter().enumerate() {
                let (x, y) = assets(&map, pair);
                let geo = sample_pairs(
                    x.mesh.vertex_count(),
                    config.geo_pairs,
                    step_seed(config.seed, u64::MAX, k as u64),
                );
                let tape = Tape::new();
                let bound = params.bind(&tape, false);
                total += pair_loss(&tape, &bound, x, y, config, &geo)?.1.total;
            }
            total / val_pairs.len() as f64
        };
        val_losses.push(val);
        if val < best.2 {
            best = (params.clone(), epoch, val);
            if let Some(d) = dir {
                save_checkpoint(&d.join("best.ckpt"), &params.tensors, None)?;
            }
        }
        if let Some(d) = dir {
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                save_checkpoint(&d.join("last.ckpt"), &params.tensors, Some(&adam))?;
            }
        }
    }
    if let Some(d) = dir {
        let mut w = std::io::BufWriter::new(fs::File::create(d.join("log.csv"))?);
        write_log(&log, &mut w)?;
        w.flush()?;
        save_checkpoint(&d.join("last.ckpt"), &params.tensors, Some(&adam))?;
    }
    Ok(FoldResult {
        best: best.0,
        best_epoch: best.1,
        last: params,
        log,
        epoch_means,
        val_losses,
        dir: dir.map(Path::to_path_buf),
    })
}

/// Trains the selected folds (all when `only` is `None`) into
/// `out_dir/fold_<k>`.
pub fn train(
    manifest: &DatasetManifest,
    folds: &FoldSpec,
    config: &TrainConfig,
    out_dir: &Path,
    only: Option<usize>,
) -> Result<TrainOutput, PipelineError> {
    config.validate()?;
    let cache = AssetCache::new(Some(out_dir.join("cache")))?;
    let selected: Vec<usize> = match only {
        Some(k) => {
            folds.fold(k)?;
            vec![k]
        }
        None => (0..folds.folds.len()).collect(),
    };
    let mut out = Vec::new();
    for k in selected {
        let dir = out_dir.join(format!("fold_{k}"));
        out.push(train_fold(
            manifest,
            &folds.folds[k],
            k,
            config,
            &cache,
            Some(&dir),
        )?);
    }
    Ok(TrainOutput { folds: out })
}
