//! Command-line front end: dataset generation and preprocessing, training,
//! inference, evaluation and report comparison.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use organcorr::meshkit::io::load_mesh;
use organcorr::metrics::read_metrics_csv;
use organcorr::pipeline::{
    compare_reports, evaluate, infer, load_model, make_folds, preprocess, synth_generate, train,
    AssetCache, DatasetManifest, EvalSource, FoldSpec, PipelineError, PreprocessOptions,
    TrainConfig, Variant,
};

#[derive(Parser)]
#[command(
    name = "organcorr",
    version,
    about = "Point correspondences between organ surface meshes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Test {
    Wilcoxon,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known correspondences.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        shapes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn organ masks into aligned surface meshes and a manifest.
    Preprocess {
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        volumes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3000)]
        faces: usize,
        #[arg(long, default_value_t = 2000)]
        faces_small: usize,
        #[arg(long, default_value_t = 10)]
        taubin_iters: usize,
    },
    /// Train one model per fold. The folds file is created when missing.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        folds: PathBuf,
        /// TOML configuration; the flags below override its keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Train only this fold.
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correspondence and interpolation for one mesh pair.
    Infer {
        #[arg(long)]
        params: PathBuf,
        /// Configuration; defaults to config.toml next to the parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Source and target CT volumes, needed by the imgfeat variant.
        #[arg(long, num_args = 2, value_names = ["SOURCE", "TARGET"])]
        volumes: Option<Vec<PathBuf>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model or registered baseline meshes on a test fold.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Folds file; defaults to folds.json next to the manifest.
        #[arg(long)]
        folds: Option<PathBuf>,
        #[arg(long)]
        fold: usize,
        #[arg(
            long,
            conflicts_with = "nn_deformed",
            required_unless_present = "nn_deformed"
        )]
        params: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        nn_deformed: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Signed-rank comparison of the landmark errors in two metrics files.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, value_enum, default_value = "wilcoxon")]
        test: Test,
    },
}

fn metrics_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("metrics.csv")
    } else {
        path.to_path_buf()
    }
}

fn run(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Synth { seed, shapes, out } => {
            let m = synth_generate(seed, shapes, &out)?;
            println!("wrote {} patients to {}", m.patients.len(), out.display());
        }
        Command::Preprocess {
            masks,
            volumes,
            out,
            faces,
            faces_small,
            taubin_iters,
        } => {
            let opts = PreprocessOptions {
                faces,
                faces_small,
                taubin_iters,
                ..PreprocessOptions::default()
            };
            let m = preprocess(&masks, &volumes, &out, &opts)?;
            println!(
                "meshed {} patients x {} organs",
                m.patients.len(),
                m.organs.len()
            );
        }
        Command::Train {
            manifest,
            folds,
            config,
            variant,
            epochs,
            lr,
            seed,
            fold,
            out,
        } => {
            let mut cfg = match &config {
                Some(p) => TrainConfig::load(p)?,
                None => TrainConfig::default(),
            };
            if let Some(v) = variant {
                cfg = cfg.with_variant(Variant::parse(&v)?);
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(l) = lr {
                cfg.lr = l;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let manifest = DatasetManifest::load(&manifest)?;
            let spec = if folds.exists() {
                FoldSpec::load(&folds)?
            } else {
                let spec = make_folds(&manifest.patients, cfg.seed)?;
                spec.save(&folds)?;
                println!("created {} folds in {}", spec.folds.len(), folds.display());
                spec
            };
            if !spec.repeated_test_patients.is_empty() {
                println!(
                    "patients in two test folds: {}",
                    spec.repeated_test_patients.join(", ")
                );
            }
            let result = train(&manifest, &spec, &cfg, &out, fold)?;
            for r in &result.folds {
                println!(
                    "best epoch {} (validation loss {:.6}) in {}",
                    r.best_epoch,
                    r.val_losses[r.best_epoch],
                    r.dir
                        .as_ref()
                        .map(|d| d.display().to_string())
                        .unwrap_or_default()
                );
            }
        }
        Command::Infer {
            params,
            config,
            source,
            target,
            volumes,
            out,
        } => {
            let (params, cfg) = load_model(&params, config.as_deref())?;
            let x = load_mesh(&source)?;
            let y = load_mesh(&target)?;
            let vols = volumes.as_ref().map(|v| (v[0].as_path(), v[1].as_path()));
            let (_, seq) = infer(&params, &cfg, &x, &y, vols, &out)?;
            println!(
                "wrote correspondence and {} frames to {}",
                seq.len(),
                out.display()
            );
        }
        Command::Eval {
            manifest,
            folds,
            fold,
            params,
            config,
            nn_deformed,
            out,
        } => {
            let manifest_path = manifest;
            let manifest = DatasetManifest::load(&manifest_path)?;
            let folds_path = folds.unwrap_or_else(|| manifest_path.with_file_name("folds.json"));
            if !folds_path.exists() {
                return Err(PipelineError::MissingFile(folds_path.display().to_string()));
            }
            let spec = FoldSpec::load(&folds_path)?;
            let source = match (params, nn_deformed) {
                (Some(p), _) => {
                    let (params, config) = load_model(&p, config.as_deref())?;
                    EvalSource::Model { params, config }
                }
                (None, Some(dir)) => EvalSource::NnDeformed { dir },
                (None, None) => {
                    return Err(PipelineError::Validation(
                        "give --params or --nn-deformed".into(),
                    ))
                }
            };
            let cache = AssetCache::new(Some(out.join("cache")))?;
            let ev = evaluate(&manifest, spec.fold(fold)?, &source, &cache, Some(&out))?;
            println!(
                "evaluated {} pairs into {}",
                ev.reports.len(),
                out.display()
            );
            if let Some(m) = ev.median_ground_truth_error() {
                println!("median ground-truth error {m:.4} mm");
            }
        }
        Command::Compare {
            a,
            b,
            test: Test::Wilcoxon,
        } => {
            let read = |p: &Path| -> Result<_, PipelineError> {
                let f = metrics_file(p);
                if !f.exists() {
                    return Err(PipelineError::MissingFile(f.display().to_string()));
                }
                Ok(read_metrics_csv(fs::File::open(f)?)?)
            };
            for c in compare_reports(&read(&a)?, &read(&b)?)? {
                println!("{c}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
