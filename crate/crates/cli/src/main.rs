use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use loctraj::pipeline::stages::{cmd_eval, cmd_extract, cmd_train, inspect_file, with_jobs, WorkDir};
use loctraj::pipeline::{cmd_synth, DatasetManifest, Mode, PipelineConfig, Preset};

#[derive(Parser, Debug)]
#[command(name = "loctraj", version, about = "Skeleton-localized trajectory action recognition")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// JSON config; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Recompute outputs that already exist.
    #[arg(long, global = true)]
    force: bool,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// One codebook per descriptor kind instead of per joint (baseline).
    #[arg(long, global = true)]
    global_bow: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModeArg {
    #[value(name = "2d")]
    TwoD,
    #[value(name = "3d")]
    ThreeD,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes a synthetic RGB-D dataset with ground-truth flow caches.
    Synth {
        /// local-global, radial, background, background-clean or noisy.
        preset: Preset,
        out: PathBuf,
        #[arg(long)]
        per_class: Option<usize>,
    },
    /// Tracks, localizes and describes every video of the manifest.
    Extract {
        manifest: PathBuf,
        #[arg(long, default_value = "work")]
        work: PathBuf,
    },
    /// Learns codebooks and the classifier from the training split.
    Train {
        manifest: PathBuf,
        #[arg(long, default_value = "work")]
        work: PathBuf,
    },
    /// Classifies the test split and writes the confusion matrix.
    Eval {
        manifest: PathBuf,
        #[arg(long, default_value = "work")]
        work: PathBuf,
        /// Model directory (default: <work>/model).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Summarizes an archive, codebook, model, manifest or config file.
    Inspect {
        #[arg(required_unless_present = "default_config")]
        file: Option<PathBuf>,
        /// Prints the effective config as JSON.
        #[arg(long, conflicts_with = "file")]
        default_config: bool,
    },
}

fn resolve_config(g: &GlobalArgs) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(m) = g.mode {
        cfg.mode = match m {
            ModeArg::TwoD => Mode::TwoD,
            ModeArg::ThreeD => Mode::ThreeD,
        };
    }
    if g.global_bow {
        cfg.bow.global = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let g = &cli.global;
    let cfg = resolve_config(g)?;
    match cli.command {
        Command::Synth { preset, out, per_class } => {
            let manifest = out.join("manifest.json");
            if manifest.exists() && !g.force {
                println!("{} exists; use --force to regenerate", manifest.display());
                return Ok(ExitCode::SUCCESS);
            }
            let path = with_jobs(g.jobs, || cmd_synth(preset, &out, cfg.seed, per_class))??;
            println!("wrote {}", path.display());
        }
        Command::Extract { manifest, work } => {
            let m = load_manifest(&manifest)?;
            let s = with_jobs(g.jobs, || cmd_extract(&m, &cfg, &WorkDir::new(&work), g.force))??;
            for (id, msg) in &s.failed {
                eprintln!("{id}: {msg}");
            }
            println!("extracted {}, skipped {}, failed {}", s.extracted.len(), s.skipped.len(), s.failed.len());
            if !s.failed.is_empty() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Train { manifest, work } => {
            let m = load_manifest(&manifest)?;
            let w = WorkDir::new(&work);
            match with_jobs(g.jobs, || cmd_train(&m, &cfg, &w, g.force))?? {
                Some(s) => {
                    if let Some((chosen, scores)) = &s.selection {
                        println!("selection: candidate {chosen} of {}", scores.len());
                    }
                    println!("trained on {} videos, training accuracy {:.4}", s.videos, s.training_accuracy);
                }
                None => println!("{} is up to date; use --force to retrain", w.model_dir().display()),
            }
        }
        Command::Eval { manifest, work, model } => {
            let m = load_manifest(&manifest)?;
            let w = WorkDir::new(&work);
            let model = model.unwrap_or_else(|| w.model_dir());
            let r = with_jobs(g.jobs, || cmd_eval(&m, &cfg, &w, &model, g.force))??;
            for (c, a) in r.classes.iter().zip(&r.per_class_accuracy) {
                println!("{c}: {a:.4}");
            }
            println!("accuracy {:.4}", r.accuracy);
            println!("confusion matrix in {}", w.eval_dir().display());
        }
        Command::Inspect { file, default_config } => {
            if default_config {
                println!("{}", cfg.to_json());
            } else if let Some(f) = file {
                println!("{}", inspect_file(&f)?);
            } else {
                bail!("nothing to inspect");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
