//! Command-line batch jobs wiring the localization toolkit together.
//!
//! Numeric behavior comes from the key=value config file; flags select
//! paths, the seed and the worker count. Every command is idempotent
//! with respect to its inputs plus seed.

mod config;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use config::{write_run_meta, RunConfig};
use panoloc::dataset::{self, ingest::ingest_cold_layout, load_manifest, PairTask};
use panoloc::imaging::{to_network_input, PanoramicImage};
use panoloc::localize::synthetic::generate_synthetic_world;
use panoloc::localize::{build_map, eval_localization, eval_room, VisualMap};
use panoloc::model::build_model;
use panoloc::model::checkpoint::load_checkpoint;
use panoloc::train::{gradient_check, train};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "panoloc",
    about = "Siamese descriptor networks for panoramic place recognition and localization",
    version
)]
struct Cli {
    /// Run configuration file (key=value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed override; defaults to the config's `seed` (or 0).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; the default single thread is the deterministic
    /// baseline (results do not depend on this value).
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a COLD-style folder layout into a manifest.
    Ingest {
        /// Source directory of sequence folders.
        #[arg(long)]
        src: PathBuf,
        /// Output manifest path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the procedural synthetic world (train/test/map splits).
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Expand a manifest with the full augmentation grid.
    Augment {
        /// Source manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for images and the augmented manifest.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a Siamese model over stratified pairs.
    Train {
        /// Training manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed a map manifest into a visual map file.
    BuildMap {
        /// Model checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Map manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Output visual map path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate room discrimination on sampled pairs.
    EvalRoom {
        /// Model checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluation manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Optional report file (line-delimited records).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate global localization against a visual map.
    EvalLoc {
        /// Model checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Visual map file.
        #[arg(long)]
        map: PathBuf,
        /// Test manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Optional report file (line-delimited records).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check analytic gradients against finite differences.
    Gradcheck,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn meta_dir_of(out: &Path, is_file: bool) -> PathBuf {
    if is_file {
        out.parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .to_path_buf()
    } else {
        out.to_path_buf()
    }
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.max(1))
        .build_global()
        .context("configuring the worker pool")?;
    let cfg = load_config(&cli.config)?;
    let seed = cfg.seed(cli.seed)?;

    match cli.command {
        Command::Ingest { src, out } => {
            let (manifest, counts) = ingest_cold_layout(&src, &out)?;
            println!("room       frames");
            for (room, count) in &counts {
                println!("{room:<10} {count:>6}");
            }
            println!("total      {:>6}", manifest.len());
            println!("kb = {:.4} m -> {}", manifest.k_b(), out.display());
        }
        Command::Synth { out } => {
            let (rooms, frames_per_room, spacing, size) = cfg.synth()?;
            let (train_m, test_m, map_m) =
                generate_synthetic_world(rooms, frames_per_room, spacing, size, seed, &out)?;
            write_run_meta(&out, "synth", &cfg, seed)?;
            println!(
                "synthetic world: {} rooms x {} frames, spacing {} m, images {}x{}",
                rooms, frames_per_room, spacing, size.0, size.1
            );
            println!(
                "train {} frames, test {} frames, map {} frames, kb {:.4} m",
                train_m.len(),
                test_m.len(),
                map_m.len(),
                train_m.k_b()
            );
        }
        Command::Augment { manifest, out } => {
            let src = load_manifest(&manifest)?;
            let augmented = panoloc::augment::augment_corpus(&src, seed, &out)?;
            write_run_meta(&out, "augment", &cfg, seed)?;
            println!(
                "augmented {} source frames into {} records ({} effects + original each)",
                src.len(),
                augmented.len(),
                panoloc::augment::COMBO_COUNT
            );
        }
        Command::Train { manifest, out } => {
            let m = load_manifest(&manifest)?;
            let model = build_model(cfg.backbone()?, cfg.head()?, seed)?;
            let train_cfg = cfg.train_config(seed)?;
            write_run_meta(&out, "train", &cfg, seed)?;
            let (_, stats) = train(model, &m, &train_cfg, &out)?;
            for s in &stats {
                println!(
                    "epoch {:>3}  mean_loss {:.6}  pairs {}+{}  {:.1}s",
                    s.epoch, s.mean_loss, s.n_same, s.n_diff, s.seconds
                );
            }
            println!("checkpoints in {}", out.display());
        }
        Command::BuildMap {
            checkpoint,
            manifest,
            out,
        } => {
            let (model, _) = load_checkpoint(&checkpoint)?;
            let mut m = load_manifest(&manifest)?;
            if let Some(target) = cfg.map_target()? {
                m = dataset::subsample_map(&m, target)?;
            }
            let map = build_map(&model, &m)?;
            map.save(&out)?;
            write_run_meta(&meta_dir_of(&out, true), "build-map", &cfg, seed)?;
            println!(
                "visual map: {} entries, descriptor dim {} -> {}",
                map.len(),
                map.descriptor_dim(),
                out.display()
            );
        }
        Command::EvalRoom {
            checkpoint,
            manifest,
            out,
        } => {
            let (model, _) = load_checkpoint(&checkpoint)?;
            let m = load_manifest(&manifest)?;
            let pairs = dataset::sample_pairs(
                &m,
                cfg.eval_pairs()?,
                cfg.eval_ratio_same()?,
                PairTask::RoomBinary,
                seed,
            )?;
            let report = eval_room(&model, &m, &pairs, cfg.threshold()?)?;
            print!("{}", report.table());
            if let Some(out) = out {
                std::fs::write(&out, report.record())
                    .with_context(|| format!("writing {}", out.display()))?;
                write_run_meta(&meta_dir_of(&out, true), "eval-room", &cfg, seed)?;
            }
        }
        Command::EvalLoc {
            checkpoint,
            map,
            manifest,
            out,
        } => {
            let (model, _) = load_checkpoint(&checkpoint)?;
            let vmap = VisualMap::load(&map)?;
            let m = load_manifest(&manifest)?;
            let report = eval_localization(&model, &vmap, &m)?;
            print!("{}", report.table());
            println!("global error {:.4} m", report.global_mean);
            if let Some(out) = out {
                std::fs::write(&out, report.record())
                    .with_context(|| format!("writing {}", out.display()))?;
                write_run_meta(&meta_dir_of(&out, true), "eval-loc", &cfg, seed)?;
            }
        }
        Command::Gradcheck => {
            let mut model = build_model(cfg.backbone()?, cfg.head()?, seed)?;
            let (h, w) = (
                model.backbone_config().input_height,
                model.backbone_config().input_width,
            );
            let (eps, n_params) = cfg.gradcheck()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
            let mut noise_image = || -> Result<_> {
                let pixels: Vec<u8> = (0..h * w * 3).map(|_| rng.random_range(0..=255)).collect();
                Ok(to_network_input(&PanoramicImage::from_raw(h, w, pixels)?))
            };
            let img0 = noise_image()?;
            let img1 = noise_image()?;
            let err = gradient_check(
                &mut model,
                (&img0, &img1, 0.3),
                cfg.alpha()?,
                eps,
                n_params,
                seed,
            )?;
            println!(
                "gradcheck: backbone {}, {} params, eps {:e}: max relative error {:.3e}",
                model.backbone_config().kind,
                n_params,
                eps,
                err
            );
            if err > 1e-3 {
                bail!("gradient check failed: {err:.3e} exceeds 1e-3");
            }
        }
    }
    Ok(())
}
