use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use posedance::config::{default_output_root, Mode, RunConfig};
use posedance::pipeline::{self, CHECKPOINT_FILE, FRAMES_DIR};
use posedance::{Error, Result};

/// Zero-shot pose-conditioned generation on the toy scene family.
#[derive(Parser, Debug)]
#[command(name = "posedance", version, about)]
struct Cli {
    /// TOML run configuration; defaults apply to absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; defaults to `$POSEDANCE_OUT/<command>`, or
    /// `posedance-runs/<command>` when the variable is unset.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Number of frames to generate or evaluate.
    #[arg(long, global = true)]
    frames: Option<usize>,
    /// Frame-level worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Generate without consistency guidance.
    #[arg(long, global = true)]
    no_guidance: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a random toy scene manifest and a driving pose sequence.
    ToyAssets,
    /// Compose the reference scene and its augmentations.
    Compose {
        /// Scene manifest (TOML).
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train the toy denoiser.
    TrainToy,
    /// Invert the reference and optimize the per-timestep embeddings.
    Invert {
        /// Output directory of `compose`.
        #[arg(long)]
        scene: PathBuf,
        /// Checkpoint file or `train-toy` output directory.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Generate frames for a driving pose sequence.
    Generate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory of `invert`.
        #[arg(long)]
        inversion: PathBuf,
        /// Driving pose sequence (JSON).
        #[arg(long)]
        poses: PathBuf,
    },
    /// Score generated frames.
    Evaluate {
        /// Frames directory or `generate` output directory.
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        poses: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::ToyAssets => "toy-assets",
            Command::Compose { .. } => "compose",
            Command::TrainToy => "train-toy",
            Command::Invert { .. } => "invert",
            Command::Generate { .. } => "generate",
            Command::Evaluate { .. } => "evaluate",
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = cli.mode {
        cfg.mode = mode;
    }
    if cli.frames.is_some() {
        cfg.frames = cli.frames;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    if cli.no_guidance {
        cfg.guidance_enabled = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Accepts either a file or the directory that holds `name`.
fn file_or_dir(path: &Path, name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(name)
    } else {
        path.to_path_buf()
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| default_output_root().join(cli.command.name()));
    match &cli.command {
        Command::ToyAssets => {
            let assets = pipeline::toy_assets(&cfg, cfg.frames.unwrap_or(8), &out)?;
            println!("scene manifest  {}", assets.scene_manifest.display());
            println!("driving poses   {}", assets.driving_poses.display());
        }
        Command::Compose { manifest } => {
            let scene = pipeline::compose(&cfg, manifest, &out)?;
            println!("composed {} persons and {} augmentations into {}", scene.poses.len(), cfg.augmentation.count, out.display());
        }
        Command::TrainToy => {
            let (net, report) = pipeline::train_toy(&cfg, &out)?;
            println!(
                "trained {} parameters, loss {:.4} -> {:.4}",
                net.params().len(),
                report.initial_loss(),
                report.final_loss()
            );
        }
        Command::Invert { scene, checkpoint } => {
            let inv = pipeline::invert(&cfg, scene, &file_or_dir(checkpoint, CHECKPOINT_FILE), &out)?;
            println!("{} timestep embeddings written to {}", inv.embeddings.num_steps(), out.display());
        }
        Command::Generate {
            scene,
            checkpoint,
            inversion,
            poses,
        } => {
            let frames = pipeline::generate(&cfg, scene, &file_or_dir(checkpoint, CHECKPOINT_FILE), inversion, poses, &out)?;
            let mean = frames.iter().map(|f| f.final_cost.total).sum::<f64>() / frames.len() as f64;
            println!("{} frames written to {}, mean final cost {:.4}", frames.len(), out.join(FRAMES_DIR).display(), mean);
        }
        Command::Evaluate { generated, scene, poses } => {
            let nested = generated.join(FRAMES_DIR);
            let frames_dir = if nested.is_dir() { nested } else { generated.clone() };
            let report = pipeline::evaluate(&cfg, &frames_dir, scene, poses, &out)?;
            println!("CLIP-I {:.4}  DINO {:.4}  mAP {:.4}  H {:.2}", report.clip_i, report.dino, report.map, report.h);
            match report.mean_keypoint_error {
                Some(e) => println!("mean keypoint error {e:.3} px"),
                None => println!("mean keypoint error: no keypoints detected"),
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
