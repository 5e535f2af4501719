//! The five pipeline stages plus toy asset generation. Every stage reads
//! its inputs from disk, writes its outputs and a manifest into `out`, and
//! is reproducible from the configuration alone.

use std::path::{Path, PathBuf};

use posedance_core::backend::{heldout_epsilon_error, train_toy_denoiser, Denoiser, MlpDenoiser, TrainingReport};
use posedance_core::compose::{compose_scene, generate_augmentations, ComposedScene};
use posedance_core::embeddings::{invert_augmented, optimize_generalizable, GeneralizationBatch};
use posedance_core::guidance::{generate_job_frame, ConsistencyTarget, FrameJob, GeneratedFrame};
use posedance_core::inversion::{optimize_null_text, pose_aware_invert, TimestepEmbeddings, TimestepLoss};
use posedance_core::metrics::{evaluate as evaluate_frames, EvalEmbedders, EvalReport, OksParams, PixelEmbedder, RandomProjectionEmbedder};
use posedance_core::pose::{PoseSequence, ToyKeypointDetector};
use posedance_core::{Image, Latent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{Mode, RunConfig};
use crate::error::{Error, Result};
use crate::formats::{read_checkpoint, read_embeddings, read_latent, round_embeddings, write_checkpoint, write_embeddings, write_latent};
use crate::images::{read_image, write_image};
use crate::manifest::{write_json, write_jsonl, write_manifest, LossRecord};
use crate::poses::{read_pose_sequence, write_pose_sequence};
use crate::scene::{load_scene_spec, read_composed, write_composed, write_scene_spec, SceneManifest};

pub const REFERENCE_DIR: &str = "ref";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const START_LATENT_FILE: &str = "start_latent.bin";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const FRAMES_DIR: &str = "frames";
pub const REPORT_FILE: &str = "report.json";
pub const PROMPT_FILE: &str = "prompt.txt";

fn create(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))
}

pub fn augmentation_dir(m: usize) -> String {
    format!("aug_{m:02}")
}

pub fn frame_file(i: usize) -> String {
    format!("frame_{i:04}.png")
}

#[derive(Clone, Debug)]
pub struct ToyAssets {
    pub scene_manifest: PathBuf,
    pub driving_poses: PathBuf,
}

/// A random toy scene as a scene manifest with its files, and a driving
/// pose sequence of `frames` random poses for the same persons.
pub fn toy_assets(cfg: &RunConfig, frames: usize, out: &Path) -> Result<ToyAssets> {
    let world = cfg.world();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let poses = world.random_poses(&mut rng);
    let variant = rng.random_range(0..world.backgrounds.max(1));
    let spec = world.scene_spec(&poses, variant)?;
    let scene_manifest = write_scene_spec(&out.join("scene"), &spec, Some(&world.caption(variant)))?;
    let driving: Vec<_> = (0..frames).map(|_| world.random_poses(&mut rng)).collect();
    let seq = PoseSequence::new(driving, Some(cfg.fps))?;
    let driving_poses = out.join("driving.json");
    write_pose_sequence(&driving_poses, &seq)?;
    write_manifest(out, "toy-assets", cfg, json!({ "frames": frames, "background_variant": variant }))?;
    Ok(ToyAssets {
        scene_manifest,
        driving_poses,
    })
}

/// Composes the reference scene into `out/ref` and `M` augmentations into
/// `out/aug_XX`.
pub fn compose(cfg: &RunConfig, scene_manifest: &Path, out: &Path) -> Result<ComposedScene> {
    cfg.validate()?;
    let spec = load_scene_spec(scene_manifest)?;
    let reference = compose_scene(&spec)?;
    create(out)?;
    write_composed(&out.join(REFERENCE_DIR), &reference)?;
    if let Some(prompt) = SceneManifest::load(scene_manifest)?.prompt {
        let path = out.join(PROMPT_FILE);
        std::fs::write(&path, prompt).map_err(Error::io(&path))?;
    }
    let count = cfg.augmentation.count;
    let augs = generate_augmentations(&spec, count, cfg.seed, &cfg.augmentation_ranges())?;
    for (m, a) in augs.iter().enumerate() {
        write_composed(&out.join(augmentation_dir(m)), a)?;
    }
    write_manifest(out, "compose", cfg, json!({ "augmentations": count, "persons": spec.persons.len() }))?;
    Ok(reference)
}

#[derive(Serialize)]
struct WindowLoss {
    window: usize,
    loss: f64,
}

/// Trains the toy denoiser on random scenes of the configured world.
pub fn train_toy(cfg: &RunConfig, out: &Path) -> Result<(MlpDenoiser, TrainingReport)> {
    cfg.validate()?;
    let world = cfg.world();
    let schedule = cfg.schedule()?;
    let data = world.training_set(cfg.toy.dataset_size, cfg.seed)?;
    let (net, report) = train_toy_denoiser(&data, &schedule, &cfg.training_config())?;
    let heldout = world.training_set(32, cfg.seed ^ 0x6865_6c64)?;
    let with = heldout_epsilon_error(&net, &heldout, &schedule, 4, cfg.seed, true)?;
    let without = heldout_epsilon_error(&net, &heldout, &schedule, 4, cfg.seed, false)?;
    create(out)?;
    write_checkpoint(&out.join(CHECKPOINT_FILE), &net)?;
    let log: Vec<_> = report
        .losses
        .iter()
        .enumerate()
        .map(|(window, &loss)| WindowLoss { window, loss })
        .collect();
    write_jsonl(&out.join("loss.jsonl"), &log)?;
    write_json(&out.join("heldout.json"), &json!({ "with_control": with, "without_control": without }))?;
    write_manifest(
        out,
        "train-toy",
        cfg,
        json!({
            "parameters": net.params().len(),
            "initial_loss": report.initial_loss(),
            "final_loss": report.final_loss(),
            "heldout_with_control": with,
            "heldout_without_control": without,
        }),
    )?;
    Ok((net, report))
}

#[derive(Clone, Debug)]
pub struct Inversion {
    pub embeddings: TimestepEmbeddings,
    pub start_latent: Latent,
    pub null_losses: Vec<TimestepLoss>,
    /// Losses of the generalizable stage; empty in null mode.
    pub generalizable_losses: Vec<TimestepLoss>,
}

fn records(losses: &[TimestepLoss]) -> Vec<LossRecord> {
    losses.iter().map(LossRecord::from).collect()
}

fn count_augmentations(scene_dir: &Path) -> usize {
    (0..).take_while(|m| scene_dir.join(augmentation_dir(*m)).is_dir()).count()
}

/// Pose-aware inversion of the reference scene, null-text optimization and,
/// in generalizable mode, joint optimization over the augmentations.
pub fn invert(cfg: &RunConfig, scene_dir: &Path, checkpoint: &Path, out: &Path) -> Result<Inversion> {
    cfg.validate()?;
    let net = read_checkpoint(checkpoint)?;
    let world = cfg.world();
    let schedule = cfg.schedule()?;
    let gcfg = cfg.guidance_config();
    let ae = world.autoencoder();
    let reference = read_composed(&scene_dir.join(REFERENCE_DIR))?;
    let c = match std::fs::read_to_string(scene_dir.join(PROMPT_FILE)) {
        Ok(prompt) => world.embed_prompt(prompt.trim()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => world.prompt_embedding(),
        Err(e) => return Err(Error::io(&scene_dir.join(PROMPT_FILE))(e)),
    };
    let m = cfg.augmentation.count;
    let augs = if cfg.mode == Mode::Generalizable {
        let found = count_augmentations(scene_dir);
        if found < m {
            return Err(Error::Config(format!(
                "generalizable mode needs {m} augmentations, {} holds {found}",
                scene_dir.display()
            )));
        }
        (0..m)
            .map(|k| read_composed(&scene_dir.join(augmentation_dir(k))))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    let control = world.control_map(&reference.poses);
    let trajectory = pose_aware_invert(&reference.image, &c, &control, &net, &ae, &schedule)?;
    let (null, null_losses) = optimize_null_text(&trajectory, &net, &schedule, &gcfg)?;
    let start_latent = trajectory.start().clone();
    let (mut embeddings, generalizable_losses) = match cfg.mode {
        Mode::Null => (null, Vec::new()),
        Mode::Generalizable => {
            let aug_traj = invert_augmented(&augs, &c, world.raster_style(), &net, &ae, &schedule)?;
            let batch = GeneralizationBatch::new(trajectory, aug_traj)?;
            optimize_generalizable(&batch, &c, Some(&null), &net, &schedule, &gcfg)?
        }
    };
    round_embeddings(&mut embeddings);

    create(out)?;
    write_embeddings(&out.join(EMBEDDINGS_FILE), &embeddings)?;
    write_latent(&out.join(START_LATENT_FILE), &start_latent)?;
    write_jsonl(&out.join("null_loss.jsonl"), &records(&null_losses))?;
    if cfg.mode == Mode::Generalizable {
        write_jsonl(&out.join("loss.jsonl"), &records(&generalizable_losses))?;
    }
    let improved = |l: &[TimestepLoss]| l.iter().filter(|x| x.end <= x.start).count();
    write_manifest(
        out,
        "invert",
        cfg,
        json!({
            "mode": cfg.mode,
            "steps": schedule.num_steps(),
            "embedding_dim": net.embedding_dim(),
            "augmentations": augs.len(),
            "null_timesteps_improved": improved(&null_losses),
            "generalizable_timesteps_improved": improved(&generalizable_losses),
        }),
    )?;
    Ok(Inversion {
        embeddings,
        start_latent,
        null_losses,
        generalizable_losses,
    })
}

#[derive(Serialize)]
struct FrameRecord {
    frame: usize,
    final_cost: f64,
    background_cost: f64,
    keypoint_cost: f64,
    guided_steps: usize,
}

/// Generates `cfg.frames` (default: all) frames of the driving sequence from
/// the shared inversion endpoint and embeddings.
pub fn generate(
    cfg: &RunConfig,
    scene_dir: &Path,
    checkpoint: &Path,
    inversion_dir: &Path,
    driving_poses: &Path,
    out: &Path,
) -> Result<Vec<GeneratedFrame>> {
    cfg.validate()?;
    let net = read_checkpoint(checkpoint)?;
    let world = cfg.world();
    let schedule = cfg.schedule()?;
    let seq = read_pose_sequence(driving_poses)?;
    let frames = cfg.frames.unwrap_or(seq.len());
    if frames == 0 || frames > seq.len() {
        return Err(posedance_core::Error::Contract(format!("{frames} frames requested, the sequence has {}", seq.len())).into());
    }
    let reference = read_composed(&scene_dir.join(REFERENCE_DIR))?;
    let target = ConsistencyTarget::new(
        reference.image.clone(),
        reference.background_mask.clone(),
        ConsistencyTarget::patch_radius_for_width(world.canvas.width),
        reference.poses.clone(),
    )?;
    let job = FrameJob {
        target_poses: seq.frames[..frames].to_vec(),
        start_latent: read_latent(&inversion_dir.join(START_LATENT_FILE))?,
        embeddings: read_embeddings(&inversion_dir.join(EMBEDDINGS_FILE))?,
        config: cfg.guidance_config(),
    };
    let options = cfg.frame_options();
    let style = world.raster_style();
    let ae = world.autoencoder();
    let run = |i: usize| generate_job_frame(&job, i, &target, style, &net, &ae, &schedule, options);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<GeneratedFrame> = pool.install(|| (0..frames).into_par_iter().map(run).collect::<Result<_, _>>())?;

    let dir = out.join(FRAMES_DIR);
    create(&dir)?;
    for (i, f) in results.iter().enumerate() {
        write_image(&dir.join(frame_file(i)), &f.image)?;
    }
    let log: Vec<_> = results
        .iter()
        .enumerate()
        .map(|(frame, f)| FrameRecord {
            frame,
            final_cost: f.final_cost.total,
            background_cost: f.final_cost.background,
            keypoint_cost: f.final_cost.keypoint,
            guided_steps: f.steps.iter().filter(|s| s.scale > 0.0).count(),
        })
        .collect();
    write_jsonl(&out.join("frames.jsonl"), &log)?;
    let g = &job.config;
    write_manifest(
        out,
        "generate",
        cfg,
        json!({
            "frames": frames,
            "fps": seq.fps.unwrap_or(cfg.fps),
            "guidance_enabled": cfg.guidance_enabled,
            "delta": g.base_step_size,
            "lambda_background": g.background_weight,
            "lambda_keypoint": g.keypoint_weight,
            "embedding_mode": format!("{:?}", job.embeddings.mode),
        }),
    )?;
    Ok(results)
}

/// Reads `frame_0000.png`, `frame_0001.png`, ... until the first gap.
pub fn read_frames(dir: &Path) -> Result<Vec<Image>> {
    let mut frames = Vec::new();
    loop {
        let p = dir.join(frame_file(frames.len()));
        if !p.exists() {
            break;
        }
        frames.push(read_image(&p)?);
    }
    if frames.is_empty() {
        return Err(Error::format(dir, "no frame_XXXX.png files"));
    }
    Ok(frames)
}

#[derive(Serialize)]
struct PersonOks {
    person_id: u32,
    oks: f64,
}

#[derive(Serialize)]
struct ReportDocument<'a> {
    clip_i: f64,
    dino: f64,
    map: f64,
    h: f64,
    mean_keypoint_error: Option<f64>,
    clip_embedder: &'a str,
    dino_embedder: &'a str,
    frames: usize,
    per_frame_oks: Vec<Vec<PersonOks>>,
    warnings: Vec<String>,
    config_digest: String,
}

/// Scores generated frames against the driving poses and the reference.
pub fn evaluate(cfg: &RunConfig, frames_dir: &Path, scene_dir: &Path, driving_poses: &Path, out: &Path) -> Result<EvalReport> {
    let frames = read_frames(frames_dir)?;
    let mut gt = read_pose_sequence(driving_poses)?;
    if let Some(n) = cfg.frames {
        gt.frames.truncate(n);
    }
    let reference = read_image(&scene_dir.join(REFERENCE_DIR).join("image.png"))?;
    let clip = RandomProjectionEmbedder::default();
    let dino = PixelEmbedder::default();
    let report = evaluate_frames(
        &frames,
        &reference,
        &gt,
        &ToyKeypointDetector::default(),
        EvalEmbedders { clip: &clip, dino: &dino },
        &OksParams::default(),
    )?;
    create(out)?;
    let doc = ReportDocument {
        clip_i: report.clip_i,
        dino: report.dino,
        map: report.map,
        h: report.h,
        mean_keypoint_error: report.mean_keypoint_error,
        clip_embedder: &report.clip_embedder,
        dino_embedder: &report.dino_embedder,
        frames: frames.len(),
        per_frame_oks: report
            .per_frame_oks
            .iter()
            .map(|row| row.iter().map(|&(person_id, oks)| PersonOks { person_id, oks }).collect())
            .collect(),
        warnings: report.warnings.iter().map(|w| w.to_string()).collect(),
        config_digest: cfg.digest(),
    };
    write_json(&out.join(REPORT_FILE), &doc)?;
    write_manifest(out, "evaluate", cfg, json!({ "frames": frames.len() }))?;
    Ok(report)
}
