//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Progress notes go to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use posedance::config::{Mode, RunConfig};
use posedance::formats::{read_checkpoint, EMBEDDINGS_HEADER_LEN};
use posedance::pipeline::{self, Inversion, CHECKPOINT_FILE, EMBEDDINGS_FILE, FRAMES_DIR, REFERENCE_DIR};
use posedance::scene::read_composed;
use posedance_core::backend::{
    check_gradient, AnalyticGaussianBackend, ControlMap, Denoiser, GaussianWorldSpec, GradientProbe,
    IdentityAutoencoder, InputSelector, MlpDenoiser, ScaledAutoencoder,
};
use posedance_core::compose::{compose_scene, ComposedScene};
use posedance_core::diffusion::{ddim_invert_step, ddim_sample_step, tweedie_estimate};
use posedance_core::embeddings::{objective_terms, GeneralizationBatch};
use posedance_core::guidance::{
    generate_frame, tweedie_cost, tweedie_cost_gradient, ConsistencyTarget, FrameOptions, FrameTarget, GradientMode,
    StepContext,
};
use posedance_core::inversion::{
    cfg_predict, optimize_null_text, pivot_distance, pose_aware_invert, reconstruct, EmbeddingMode,
    InversionTrajectory, TimestepEmbeddings, TimestepLoss,
};
use posedance_core::metrics::{harmonic_mean, map_from_oks, oks, ObjectScaleRule, OksParams, COCO_BODY18_K};
use posedance_core::pose::{Canvas, Keypoint, PoseSkeleton, NUM_KEYPOINTS};
use posedance_core::toy::{toy_background, ToyWorld};
use posedance_core::{GuidanceConfig, Image, Latent, Mask, NoiseSchedule, ScheduleProfile, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Check = Result<Verdict, Box<dyn std::error::Error>>;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Check {
    Ok(Verdict { pass, detail })
}

fn schedule() -> NoiseSchedule {
    NoiseSchedule::new(50, ScheduleProfile::ScaledLinear1000).unwrap()
}

fn gaussian(shape: [usize; 3], rng: &mut ChaCha8Rng) -> Latent {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn analytic_world(shape: [usize; 3], variance: f64, dim: usize) -> AnalyticGaussianBackend {
    let mean = toy_background(Canvas::new(shape[2], shape[1]), 2);
    AnalyticGaussianBackend::new(GaussianWorldSpec::new(mean, variance).unwrap(), dim)
}

fn unit_cfg() -> GuidanceConfig {
    GuidanceConfig {
        guidance_scale: 1.0,
        ..GuidanceConfig::default()
    }
}

fn improved(losses: &[TimestepLoss]) -> usize {
    losses.iter().filter(|l| l.end <= l.start).count()
}

// 1 --------------------------------------------------------------------------

fn exact_inversion() -> Check {
    let started = Instant::now();
    let s = schedule();
    let world = ToyWorld::default();
    let backend = analytic_world([3, 32, 32], 0.05, world.embedding_dim);
    let c = world.prompt_embedding();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let scene = world.random_scene(&mut rng)?;
        let control = world.control_map(&scene.poses);
        let traj = pose_aware_invert(&scene.image, &c, &control, &backend, &IdentityAutoencoder, &s)?;
        let emb = TimestepEmbeddings::constant(50, &backend.empty_embedding(), &c, EmbeddingMode::NullOnly);
        let rec = reconstruct(traj.start(), &emb, &control, &backend, &IdentityAutoencoder, &s, &unit_cfg())?;
        worst = worst.max(rec.max_abs_diff(&scene.image)?);
    }
    let elapsed = started.elapsed();
    verdict(
        worst <= 1e-3 && elapsed < Duration::from_secs(10),
        format!("max |x0_hat - x0| = {worst:.2e} over 3 scenes (<= 1e-3), {:.2}s (< 10s)", elapsed.as_secs_f64()),
    )
}

// 2 --------------------------------------------------------------------------

fn tweedie_oracle() -> Check {
    let s = schedule();
    let shape = [3, 8, 8];
    let variance = 0.3;
    let backend = analytic_world(shape, variance, 4);
    let mean = backend.spec().mean.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut steps = Vec::new();
    for _ in 0..10 {
        let t = rng.random_range(1..=s.num_steps());
        steps.push(t);
        let z = gaussian(shape, &mut rng);
        let eps = backend.predict(&z, s.level(t)?, &[0.0; 4], None)?;
        let estimate = tweedie_estimate(&z, &eps, &s, t)?;
        let ab = s.alpha_bar(t);
        let gain = ab.sqrt() * variance / (ab * variance + 1.0 - ab);
        for ((e, zi), mi) in estimate.as_slice().iter().zip(z.as_slice()).zip(mean.as_slice()) {
            let posterior = mi + gain * (zi - ab.sqrt() * mi);
            worst = worst.max((e - posterior).abs());
        }
    }
    verdict(
        worst <= 1e-6,
        format!("max deviation from the posterior mean {worst:.2e} at t = {steps:?} (<= 1e-6)"),
    )
}

// 3 --------------------------------------------------------------------------

fn algebraic_identities() -> Check {
    let s = schedule();
    let shape = [3, 8, 8];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut round_trip = 0.0f64;
    let mut param = 0.0f64;
    for t in 0..s.num_steps() {
        let z = gaussian(shape, &mut rng);
        let eps = gaussian(shape, &mut rng);
        let up = ddim_invert_step(&z, &eps, &s, t)?;
        round_trip = round_trip.max(ddim_sample_step(&up, &eps, &s, t + 1)?.max_abs_diff(&z)?);

        let x0 = tweedie_estimate(&up, &eps, &s, t + 1)?;
        let ab = s.alpha_bar(t);
        let via_x0 = x0.lincomb(ab.sqrt(), &eps, (1.0 - ab).sqrt())?;
        param = param.max(via_x0.max_abs_diff(&ddim_sample_step(&up, &eps, &s, t + 1)?)?);
    }

    let objective = objective_decomposition(&s, &mut rng)?;
    let cost = cost_decomposition()?;
    let worst = round_trip.max(param).max(objective).max(cost);
    verdict(
        worst <= 1e-10,
        format!(
            "round trip {round_trip:.1e}, eps/x0 {param:.1e}, joint objective {objective:.1e}, guidance cost {cost:.1e} (all <= 1e-10)"
        ),
    )
}

fn objective_decomposition(s: &NoiseSchedule, rng: &mut ChaCha8Rng) -> Result<f64, Box<dyn std::error::Error>> {
    let shape = [3, 8, 8];
    let backend = analytic_world(shape, 0.2, 4);
    let control = ControlMap::zeros(shape);
    let trajectory = |seed: u64| -> Result<InversionTrajectory, Box<dyn std::error::Error>> {
        let img = toy_background(Canvas::new(8, 8), seed);
        Ok(pose_aware_invert(&img, &[0.1, 0.2, 0.3, 0.4], &control, &backend, &IdentityAutoencoder, s)?)
    };
    let batch = GeneralizationBatch::new(trajectory(0)?, vec![trajectory(1)?, trajectory(2)?, trajectory(3)?])?;
    let running: Vec<Latent> = (0..4).map(|_| gaussian(shape, rng)).collect();
    let (u, c) = ([0.3, -0.2, 0.5, 0.0], [0.1, 0.7, -0.4, 0.2]);
    let mut worst = 0.0f64;
    for (t, lambda) in [(10usize, 1.0), (37, 0.25)] {
        let cfg = GuidanceConfig {
            generalization_weight: lambda,
            ..GuidanceConfig::default()
        };
        let terms = objective_terms(&batch, &running, t, &u, &c, &backend, s, &cfg)?;
        let branch = |z: &Latent, traj: &InversionTrajectory| -> Result<f64, Box<dyn std::error::Error>> {
            let eps = cfg_predict(&backend, z, s.level(t)?, &u, &c, Some(&traj.control), cfg.guidance_scale)?;
            Ok(pivot_distance(&ddim_sample_step(z, &eps, s, t)?, &traj.latents[t - 1])?)
        };
        let mut expected = branch(&running[0], &batch.reference)?;
        let mut gen = 0.0;
        for (z, traj) in running[1..].iter().zip(&batch.augmented) {
            gen += branch(z, traj)?;
        }
        expected += lambda / 3.0 * gen;
        worst = worst.max((terms.total() - expected).abs());
    }
    Ok(worst)
}

fn cost_decomposition() -> Result<f64, Box<dyn std::error::Error>> {
    let world = ToyWorld::default();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let reference = world.random_scene(&mut rng)?;
    let target = ConsistencyTarget::new(
        reference.image.clone(),
        reference.background_mask.clone(),
        ConsistencyTarget::patch_radius_for_width(32),
        reference.poses.clone(),
    )?;
    let moved = world.random_poses(&mut rng);
    let frame = FrameTarget::new(&target, &moved)?;
    let estimate = world.random_scene(&mut rng)?.image;
    let cfg = GuidanceConfig::default();
    let terms = frame.cost(&estimate, &cfg)?;
    let masked = |other: &Image, mask: &Mask| {
        let mut sum = 0.0;
        for c in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    if mask.get(x, y) {
                        sum += (estimate.get(c, y, x) - other.get(c, y, x)).powi(2);
                    }
                }
            }
        }
        sum
    };
    let bg = masked(&reference.image, &reference.background_mask);
    let kp = masked(&frame.assigned, &frame.keypoint_mask);
    let expected = cfg.background_weight * bg + cfg.keypoint_weight * kp;
    Ok((terms.total - expected).abs().max((terms.background - bg).abs()).max((terms.keypoint - kp).abs()))
}

// 4 --------------------------------------------------------------------------

fn gradient_contract(net: &MlpDenoiser) -> Check {
    let s = schedule();
    let world = ToyWorld::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (scene, caption) = world.random_captioned_scene(&mut rng)?;
    let prompt = world.embed_prompt(&caption);
    let control = world.control_map(&scene.poses);
    let shape = net.latent_shape();
    let n = shape.iter().product::<usize>();
    let coords: Vec<usize> = (0..40).map(|i| (i * 7919 + 13) % n).collect();
    let mut backend_err = 0.0f64;
    for t in [5usize, 25, 45] {
        let probe = GradientProbe {
            latent: gaussian(shape, &mut rng),
            level: s.level(t)?,
            embedding: prompt.clone(),
            control: Some(control.clone()),
            weights: gaussian(shape, &mut rng),
            coordinates: coords.clone(),
        };
        backend_err = backend_err.max(check_gradient(net, &probe, InputSelector::Latent)?);
        let all_embedding = GradientProbe {
            coordinates: Vec::new(),
            ..probe
        };
        backend_err = backend_err.max(check_gradient(net, &all_embedding, InputSelector::Embedding)?);
    }

    let target = ConsistencyTarget::new(
        scene.image.clone(),
        scene.background_mask.clone(),
        ConsistencyTarget::patch_radius_for_width(32),
        scene.poses.clone(),
    )?;
    let moved = world.random_poses(&mut rng);
    let frame = FrameTarget::new(&target, &moved)?;
    let cfg = GuidanceConfig::default();
    let ae = world.autoencoder();
    let (u, c) = (net.empty_embedding(), prompt);
    let mut chain_err = 0.0f64;
    let mut probed = 0;
    for mode in [GradientMode::FixedEpsilon, GradientMode::FullBackprop] {
        let ctx = StepContext {
            backend: net,
            schedule: &s,
            t: 20,
            unconditional: &u,
            conditional: &c,
            control: &world.control_map(&moved),
            guidance_scale: cfg.guidance_scale,
        };
        let z = gaussian(shape, &mut rng);
        let eps = ctx.epsilon(&z)?;
        let (_, grad) = tweedie_cost_gradient(&z, &eps, &ctx, &ae, &frame, &cfg, mode)?;
        let fixed = (mode == GradientMode::FixedEpsilon).then_some(&eps);
        // Probe where the cost lives: keypoint patches and background.
        let plane = 32 * 32;
        let mut picks: Vec<usize> = (0..plane).filter(|&p| frame.keypoint_mask.get(p % 32, p / 32)).step_by(3).take(24).collect();
        picks.extend((0..plane).filter(|&p| target.background_mask.get(p % 32, p / 32)).step_by(61).take(16));
        for (j, &p) in picks.iter().enumerate() {
            let i = (j % 3) * plane + p;
            let x = z.as_slice()[i];
            let h = 1e-4 * x.abs().max(1.0);
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp.as_mut_slice()[i] = x + h;
            zm.as_mut_slice()[i] = x - h;
            let fd = (tweedie_cost(&zp, fixed, &ctx, &ae, &frame, &cfg)?.total
                - tweedie_cost(&zm, fixed, &ctx, &ae, &frame, &cfg)?.total)
                / (2.0 * h);
            let a = grad.as_slice()[i];
            chain_err = chain_err.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-8));
            probed += 1;
        }
    }
    verdict(
        backend_err <= 1e-4 && chain_err <= 1e-3 && probed >= 32,
        format!(
            "backend {backend_err:.1e} (<= 1e-4, 3x40 latent + 3x16 embedding coordinates), chain {chain_err:.1e} (<= 1e-3, {probed} coordinates, both modes)"
        ),
    )
}

// 8 --------------------------------------------------------------------------

fn metric_arithmetic() -> Check {
    let h = format!("{:.2}", harmonic_mean(0.83, 0.91)?);

    let world = ToyWorld::default();
    let pose = world.random_poses(&mut ChaCha8Rng::seed_from_u64(8)).remove(0);
    let self_oks = oks(&pose, &pose, &OksParams::default())?;

    let canvas = Canvas::new(32, 32);
    let (s, k_index) = (6.0, 4);
    let k = COCO_BODY18_K[k_index];
    let mut gt = [Keypoint::HIDDEN; NUM_KEYPOINTS];
    gt[k_index] = Keypoint::new(10.0, 12.0, 2);
    let mut det = gt;
    let d = s * k * 2f64.sqrt();
    det[k_index] = Keypoint::new(10.0 + d * 0.6, 12.0 + d * 0.8, 2);
    let params = OksParams {
        object_scale: ObjectScaleRule::Fixed(s),
        ..OksParams::default()
    };
    let single = oks(&PoseSkeleton::new(gt, 0, canvas)?, &PoseSkeleton::new(det, 0, canvas)?, &params)?;
    let single_err = (single - (-1f64).exp()).abs();

    let map = map_from_oks(&[0.7; 12])?;
    verdict(
        h == "0.87" && self_oks == 1.0 && single_err <= 1e-9 && map == 0.5,
        format!("H = {h}, OKS(gt, gt) = {self_oks}, |OKS - e^-1| = {single_err:.1e}, mAP(0.7) = {map}"),
    )
}

// Shared pipeline run ---------------------------------------------------------

struct PipelineRun {
    dir: tempfile::TempDir,
    cfg: RunConfig,
    elapsed: Duration,
    inversion: Inversion,
    guided: posedance_core::metrics::EvalReport,
    plain: posedance_core::metrics::EvalReport,
    net: MlpDenoiser,
}

impl PipelineRun {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

fn run_pipeline() -> Result<PipelineRun, Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let at = |rel: &str| dir.path().join(rel);
    let cfg = RunConfig {
        frames: Some(8),
        ..RunConfig::default()
    };
    let started = Instant::now();
    let note = |stage: &str| eprintln!("  [{:>6.1}s] {stage}", started.elapsed().as_secs_f64());
    let assets = pipeline::toy_assets(&cfg, 8, &at("assets"))?;
    pipeline::compose(&cfg, &assets.scene_manifest, &at("compose"))?;
    note("composed");
    pipeline::train_toy(&cfg, &at("train"))?;
    note("trained");
    let checkpoint = at("train").join(CHECKPOINT_FILE);
    let inversion = pipeline::invert(&cfg, &at("compose"), &checkpoint, &at("invert"))?;
    note("inverted");
    pipeline::generate(&cfg, &at("compose"), &checkpoint, &at("invert"), &assets.driving_poses, &at("generate"))?;
    note("generated");
    let guided = pipeline::evaluate(&cfg, &at("generate").join(FRAMES_DIR), &at("compose"), &assets.driving_poses, &at("evaluate"))?;
    let elapsed = started.elapsed();
    note("evaluated");

    let plain_cfg = RunConfig {
        guidance_enabled: false,
        ..cfg.clone()
    };
    pipeline::generate(&plain_cfg, &at("compose"), &checkpoint, &at("invert"), &assets.driving_poses, &at("plain"))?;
    let plain = pipeline::evaluate(&plain_cfg, &at("plain").join(FRAMES_DIR), &at("compose"), &assets.driving_poses, &at("plain_eval"))?;
    note("unguided baseline");
    let net = read_checkpoint(&checkpoint)?;
    Ok(PipelineRun {
        dir,
        cfg,
        elapsed,
        inversion,
        guided,
        plain,
        net,
    })
}

// 5 and 7 --------------------------------------------------------------------

struct NullScene {
    scene: ComposedScene,
    trajectory: InversionTrajectory,
    embeddings: TimestepEmbeddings,
}

fn null_text(net: &MlpDenoiser, scenes: &mut Vec<NullScene>) -> Check {
    let s = schedule();
    let world = ToyWorld::default();
    let ae = world.autoencoder();
    let cfg = GuidanceConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut pass = true;
    let mut parts = Vec::new();
    for k in 0..3 {
        let started = Instant::now();
        let (scene, caption) = world.random_captioned_scene(&mut rng)?;
        let c = world.embed_prompt(&caption);
        let control = world.control_map(&scene.poses);
        let trajectory = pose_aware_invert(&scene.image, &c, &control, net, &ae, &s)?;
        let plain = TimestepEmbeddings::constant(50, &net.empty_embedding(), &c, EmbeddingMode::NullOnly);
        let (embeddings, log) = optimize_null_text(&trajectory, net, &s, &cfg)?;
        let mae_plain = reconstruct(trajectory.start(), &plain, &control, net, &ae, &s, &cfg)?.mean_abs_diff(&scene.image)?;
        let mae_null = reconstruct(trajectory.start(), &embeddings, &control, net, &ae, &s, &cfg)?.mean_abs_diff(&scene.image)?;
        let secs = started.elapsed().as_secs_f64();
        let ok = improved(&log) == 50 && log.len() == 50 && mae_null < mae_plain && secs < 300.0;
        pass &= ok;
        parts.push(format!(
            "scene {k}: {}/50 steps, MAE {mae_null:.3e} vs plain {mae_plain:.3e}, {secs:.0}s",
            improved(&log)
        ));
        eprintln!("  {}", parts.last().unwrap());
        scenes.push(NullScene {
            scene,
            trajectory,
            embeddings,
        });
    }
    verdict(pass, parts.join("; "))
}

fn consistency_guidance(net: &MlpDenoiser, scenes: &[NullScene]) -> Check {
    let s = schedule();
    let world = ToyWorld::default();
    let ae = world.autoencoder();
    let cfg = GuidanceConfig::default();
    let off = GuidanceConfig {
        background_weight: 0.0,
        keypoint_weight: 0.0,
        ..cfg.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut wins, mut identical, mut total) = (0, 0, 0);
    let mut worst_ratio = 0.0f64;
    for ns in scenes {
        let target = ConsistencyTarget::new(
            ns.scene.image.clone(),
            ns.scene.background_mask.clone(),
            ConsistencyTarget::patch_radius_for_width(32),
            ns.scene.poses.clone(),
        )?;
        for _ in 0..4 {
            let poses = world.random_poses(&mut rng);
            let control = world.control_map(&poses);
            let frame = FrameTarget::new(&target, &poses)?;
            let start = ns.trajectory.start();
            let guided = generate_frame(start, &ns.embeddings, &control, &frame, net, &ae, &s, &cfg, FrameOptions::default())?;
            let zero = generate_frame(start, &ns.embeddings, &control, &frame, net, &ae, &s, &off, FrameOptions::default())?;
            let unguided = reconstruct(start, &ns.embeddings, &control, net, &ae, &s, &cfg)?;
            let l_unguided = frame.cost(&unguided, &cfg)?.total;
            total += 1;
            if guided.final_cost.total < l_unguided {
                wins += 1;
            }
            worst_ratio = worst_ratio.max(guided.final_cost.total / l_unguided);
            if zero.image.as_slice() == unguided.as_slice() && zero.steps.is_empty() {
                identical += 1;
            }
        }
    }
    verdict(
        wins == total && identical == total && total == 12,
        format!("guided L < unguided L on {wins}/{total} pairs (worst ratio {worst_ratio:.3}); zero weights bit-identical on {identical}/{total}"),
    )
}

// 6 --------------------------------------------------------------------------

fn background_mae(a: &Image, b: &Image, m: &Mask) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for c in 0..a.channels() {
        for y in 0..a.height() {
            for x in 0..a.width() {
                if m.get(x, y) {
                    sum += (a.get(c, y, x) - b.get(c, y, x)).abs();
                    n += 1;
                }
            }
        }
    }
    sum / n.max(1) as f64
}

fn generalizable(run: &PipelineRun) -> Check {
    let s = schedule();
    let world = run.cfg.world();
    let ae: ScaledAutoencoder = world.autoencoder();
    let null_cfg = RunConfig {
        mode: Mode::Null,
        ..run.cfg.clone()
    };
    let compose_dir = run.path("compose");
    let null = pipeline::invert(&null_cfg, &compose_dir, &run.path("train").join(CHECKPOINT_FILE), &run.path("invert_null"))?;
    let reference = read_composed(&compose_dir.join(REFERENCE_DIR))?;
    let start = &run.inversion.start_latent;
    let cfg = run.cfg.guidance_config();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (mut wins, mut margins) = (0, Vec::new());
    for _ in 0..8 {
        let poses = world.random_poses(&mut rng);
        let control = world.control_map(&poses);
        let target = compose_scene(&world.scene_spec(&poses, 0)?)?;
        let region = intersect(&reference.background_mask, &target.background_mask);
        let gen = reconstruct(start, &run.inversion.embeddings, &control, &run.net, &ae, &s, &cfg)?;
        let base = reconstruct(start, &null.embeddings, &control, &run.net, &ae, &s, &cfg)?;
        let (e_gen, e_null) = (
            background_mae(&gen, &reference.image, &region),
            background_mae(&base, &reference.image, &region),
        );
        if e_gen < e_null {
            wins += 1;
        }
        margins.push(format!("{:.4}/{:.4}", e_gen, e_null));
    }
    let losses = &run.inversion.generalizable_losses;
    let monotone = improved(losses);
    verdict(
        monotone == losses.len() && losses.len() == 50 && wins >= 6,
        format!(
            "joint loss end <= start on {monotone}/{} steps; background MAE lower than null-only on {wins}/8 held-out poses (gen/null: {})",
            losses.len(),
            margins.join(" ")
        ),
    )
}

fn intersect(a: &Mask, b: &Mask) -> Mask {
    let mut m = Mask::new(a.width(), a.height(), false);
    for y in 0..a.height() {
        for x in 0..a.width() {
            m.set(x, y, a.get(x, y) && b.get(x, y));
        }
    }
    m
}

// 9 and 10 -------------------------------------------------------------------

fn end_to_end(run: &PipelineRun) -> Check {
    let scale = run.cfg.toy.width as f64 / 16.0;
    let (g, p) = (&run.guided, &run.plain);
    let err = g.mean_keypoint_error.map(|e| e / scale);
    let minutes = run.elapsed.as_secs_f64() / 60.0;
    verdict(
        minutes < 30.0 && g.map >= p.map && err.is_some_and(|e| e <= 2.0),
        format!(
            "{minutes:.1} min (< 30); mAP {:.3} vs unguided {:.3}; keypoint error {} px at 16x16 scale (<= 2; unguided {}); H {:.3}",
            g.map,
            p.map,
            err.map_or("n/a".into(), |e| format!("{e:.2}")),
            p.mean_keypoint_error.map_or("n/a".into(), |e| format!("{:.2}", e / scale)),
            g.h
        ),
    )
}

fn portability(run: &PipelineRun) -> Check {
    let size = file_len(&run.path("invert").join(EMBEDDINGS_FILE))?;
    let dim = run.net.embedding_dim();
    let bound = 50 * 2 * dim * 4 + EMBEDDINGS_HEADER_LEN;
    let ckpt = file_len(&run.path("train").join(CHECKPOINT_FILE))?;
    verdict(
        size <= bound,
        format!("embeddings file {size} bytes, bound T*2*dim*4 + header = {bound}; backend checkpoint {ckpt} bytes"),
    )
}

fn file_len(path: &Path) -> Result<usize, Box<dyn std::error::Error>> {
    Ok(std::fs::metadata(path)?.len() as usize)
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let names = [
        "exact inversion (analytic backend, T=50)",
        "Tweedie estimate vs Gaussian posterior mean",
        "algebraic identities",
        "gradient contract",
        "null-text optimization",
        "generalizable embeddings",
        "consistency guidance",
        "metric arithmetic",
        "end-to-end toy pipeline",
        "embeddings-only artifact",
    ];
    let mut results: Vec<Option<Check>> = (0..10).map(|_| None).collect();
    let mut record = |i: usize, check: Check| {
        let status = match &check {
            Ok(v) if v.pass => "pass",
            _ => "FAIL",
        };
        eprintln!("criterion {} {status}", i + 1);
        results[i] = Some(check);
    };

    record(0, exact_inversion());
    record(1, tweedie_oracle());
    record(2, algebraic_identities());
    record(7, metric_arithmetic());
    eprintln!("running the toy pipeline (train, invert, generate, evaluate)");
    match run_pipeline() {
        Ok(run) => {
            record(8, end_to_end(&run));
            record(9, portability(&run));
            record(3, gradient_contract(&run.net));
            let mut scenes = Vec::new();
            record(4, null_text(&run.net, &mut scenes));
            record(6, consistency_guidance(&run.net, &scenes));
            record(5, generalizable(&run));
        }
        Err(e) => {
            for i in [3, 4, 5, 6, 8, 9] {
                record(i, Err(format!("pipeline failed: {e}").into()));
            }
        }
    }

    let mut failed = 0;
    for (i, (name, result)) in names.iter().zip(results).enumerate() {
        let line = match result.expect("every criterion runs") {
            Ok(v) if v.pass => format!("PASS  {:>2}. {name}: {}", i + 1, v.detail),
            Ok(v) => {
                failed += 1;
                format!("FAIL  {:>2}. {name}: {}", i + 1, v.detail)
            }
            Err(e) => {
                failed += 1;
                format!("FAIL  {:>2}. {name}: error: {e}", i + 1)
            }
        };
        println!("{line}");
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
