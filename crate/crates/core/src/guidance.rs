//! Consistency-guided sampling: background and keypoint costs on the
//! Tweedie estimate, the keypoint assignment and frame generation.

use alloc::string::ToString;
use alloc::vec::Vec;

use libm::sqrt;

use crate::backend::{Autoencoder, ControlMap, Denoiser};
use crate::config::GuidanceConfig;
use crate::diffusion::{apply_cost_gradient, cfg_epsilon, ddim_sample_step, reverse_mean_step, tweedie_estimate};
use crate::error::{contract, Error, Result};
use crate::inversion::{cfg_predict, TimestepEmbeddings};
use crate::pose::{rasterize_pose, PoseSkeleton, RasterStyle};
use crate::schedule::NoiseSchedule;
use crate::tensor::{Image, Latent, Mask, Tensor};

/// Costs below this skip the guidance correction.
pub const COST_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyTarget {
    pub reference_image: Image,
    pub background_mask: Mask,
    pub keypoint_patch_radius: usize,
    pub reference_poses: Vec<PoseSkeleton>,
}

impl ConsistencyTarget {
    pub fn new(
        reference_image: Image,
        background_mask: Mask,
        keypoint_patch_radius: usize,
        reference_poses: Vec<PoseSkeleton>,
    ) -> Result<Self> {
        background_mask.ensure_matches(&reference_image)?;
        Ok(Self {
            reference_image,
            background_mask,
            keypoint_patch_radius,
            reference_poses,
        })
    }

    /// Patch radius 1 at width 16, scaled with the image width.
    pub fn patch_radius_for_width(width: usize) -> usize {
        (width / 16).max(1)
    }
}

fn masked_sq_diff(a: &Image, b: &Image, mask: &Mask) -> Result<f64> {
    a.ensure_same_shape(b, "cost operand")?;
    mask.ensure_matches(a)?;
    let (h, w) = (a.height(), a.width());
    let mut total = 0.0;
    for c in 0..a.channels() {
        for y in 0..h {
            for x in 0..w {
                if mask.get(x, y) {
                    let d = a.get(c, y, x) - b.get(c, y, x);
                    total += d * d;
                }
            }
        }
    }
    Ok(total)
}

/// Sum of squared differences to the reference on the background mask.
pub fn background_cost(estimate: &Image, target: &ConsistencyTarget) -> Result<f64> {
    masked_sq_diff(&target.reference_image, estimate, &target.background_mask)
}

/// Sum of squared differences to the assigned values on `m_kp`.
pub fn keypoint_cost(estimate: &Image, assigned: &Image, keypoint_mask: &Mask) -> Result<f64> {
    masked_sq_diff(assigned, estimate, keypoint_mask)
}

/// Copies the reference patch around every keypoint visible in both the
/// reference and target pose of a person to the target keypoint location.
/// Later persons and keypoints overwrite earlier ones.
pub fn assign_keypoint_values(target: &ConsistencyTarget, target_poses: &[PoseSkeleton]) -> Result<(Image, Mask)> {
    let src = &target.reference_image;
    let (h, w) = (src.height() as i64, src.width() as i64);
    let mut assigned = Tensor::zeros(src.shape());
    let mut mask = Mask::new(src.width(), src.height(), false);
    let r = target.keypoint_patch_radius as i64;
    let round = |v: f64| libm::round(v) as i64;
    for pose in target_poses {
        let reference = target
            .reference_poses
            .iter()
            .find(|p| p.person_id == pose.person_id)
            .ok_or_else(|| contract!("person {} has no reference pose", pose.person_id))?;
        for (rk, tk) in reference.keypoints.iter().zip(&pose.keypoints) {
            if !(rk.is_visible() && tk.is_visible()) {
                continue;
            }
            let (rx, ry, tx, ty) = (round(rk.x), round(rk.y), round(tk.x), round(tk.y));
            for dy in -r..=r {
                for dx in -r..=r {
                    let (sx, sy, x, y) = (rx + dx, ry + dy, tx + dx, ty + dy);
                    if sx < 0 || sy < 0 || sx >= w || sy >= h || x < 0 || y < 0 || x >= w || y >= h {
                        continue;
                    }
                    mask.set(x as usize, y as usize, true);
                    for c in 0..src.channels() {
                        assigned.set(c, y as usize, x as usize, src.get(c, sy as usize, sx as usize));
                    }
                }
            }
        }
    }
    Ok((assigned, mask))
}

/// The weighted cost `L = lambda_bg * L_bg + lambda_kp * L_kp`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostTerms {
    pub background: f64,
    pub keypoint: f64,
    pub total: f64,
}

/// Everything the cost needs for one target frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTarget<'a> {
    pub target: &'a ConsistencyTarget,
    pub assigned: Image,
    pub keypoint_mask: Mask,
}

impl<'a> FrameTarget<'a> {
    pub fn new(target: &'a ConsistencyTarget, target_poses: &[PoseSkeleton]) -> Result<Self> {
        let (assigned, keypoint_mask) = assign_keypoint_values(target, target_poses)?;
        Ok(Self {
            target,
            assigned,
            keypoint_mask,
        })
    }

    pub fn cost(&self, image: &Image, config: &GuidanceConfig) -> Result<CostTerms> {
        let background = background_cost(image, self.target)?;
        let keypoint = keypoint_cost(image, &self.assigned, &self.keypoint_mask)?;
        Ok(CostTerms {
            background,
            keypoint,
            total: config.background_weight * background + config.keypoint_weight * keypoint,
        })
    }

    /// Gradient of [`FrameTarget::cost`] with respect to the image.
    pub fn image_gradient(&self, image: &Image, config: &GuidanceConfig) -> Result<Image> {
        let reference = &self.target.reference_image;
        image.ensure_same_shape(reference, "estimate")?;
        let mut g = Tensor::zeros(image.shape());
        let (lb, lk) = (2.0 * config.background_weight, 2.0 * config.keypoint_weight);
        for c in 0..image.channels() {
            for y in 0..image.height() {
                for x in 0..image.width() {
                    let v = image.get(c, y, x);
                    let mut d = 0.0;
                    if self.target.background_mask.get(x, y) {
                        d += lb * (v - reference.get(c, y, x));
                    }
                    if self.keypoint_mask.get(x, y) {
                        d += lk * (v - self.assigned.get(c, y, x));
                    }
                    g.set(c, y, x, d);
                }
            }
        }
        Ok(g)
    }
}

/// How the cost gradient is taken through the noise prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GradientMode {
    /// The noise prediction is held fixed while differentiating.
    #[default]
    FixedEpsilon,
    /// Backpropagates through the guided noise prediction as well.
    FullBackprop,
}

/// The unguided transition each guided step corrects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BaseStep {
    /// Deterministic DDIM, the sampler the embeddings are optimized for.
    #[default]
    Ddim,
    /// Noise-free ancestral mean `(z - (1 - a_t) / sqrt(1 - ab_t) eps) / sqrt(a_t)`.
    ReverseMean,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct FrameOptions {
    pub gradient: GradientMode,
    pub base_step: BaseStep,
}

/// Inputs of the noise prediction at one sampling step.
#[derive(Clone, Copy)]
pub struct StepContext<'a, D: ?Sized> {
    pub backend: &'a D,
    pub schedule: &'a NoiseSchedule,
    pub t: usize,
    pub unconditional: &'a [f64],
    pub conditional: &'a [f64],
    pub control: &'a ControlMap,
    pub guidance_scale: f64,
}

impl<D: Denoiser + ?Sized> StepContext<'_, D> {
    pub fn epsilon(&self, z: &Latent) -> Result<Latent> {
        cfg_predict(
            self.backend,
            z,
            self.schedule.level(self.t)?,
            self.unconditional,
            self.conditional,
            Some(self.control),
            self.guidance_scale,
        )
    }
}

/// Cost of the decoded Tweedie estimate at `z`, with `eps` given or
/// recomputed from `z` when `None`.
pub fn tweedie_cost<D: Denoiser + ?Sized, A: Autoencoder + ?Sized>(
    z: &Latent,
    eps: Option<&Latent>,
    ctx: &StepContext<'_, D>,
    autoencoder: &A,
    frame: &FrameTarget<'_>,
    config: &GuidanceConfig,
) -> Result<CostTerms> {
    let eps = match eps {
        Some(e) => e.clone(),
        None => ctx.epsilon(z)?,
    };
    let x0 = tweedie_estimate(z, &eps, ctx.schedule, ctx.t)?;
    frame.cost(&autoencoder.decode(&x0)?, config)
}

/// Cost of the Tweedie estimate and its gradient with respect to `z`.
pub fn tweedie_cost_gradient<D: Denoiser + ?Sized, A: Autoencoder + ?Sized>(
    z: &Latent,
    eps: &Latent,
    ctx: &StepContext<'_, D>,
    autoencoder: &A,
    frame: &FrameTarget<'_>,
    config: &GuidanceConfig,
    mode: GradientMode,
) -> Result<(CostTerms, Latent)> {
    let ab = ctx.schedule.alpha_bar(ctx.t);
    let x0 = tweedie_estimate(z, eps, ctx.schedule, ctx.t)?;
    let image = autoencoder.decode(&x0)?;
    let cost = frame.cost(&image, config)?;
    let g_img = frame.image_gradient(&image, config)?;
    let g_x0 = autoencoder.decode_vjp(&x0, &g_img)?;
    let inv = 1.0 / sqrt(ab);
    let grad = match mode {
        GradientMode::FixedEpsilon => g_x0.scale(inv),
        GradientMode::FullBackprop => {
            // d x0 / d z = (I - sqrt(1 - ab) J_eps) / sqrt(ab).
            let level = ctx.schedule.level(ctx.t)?;
            let w = ctx.guidance_scale;
            let (_, jc) = ctx.backend.vjp(z, level, ctx.conditional, Some(ctx.control), &g_x0)?;
            let (_, ju) = ctx.backend.vjp(z, level, ctx.unconditional, Some(ctx.control), &g_x0)?;
            let j = cfg_epsilon(&jc.latent, &ju.latent, w)?;
            g_x0.lincomb(inv, &j, -inv * sqrt(1.0 - ab))?
        }
    };
    Ok((cost, grad))
}

/// Record of one guided step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuidanceStep {
    pub t: usize,
    pub cost: CostTerms,
    /// Applied gradient scale, `base_step_size / cost` or zero when skipped.
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedFrame {
    pub image: Image,
    /// Cost of the final decoded frame.
    pub final_cost: CostTerms,
    pub steps: Vec<GuidanceStep>,
}

/// Samples one frame from `start` under `control`, correcting every step
/// with the consistency-cost gradient. With both cost weights at zero this
/// is plain guided DDIM sampling.
#[allow(clippy::too_many_arguments)]
pub fn generate_frame<D: Denoiser + ?Sized, A: Autoencoder + ?Sized>(
    start: &Latent,
    embeddings: &TimestepEmbeddings,
    control: &ControlMap,
    frame: &FrameTarget<'_>,
    backend: &D,
    autoencoder: &A,
    schedule: &NoiseSchedule,
    config: &GuidanceConfig,
    options: FrameOptions,
) -> Result<GeneratedFrame> {
    config.validate()?;
    embeddings.ensure_fits(schedule, backend.embedding_dim())?;
    let guided = config.background_weight > 0.0 || config.keypoint_weight > 0.0;
    let mut z = start.clone();
    let mut steps = Vec::with_capacity(schedule.num_steps());
    for t in (1..=schedule.num_steps()).rev() {
        let (u, c) = embeddings.at(t);
        let ctx = StepContext {
            backend,
            schedule,
            t,
            unconditional: u,
            conditional: c,
            control,
            guidance_scale: config.guidance_scale,
        };
        let eps = ctx.epsilon(&z)?;
        let mut next = match options.base_step {
            BaseStep::Ddim => ddim_sample_step(&z, &eps, schedule, t)?,
            BaseStep::ReverseMean => reverse_mean_step(&z, &eps, schedule, t)?,
        };
        if guided {
            let (cost, grad) = tweedie_cost_gradient(&z, &eps, &ctx, autoencoder, frame, config, options.gradient)?;
            if !cost.total.is_finite() || !grad.is_finite() {
                return Err(Error::Numerical(alloc::format!("guidance cost diverged at t = {}", t)));
            }
            let scale = if cost.total < COST_FLOOR {
                0.0
            } else {
                apply_cost_gradient(&mut next, &grad, cost.total, config.base_step_size)?
            };
            steps.push(GuidanceStep { t, cost, scale });
        }
        z = next;
    }
    let image = autoencoder.decode(&z)?;
    if !image.is_finite() {
        return Err(Error::Numerical("generated frame is not finite".to_string()));
    }
    let final_cost = frame.cost(&image, config)?;
    Ok(GeneratedFrame {
        image,
        final_cost,
        steps,
    })
}

/// Per-frame target poses sharing one start latent and embedding set.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameJob {
    pub target_poses: Vec<Vec<PoseSkeleton>>,
    pub start_latent: Latent,
    pub embeddings: TimestepEmbeddings,
    pub config: GuidanceConfig,
}

/// Control map for `poses` at the backend's control resolution.
pub fn frame_control<D: Denoiser + ?Sized>(poses: &[PoseSkeleton], backend: &D, style: RasterStyle) -> ControlMap {
    let [_, h, w] = backend.control_shape().unwrap_or(backend.latent_shape());
    rasterize_pose(poses, (w, h), style)
}

/// Generates one frame of `job`.
#[allow(clippy::too_many_arguments)]
pub fn generate_job_frame<D: Denoiser + ?Sized, A: Autoencoder + ?Sized>(
    job: &FrameJob,
    index: usize,
    target: &ConsistencyTarget,
    style: RasterStyle,
    backend: &D,
    autoencoder: &A,
    schedule: &NoiseSchedule,
    options: FrameOptions,
) -> Result<GeneratedFrame> {
    let run = || {
        let poses = job
            .target_poses
            .get(index)
            .ok_or_else(|| contract!("frame {} of {}", index, job.target_poses.len()))?;
        let frame = FrameTarget::new(target, poses)?;
        let control = frame_control(poses, backend, style);
        generate_frame(
            &job.start_latent,
            &job.embeddings,
            &control,
            &frame,
            backend,
            autoencoder,
            schedule,
            &job.config,
            options,
        )
    };
    run().map_err(|e| e.at("frame", index))
}

/// Generates every frame of `job` in order. Frames depend only on their own
/// poses, so they may equally be generated concurrently.
pub fn generate_video<D: Denoiser + ?Sized, A: Autoencoder + ?Sized>(
    job: &FrameJob,
    target: &ConsistencyTarget,
    style: RasterStyle,
    backend: &D,
    autoencoder: &A,
    schedule: &NoiseSchedule,
    options: FrameOptions,
) -> Result<Vec<GeneratedFrame>> {
    if job.target_poses.is_empty() {
        return Err(contract!("a video needs at least one frame"));
    }
    (0..job.target_poses.len())
        .map(|i| generate_job_frame(job, i, target, style, backend, autoencoder, schedule, options))
        .collect()
}
