//! Generalizable text embeddings: joint optimization of `(null_t, c_t)`
//! over the reference scene and its compositional augmentations.

use alloc::vec;
use alloc::vec::Vec;

use crate::backend::{Autoencoder, Denoiser};
use crate::compose::ComposedScene;
use crate::config::{ConditionalInit, GuidanceConfig};
use crate::diffusion::ddim_sample_step;
use crate::error::{contract, Error, Result};
use crate::inversion::{
    cfg_predict, pivot_loss, pose_aware_invert, require_embedding_gradients, EmbeddingMode,
    InversionTrajectory, PivotBranch, TimestepEmbeddings, TimestepLoss,
};
use crate::optim::Optimizer;
use crate::pose::{rasterize_pose, RasterStyle};
use crate::schedule::NoiseSchedule;
use crate::tensor::Latent;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizationBatch {
    pub reference: InversionTrajectory,
    pub augmented: Vec<InversionTrajectory>,
    /// Shared starting latent, the reference inversion endpoint.
    pub shared_start: Latent,
}

impl GeneralizationBatch {
    pub fn new(reference: InversionTrajectory, augmented: Vec<InversionTrajectory>) -> Result<Self> {
        for (m, a) in augmented.iter().enumerate() {
            if a.num_steps() != reference.num_steps() {
                return Err(contract!(
                    "augmentation {} has {} steps, reference {}",
                    m,
                    a.num_steps(),
                    reference.num_steps()
                ));
            }
            if a.control.shape() != reference.control.shape() {
                return Err(contract!("augmentation {} control shape differs from the reference", m));
            }
        }
        Ok(Self {
            shared_start: reference.start().clone(),
            reference,
            augmented,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.reference.num_steps()
    }
}

/// Inverts every augmented scene under its own rasterized pose.
pub fn invert_augmented<D: Denoiser + ?Sized, A: Autoencoder + ?Sized>(
    scenes: &[ComposedScene],
    c: &[f64],
    style: RasterStyle,
    backend: &D,
    autoencoder: &A,
    schedule: &NoiseSchedule,
) -> Result<Vec<InversionTrajectory>> {
    let [_, h, w] = backend.control_shape().unwrap_or(backend.latent_shape());
    scenes
        .iter()
        .enumerate()
        .map(|(m, scene)| {
            let control = rasterize_pose(&scene.poses, (w, h), style);
            pose_aware_invert(&scene.image, c, &control, backend, autoencoder, schedule)
                .map_err(|e| e.at("augmented scene", m))
        })
        .collect()
}

/// The terms of the joint objective at one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveTerms {
    pub reference: f64,
    pub generalization: Vec<f64>,
    pub generalization_weight: f64,
}

impl ObjectiveTerms {
    /// `L_ref + (lambda / M) * sum_m L_gen,m`, or `L_ref` when `M = 0`.
    pub fn total(&self) -> f64 {
        let m = self.generalization.len();
        if m == 0 {
            return self.reference;
        }
        self.reference + self.generalization_weight / m as f64 * self.generalization.iter().sum::<f64>()
    }
}

fn branches<'a>(
    batch: &'a GeneralizationBatch,
    running: &'a [Latent],
    t: usize,
    weight: f64,
) -> Vec<PivotBranch<'a>> {
    let m = batch.augmented.len();
    let gen_weight = if m == 0 { 0.0 } else { weight / m as f64 };
    core::iter::once(&batch.reference)
        .chain(&batch.augmented)
        .zip(running)
        .enumerate()
        .map(|(j, (traj, z))| PivotBranch {
            running: z,
            control: &traj.control,
            target: &traj.latents[t - 1],
            weight: if j == 0 { 1.0 } else { gen_weight },
        })
        .collect()
}

fn split(losses: Vec<f64>, weight: f64) -> ObjectiveTerms {
    ObjectiveTerms {
        reference: losses[0],
        generalization: losses[1..].to_vec(),
        generalization_weight: weight,
    }
}

/// Evaluates the joint objective at timestep `t` from the given running
/// latents (reference first) and embeddings.
#[allow(clippy::too_many_arguments)]
pub fn objective_terms<D: Denoiser + ?Sized>(
    batch: &GeneralizationBatch,
    running: &[Latent],
    t: usize,
    unconditional: &[f64],
    conditional: &[f64],
    backend: &D,
    schedule: &NoiseSchedule,
    config: &GuidanceConfig,
) -> Result<ObjectiveTerms> {
    if running.len() != batch.augmented.len() + 1 {
        return Err(contract!(
            "{} running latents for {} branches",
            running.len(),
            batch.augmented.len() + 1
        ));
    }
    let br = branches(batch, running, t, 0.0);
    let (losses, _, _) = pivot_loss(backend, schedule, t, &br, unconditional, conditional, config.guidance_scale, false)?;
    Ok(split(losses, config.generalization_weight))
}

/// Jointly optimizes `(null_t, c_t)` for `t = T..1` on the reference and
/// generalization terms. Every branch's running latent starts at the shared
/// reference endpoint and follows its own control map; its pivots come from
/// its own inversion. `null_init` seeds each `null_t`; without it `null_t`
/// warm-starts from the previous timestep, beginning at the empty
/// embedding. Returns the embeddings and the joint-loss log from `t = T`
/// down.
pub fn optimize_generalizable<D: Denoiser + ?Sized>(
    batch: &GeneralizationBatch,
    c_init: &[f64],
    null_init: Option<&TimestepEmbeddings>,
    backend: &D,
    schedule: &NoiseSchedule,
    config: &GuidanceConfig,
) -> Result<(TimestepEmbeddings, Vec<TimestepLoss>)> {
    config.validate()?;
    let steps = schedule.num_steps();
    if batch.num_steps() != steps {
        return Err(contract!("batch has {} steps, schedule {}", batch.num_steps(), steps));
    }
    require_embedding_gradients(backend)?;
    let d = backend.embedding_dim();
    if c_init.len() != d {
        return Err(contract!("prompt embedding has {} entries, backend expects {}", c_init.len(), d));
    }
    if let Some(init) = null_init {
        init.ensure_fits(schedule, d)?;
    }
    let mut running = vec![batch.shared_start.clone(); batch.augmented.len() + 1];
    let mut params = [backend.empty_embedding(), c_init.to_vec()].concat();
    let mut unconditional = vec![Vec::new(); steps];
    let mut conditional = vec![Vec::new(); steps];
    let mut log = Vec::with_capacity(steps);
    for t in (1..=steps).rev() {
        if let Some(init) = null_init {
            params[..d].copy_from_slice(init.at(t).0);
        }
        if config.conditional_init == ConditionalInit::Prompt {
            params[d..].copy_from_slice(c_init);
        }
        let mut opt = Optimizer::new(config.optimizer, config.gen_lr, 2 * d);
        let mut history = Vec::with_capacity(config.gen_iters + 1);
        let mut best = (f64::INFINITY, params.clone());
        {
            let br = branches(batch, &running, t, config.generalization_weight);
            for _ in 0..config.gen_iters {
                let (u, c) = params.split_at(d);
                let (losses, g_u, g_c) = pivot_loss(backend, schedule, t, &br, u, c, config.guidance_scale, true)?;
                let loss = split(losses, config.generalization_weight).total();
                history.push(loss);
                if loss < best.0 {
                    best = (loss, params.clone());
                }
                opt.step(&mut params, &[g_u, g_c].concat());
            }
        }
        let (u, c) = params.split_at(d);
        let mut end = objective_terms(batch, &running, t, u, c, backend, schedule, config)?.total();
        history.push(end);
        // Keep the best iterate: near the noise floor a last step can lose an ulp.
        if !(end <= best.0) {
            params = best.1;
            end = best.0;
        }
        if !end.is_finite() {
            return Err(Error::Numerical(alloc::format!("joint loss diverged at t = {}", t)));
        }
        let (u, c) = params.split_at(d);
        let level = schedule.level(t)?;
        let trajectories = core::iter::once(&batch.reference).chain(&batch.augmented);
        for (z, traj) in running.iter_mut().zip(trajectories) {
            let eps = cfg_predict(backend, z, level, u, c, Some(&traj.control), config.guidance_scale)?;
            *z = ddim_sample_step(z, &eps, schedule, t)?;
        }
        unconditional[t - 1] = u.to_vec();
        conditional[t - 1] = c.to_vec();
        log.push(TimestepLoss {
            t,
            start: history[0],
            end,
            history,
        });
    }
    Ok((
        TimestepEmbeddings {
            unconditional,
            conditional,
            embedding_dim: d,
            mode: EmbeddingMode::Generalizable,
        },
        log,
    ))
}
