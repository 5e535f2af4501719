//! Pose-aware DDIM inversion and null-text optimization.
//!
//! Embedding arrays are indexed by `t - 1` for sampler timestep `t`.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::backend::{Autoencoder, ControlMap, Denoiser, GradientMechanism};
use crate::config::GuidanceConfig;
use crate::diffusion::{cfg_epsilon, ddim_coefficients, ddim_invert_step, ddim_sample_step};
use crate::error::{contract, Error, Result};
use crate::optim::Optimizer;
use crate::schedule::{NoiseLevel, NoiseSchedule};
use crate::tensor::{Image, Latent};

#[derive(Clone, Debug, PartialEq)]
pub struct InversionTrajectory {
    /// `z_0 ..= z_T`.
    pub latents: Vec<Latent>,
    pub control: ControlMap,
    pub text_embedding: Vec<f64>,
}

impl InversionTrajectory {
    pub fn num_steps(&self) -> usize {
        self.latents.len().saturating_sub(1)
    }

    pub fn start(&self) -> &Latent {
        &self.latents[self.num_steps()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingMode {
    /// Only the unconditional embeddings were optimized.
    NullOnly,
    /// Unconditional and conditional embeddings were optimized jointly.
    Generalizable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimestepEmbeddings {
    pub unconditional: Vec<Vec<f64>>,
    pub conditional: Vec<Vec<f64>>,
    pub embedding_dim: usize,
    pub mode: EmbeddingMode,
}

impl TimestepEmbeddings {
    /// The same pair at every timestep.
    pub fn constant(num_steps: usize, unconditional: &[f64], conditional: &[f64], mode: EmbeddingMode) -> Self {
        Self {
            unconditional: vec![unconditional.to_vec(); num_steps],
            conditional: vec![conditional.to_vec(); num_steps],
            embedding_dim: unconditional.len(),
            mode,
        }
    }

    pub fn num_steps(&self) -> usize {
        self.unconditional.len()
    }

    /// `(unconditional, conditional)` for sampler timestep `t` in `1..=T`.
    pub fn at(&self, t: usize) -> (&[f64], &[f64]) {
        (&self.unconditional[t - 1], &self.conditional[t - 1])
    }

    pub fn validate(&self) -> Result<()> {
        if self.conditional.len() != self.unconditional.len() {
            return Err(contract!(
                "{} unconditional vs {} conditional embeddings",
                self.unconditional.len(),
                self.conditional.len()
            ));
        }
        for v in self.unconditional.iter().chain(&self.conditional) {
            if v.len() != self.embedding_dim {
                return Err(contract!("embedding of length {} in a {}-dim set", v.len(), self.embedding_dim));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical("non-finite embedding entry".to_string()));
            }
        }
        Ok(())
    }

    pub fn ensure_fits(&self, schedule: &NoiseSchedule, embedding_dim: usize) -> Result<()> {
        self.validate()?;
        if self.num_steps() != schedule.num_steps() {
            return Err(contract!(
                "{} embedding pairs for a {}-step schedule",
                self.num_steps(),
                schedule.num_steps()
            ));
        }
        if self.embedding_dim != embedding_dim {
            return Err(contract!(
                "embeddings are {}-dim, backend expects {}",
                self.embedding_dim,
                embedding_dim
            ));
        }
        Ok(())
    }
}

/// Start and end of the optimized loss at one timestep, with the loss
/// recorded before every iteration and after the last.
#[derive(Clone, Debug, PartialEq)]
pub struct TimestepLoss {
    pub t: usize,
    pub start: f64,
    pub end: f64,
    pub history: Vec<f64>,
}

/// Classifier-free guided noise prediction.
pub fn cfg_predict<D: Denoiser + ?Sized>(
    backend: &D,
    z: &Latent,
    level: NoiseLevel,
    unconditional: &[f64],
    conditional: &[f64],
    control: Option<&ControlMap>,
    guidance_scale: f64,
) -> Result<Latent> {
    let cond = backend.predict(z, level, conditional, control)?;
    let uncond = backend.predict(z, level, unconditional, control)?;
    cfg_epsilon(&cond, &uncond, guidance_scale)
}

/// Cap on the fixed-point refinements applied to every inversion step by
/// [`pose_aware_invert`].
pub const DEFAULT_REFINEMENTS: usize = 32;

/// DDIM inversion under the conditional prediction alone, with up to
/// [`DEFAULT_REFINEMENTS`] fixed-point refinements per step.
pub fn pose_aware_invert<D: Denoiser + ?Sized, A: Autoencoder + ?Sized>(
    x0: &Image,
    c: &[f64],
    control: &ControlMap,
    backend: &D,
    autoencoder: &A,
    schedule: &NoiseSchedule,
) -> Result<InversionTrajectory> {
    pose_aware_invert_refined(x0, c, control, backend, autoencoder, schedule, DEFAULT_REFINEMENTS)
}

/// DDIM inversion under the conditional prediction alone.
///
/// The step from `t` to `t + 1` first evaluates the denoiser at `z_t` with
/// the noise level of `t + 1`. Each refinement then re-evaluates it at the
/// current `z_{t+1}` estimate, converging to the point the sampling step
/// maps back onto `z_t`. Refinement stops early once the update vanishes or
/// starts growing. Zero refinements give plain DDIM inversion.
pub fn pose_aware_invert_refined<D: Denoiser + ?Sized, A: Autoencoder + ?Sized>(
    x0: &Image,
    c: &[f64],
    control: &ControlMap,
    backend: &D,
    autoencoder: &A,
    schedule: &NoiseSchedule,
    refinements: usize,
) -> Result<InversionTrajectory> {
    let z0 = autoencoder.encode(x0)?;
    backend.check_inputs(&z0, c, Some(control))?;
    let mut latents = Vec::with_capacity(schedule.num_steps() + 1);
    latents.push(z0);
    for t in 0..schedule.num_steps() {
        let level = schedule.level(t + 1)?;
        let z = &latents[t];
        let eps = backend.predict(z, level, c, Some(control))?;
        let mut next = ddim_invert_step(z, &eps, schedule, t)?;
        let mut last_move = f64::INFINITY;
        for _ in 0..refinements {
            let eps = backend.predict(&next, level, c, Some(control))?;
            let refined = ddim_invert_step(z, &eps, schedule, t)?;
            let moved = refined.max_abs_diff(&next)?;
            if !(moved < last_move) {
                break;
            }
            next = refined;
            last_move = moved;
            if moved <= 1e-14 * (1.0 + next.max_abs()) {
                break;
            }
        }
        latents.push(next);
    }
    Ok(InversionTrajectory {
        latents,
        control: control.clone(),
        text_embedding: c.to_vec(),
    })
}

/// Runs the guided DDIM sampling loop from `z_T` and decodes.
pub fn reconstruct<D: Denoiser + ?Sized, A: Autoencoder + ?Sized>(
    z_t: &Latent,
    embeddings: &TimestepEmbeddings,
    control: &ControlMap,
    backend: &D,
    autoencoder: &A,
    schedule: &NoiseSchedule,
    config: &GuidanceConfig,
) -> Result<Image> {
    embeddings.ensure_fits(schedule, backend.embedding_dim())?;
    let mut z = z_t.clone();
    for t in (1..=schedule.num_steps()).rev() {
        let (u, c) = embeddings.at(t);
        let eps = cfg_predict(backend, &z, schedule.level(t)?, u, c, Some(control), config.guidance_scale)?;
        z = ddim_sample_step(&z, &eps, schedule, t)?;
    }
    autoencoder.decode(&z)
}

/// Squared distance between a sampled latent and its pivot, the loss
/// the embedding optimizers minimize.
pub fn pivot_distance(z: &Latent, pivot: &Latent) -> Result<f64> {
    Ok(z.sub(pivot)?.norm_sq())
}

pub(crate) fn require_embedding_gradients<D: Denoiser + ?Sized>(backend: &D) -> Result<()> {
    if backend.gradient_mechanism() == GradientMechanism::None {
        return Err(Error::Capability(
            "embedding optimization needs a backend with gradients".to_string(),
        ));
    }
    Ok(())
}

/// One branch of a pivot-matching objective at timestep `t`: the running
/// latent, its control map and the pivot it should reach.
pub(crate) struct PivotBranch<'a> {
    pub running: &'a Latent,
    pub control: &'a ControlMap,
    pub target: &'a Latent,
    pub weight: f64,
}

/// Per-branch squared distance `|target_j - ddim(running_j, cfg eps)|^2`
/// and the gradients of their `w_j`-weighted sum with respect to the
/// unconditional and conditional embeddings.
#[allow(clippy::too_many_arguments)]
pub(crate) fn pivot_loss<D: Denoiser + ?Sized>(
    backend: &D,
    schedule: &NoiseSchedule,
    t: usize,
    branches: &[PivotBranch<'_>],
    unconditional: &[f64],
    conditional: &[f64],
    guidance_scale: f64,
    want_conditional_grad: bool,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let level = schedule.level(t)?;
    let (a, b) = ddim_coefficients(schedule, t, t - 1);
    let w = guidance_scale;
    let d = unconditional.len();
    let mut g_u = vec![0.0; d];
    let mut g_c = vec![0.0; d];
    let mut losses = Vec::with_capacity(branches.len());
    for br in branches {
        let cond = backend.predict(br.running, level, conditional, Some(br.control))?;
        let uncond = backend.predict(br.running, level, unconditional, Some(br.control))?;
        let eps = cfg_epsilon(&cond, &uncond, w)?;
        let pred = br.running.lincomb(a, &eps, b)?;
        let r = pred.sub(br.target)?;
        losses.push(r.norm_sq());
        if br.weight == 0.0 {
            continue;
        }
        let g = 2.0 * b * br.weight;
        if w != 1.0 {
            let (_, vjp) = backend.vjp(br.running, level, unconditional, Some(br.control), &r.scale(g * (1.0 - w)))?;
            g_u.iter_mut().zip(&vjp.embedding).for_each(|(x, y)| *x += y);
        }
        if want_conditional_grad && w != 0.0 {
            let (_, vjp) = backend.vjp(br.running, level, conditional, Some(br.control), &r.scale(g * w))?;
            g_c.iter_mut().zip(&vjp.embedding).for_each(|(x, y)| *x += y);
        }
    }
    Ok((losses, g_u, g_c))
}

/// Optimizes one unconditional embedding per timestep so guided DDIM
/// sampling from `z_T` retraces the inversion pivots. Returns the
/// embeddings and the per-timestep loss log, ordered from `t = T` down.
pub fn optimize_null_text<D: Denoiser + ?Sized>(
    traj: &InversionTrajectory,
    backend: &D,
    schedule: &NoiseSchedule,
    config: &GuidanceConfig,
) -> Result<(TimestepEmbeddings, Vec<TimestepLoss>)> {
    config.validate()?;
    if traj.num_steps() != schedule.num_steps() {
        return Err(contract!(
            "trajectory has {} steps, schedule {}",
            traj.num_steps(),
            schedule.num_steps()
        ));
    }
    require_embedding_gradients(backend)?;
    let c = &traj.text_embedding;
    let d = backend.embedding_dim();
    let mut null = backend.empty_embedding();
    let mut z_hat = traj.start().clone();
    let mut unconditional = vec![Vec::new(); schedule.num_steps()];
    let mut log = Vec::with_capacity(schedule.num_steps());
    for t in (1..=schedule.num_steps()).rev() {
        let branch = [PivotBranch {
            running: &z_hat,
            control: &traj.control,
            target: &traj.latents[t - 1],
            weight: 1.0,
        }];
        let mut opt = Optimizer::new(config.optimizer, config.null_lr, d);
        let mut history = Vec::with_capacity(config.null_iters + 1);
        let mut best = (f64::INFINITY, null.clone());
        for _ in 0..config.null_iters {
            let (loss, g_u, _) = pivot_loss(backend, schedule, t, &branch, &null, c, config.guidance_scale, false)?;
            history.push(loss[0]);
            if loss[0] < best.0 {
                best = (loss[0], null.clone());
            }
            opt.step(&mut null, &g_u);
        }
        let eps = cfg_predict(backend, &z_hat, schedule.level(t)?, &null, c, Some(&traj.control), config.guidance_scale)?;
        let mut next = ddim_sample_step(&z_hat, &eps, schedule, t)?;
        let mut end = pivot_distance(&next, &traj.latents[t - 1])?;
        history.push(end);
        // Keep the best iterate: near the noise floor a last step can lose an ulp.
        if best.0 < end {
            null = best.1;
            let eps = cfg_predict(backend, &z_hat, schedule.level(t)?, &null, c, Some(&traj.control), config.guidance_scale)?;
            next = ddim_sample_step(&z_hat, &eps, schedule, t)?;
            end = pivot_distance(&next, &traj.latents[t - 1])?;
        }
        if !end.is_finite() {
            return Err(Error::Numerical(alloc::format!("null-text loss diverged at t = {}", t)));
        }
        log.push(TimestepLoss {
            t,
            start: history[0],
            end,
            history,
        });
        unconditional[t - 1] = null.clone();
        z_hat = next;
    }
    Ok((
        TimestepEmbeddings {
            unconditional,
            conditional: vec![c.clone(); schedule.num_steps()],
            embedding_dim: d,
            mode: EmbeddingMode::NullOnly,
        },
        log,
    ))
}
