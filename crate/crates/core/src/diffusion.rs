//! Deterministic diffusion steps.
//!
//! All functions are pure. Cumulative alphas come from a [`NoiseSchedule`];
//! the DDIM steps use the cumulative product throughout and the guided
//! reverse step uses the per-step ratio.

use libm::sqrt;

use crate::config::GuidanceConfig;
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::Latent;

/// `guidance_scale * eps_cond + (1 - guidance_scale) * eps_uncond`.
pub fn cfg_epsilon(eps_cond: &Latent, eps_uncond: &Latent, guidance_scale: f64) -> Result<Latent> {
    eps_cond.lincomb(guidance_scale, eps_uncond, 1.0 - guidance_scale)
}

/// Coefficients `(a, b)` of a DDIM transition `z_to = a * z_from + b * eps`
/// between arbitrary sampler indices.
#[inline]
pub fn ddim_coefficients(schedule: &NoiseSchedule, from: usize, to: usize) -> (f64, f64) {
    let (ab_from, ab_to) = (schedule.alpha_bar(from), schedule.alpha_bar(to));
    let a = sqrt(ab_to / ab_from);
    let b = sqrt(ab_to) * (sqrt(1.0 / ab_to - 1.0) - sqrt(1.0 / ab_from - 1.0));
    (a, b)
}

/// One DDIM inversion step from `t` to `t + 1`, for `0 <= t < T`.
pub fn ddim_invert_step(
    z_t: &Latent,
    eps_hat: &Latent,
    schedule: &NoiseSchedule,
    t: usize,
) -> Result<Latent> {
    if t >= schedule.num_steps() {
        return Err(Error::Range(alloc::format!(
            "inversion step {} outside 0..{}",
            t,
            schedule.num_steps()
        )));
    }
    let (a, b) = ddim_coefficients(schedule, t, t + 1);
    z_t.lincomb(a, eps_hat, b)
}

/// One deterministic DDIM sampling step from `t` to `t - 1`, for `1 <= t <= T`.
pub fn ddim_sample_step(
    z_t: &Latent,
    eps_hat: &Latent,
    schedule: &NoiseSchedule,
    t: usize,
) -> Result<Latent> {
    if t == 0 || t > schedule.num_steps() {
        return Err(Error::Range(alloc::format!(
            "sampling step {} outside 1..={}",
            t,
            schedule.num_steps()
        )));
    }
    let (a, b) = ddim_coefficients(schedule, t, t - 1);
    z_t.lincomb(a, eps_hat, b)
}

/// Clean-latent estimate `z_t / sqrt(ab) - sqrt(1 - ab) / sqrt(ab) * eps_hat`.
pub fn tweedie_estimate(
    z_t: &Latent,
    eps_hat: &Latent,
    schedule: &NoiseSchedule,
    t: usize,
) -> Result<Latent> {
    if t > schedule.num_steps() {
        return Err(Error::Range(alloc::format!(
            "timestep {} outside 0..={}",
            t,
            schedule.num_steps()
        )));
    }
    let ab = schedule.alpha_bar(t);
    if ab <= 0.0 {
        return Err(Error::Singularity(alloc::format!(
            "cumulative alpha is zero at timestep {}",
            t
        )));
    }
    let s = sqrt(ab);
    z_t.lincomb(1.0 / s, eps_hat, -sqrt(1.0 - ab) / s)
}

/// Mean of the reverse transition written with the per-step alpha,
/// `(z_t - (1 - alpha_t) / sqrt(1 - ab_t) * eps) / sqrt(alpha_t)`, with no
/// noise added.
pub fn reverse_mean_step(
    z_t: &Latent,
    eps_hat: &Latent,
    schedule: &NoiseSchedule,
    t: usize,
) -> Result<Latent> {
    if t == 0 || t > schedule.num_steps() {
        return Err(Error::Range(alloc::format!(
            "reverse step {} outside 1..={}",
            t,
            schedule.num_steps()
        )));
    }
    let alpha = schedule.alpha(t);
    let ab = schedule.alpha_bar(t);
    let inv = 1.0 / sqrt(alpha);
    z_t.lincomb(inv, eps_hat, -inv * (1.0 - alpha) / sqrt(1.0 - ab))
}

/// Subtracts `(step / cost) * gradient` from `z`.
///
/// Returns the applied scale `step / cost` (zero when the gradient vanishes).
pub fn apply_cost_gradient(
    z: &mut Latent,
    cost_gradient: &Latent,
    cost_value: f64,
    base_step_size: f64,
) -> Result<f64> {
    z.ensure_same_shape(cost_gradient, "cost gradient")?;
    if cost_gradient.as_slice().iter().all(|&g| g == 0.0) {
        return Ok(0.0);
    }
    if !(cost_value > 0.0) {
        return Err(Error::Guidance(alloc::format!(
            "dynamic step needs a positive cost, got {}",
            cost_value
        )));
    }
    let scale = base_step_size / cost_value;
    z.axpy(-scale, cost_gradient)?;
    Ok(scale)
}

/// Reverse step followed by a cost-gradient correction with dynamic step
/// size `base_step_size / cost_value`.
#[allow(clippy::too_many_arguments)]
pub fn guided_reverse_step(
    z_t: &Latent,
    eps_hat: &Latent,
    cost_gradient: &Latent,
    cost_value: f64,
    schedule: &NoiseSchedule,
    t: usize,
    config: &GuidanceConfig,
) -> Result<Latent> {
    let mut z = reverse_mean_step(z_t, eps_hat, schedule, t)?;
    apply_cost_gradient(&mut z, cost_gradient, cost_value, config.base_step_size)?;
    Ok(z)
}
