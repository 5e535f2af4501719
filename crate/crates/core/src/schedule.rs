//! Noise schedules.
//!
//! Sampler indices run over `1..=T`; index `0` is the clean data with a
//! cumulative alpha of exactly one. `per_step_alpha(t)` is the ratio
//! `alpha_bar(t) / alpha_bar(t - 1)`.

use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

/// Length of the training grid behind the scaled-linear profile.
pub const TRAINING_STEPS: usize = 1000;
const BETA_START: f64 = 0.00085;
const BETA_END: f64 = 0.012;
const TOY_FINAL_ALPHA_BAR: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScheduleProfile {
    /// 1000-step scaled-linear beta grid, subsampled uniformly.
    #[default]
    ScaledLinear1000,
    /// Cumulative alpha decreasing linearly from 1 to 0.01.
    LinearToy,
}

impl ScheduleProfile {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScheduleProfile::ScaledLinear1000 => "scaled-linear-1000-subsampled",
            ScheduleProfile::LinearToy => "linear-toy",
        }
    }
}

impl fmt::Display for ScheduleProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScheduleProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaled-linear-1000-subsampled" => Ok(ScheduleProfile::ScaledLinear1000),
            "linear-toy" => Ok(ScheduleProfile::LinearToy),
            other => Err(Error::Config(alloc::format!(
                "unknown schedule profile `{}`",
                other
            ))),
        }
    }
}

/// The noise level of one sampler index, as handed to denoisers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseLevel {
    /// Sampler index in `0..=T`.
    pub index: usize,
    /// Timestep on the underlying training grid (used for time features).
    pub training_timestep: usize,
    pub alpha_bar: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    profile: ScheduleProfile,
    per_step_alpha: Vec<f64>,
    cumulative_alpha: Vec<f64>,
    timestep_map: Vec<usize>,
}

fn scaled_linear_alpha_bars() -> Vec<f64> {
    let (lo, hi) = (libm::sqrt(BETA_START), libm::sqrt(BETA_END));
    let mut prod = 1.0;
    (0..TRAINING_STEPS)
        .map(|i| {
            let b = lo + (hi - lo) * i as f64 / (TRAINING_STEPS - 1) as f64;
            prod *= 1.0 - b * b;
            prod
        })
        .collect()
}

impl NoiseSchedule {
    pub fn new(num_steps: usize, profile: ScheduleProfile) -> Result<Self> {
        if num_steps == 0 {
            return Err(Error::Range("schedule needs at least one step".to_string()));
        }
        if num_steps > TRAINING_STEPS {
            return Err(Error::Range(alloc::format!(
                "{} steps exceed the {}-step training grid",
                num_steps,
                TRAINING_STEPS
            )));
        }
        let timestep_map: Vec<usize> = (1..=num_steps)
            .map(|t| t * TRAINING_STEPS / num_steps - 1)
            .collect();
        let mut cumulative_alpha = Vec::with_capacity(num_steps + 1);
        cumulative_alpha.push(1.0);
        match profile {
            ScheduleProfile::ScaledLinear1000 => {
                let grid = scaled_linear_alpha_bars();
                cumulative_alpha.extend(timestep_map.iter().map(|&k| grid[k]));
            }
            ScheduleProfile::LinearToy => {
                cumulative_alpha.extend((1..=num_steps).map(|t| {
                    1.0 - (1.0 - TOY_FINAL_ALPHA_BAR) * t as f64 / num_steps as f64
                }));
            }
        }
        let per_step_alpha = cumulative_alpha
            .windows(2)
            .map(|w| w[1] / w[0])
            .collect();
        Ok(Self {
            profile,
            per_step_alpha,
            cumulative_alpha,
            timestep_map,
        })
    }

    pub fn profile(&self) -> ScheduleProfile {
        self.profile
    }

    /// `T`, the number of sampler steps.
    pub fn num_steps(&self) -> usize {
        self.per_step_alpha.len()
    }

    /// Cumulative alpha for `t` in `0..=T`; panics outside that range.
    #[inline]
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.cumulative_alpha[t]
    }

    /// Per-step alpha for `t` in `1..=T`; panics outside that range.
    #[inline]
    pub fn alpha(&self, t: usize) -> f64 {
        self.per_step_alpha[t - 1]
    }

    pub fn cumulative_alphas(&self) -> &[f64] {
        &self.cumulative_alpha
    }

    pub fn per_step_alphas(&self) -> &[f64] {
        &self.per_step_alpha
    }

    /// Training-grid timestep behind sampler index `t` in `1..=T`.
    pub fn training_timestep(&self, t: usize) -> usize {
        self.timestep_map[t - 1]
    }

    pub fn timestep_map(&self) -> &[usize] {
        &self.timestep_map
    }

    pub fn level(&self, t: usize) -> Result<NoiseLevel> {
        if t > self.num_steps() {
            return Err(Error::Range(alloc::format!(
                "timestep {} outside 0..={}",
                t,
                self.num_steps()
            )));
        }
        Ok(NoiseLevel {
            index: t,
            training_timestep: if t == 0 { 0 } else { self.training_timestep(t) },
            alpha_bar: self.alpha_bar(t),
        })
    }
}
