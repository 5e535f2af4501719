//! Pipeline hyperparameters.

use crate::error::{Error, Result};

/// Number of inversion and sampling steps used by default.
pub const DEFAULT_NUM_STEPS: usize = 50;

/// Update rule used by the embedding optimizers.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum OptimizerKind {
    /// Plain gradient descent at the configured learning rate.
    #[default]
    GradientDescent,
    /// Adaptive moments with the usual `(0.9, 0.999, 1e-8)` constants.
    Adam,
}

/// How the conditional embedding `c_t` is initialised at each timestep of
/// the generalizable optimization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ConditionalInit {
    /// Start from the optimum of the previous (noisier) timestep.
    #[default]
    WarmStart,
    /// Restart every timestep from the prompt embedding.
    Prompt,
}

/// Guidance, optimization and sampling weights.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceConfig {
    /// Classifier-free guidance scale.
    pub guidance_scale: f64,
    /// Base step size of consistency guidance; the applied step is this over the cost.
    pub base_step_size: f64,
    pub background_weight: f64,
    pub keypoint_weight: f64,
    /// Weight of the augmented-scene term in the generalizable objective.
    pub generalization_weight: f64,
    /// Number of augmented scenes.
    pub num_augmented: usize,
    pub null_lr: f64,
    pub null_iters: usize,
    pub gen_lr: f64,
    pub gen_iters: usize,
    pub optimizer: OptimizerKind,
    pub conditional_init: ConditionalInit,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            guidance_scale: 7.5,
            base_step_size: 10.0,
            background_weight: 100.0,
            keypoint_weight: 2000.0,
            generalization_weight: 1.0,
            num_augmented: 16,
            null_lr: 0.01,
            null_iters: 50,
            gen_lr: 0.1,
            gen_iters: 100,
            optimizer: OptimizerKind::GradientDescent,
            conditional_init: ConditionalInit::WarmStart,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("guidance_scale", self.guidance_scale),
            ("background_weight", self.background_weight),
            ("keypoint_weight", self.keypoint_weight),
            ("generalization_weight", self.generalization_weight),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(alloc::format!("{} must be >= 0, got {}", name, v)));
            }
        }
        let positive = [
            ("base_step_size", self.base_step_size),
            ("null_lr", self.null_lr),
            ("gen_lr", self.gen_lr),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(alloc::format!("{} must be > 0, got {}", name, v)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reported_settings() {
        let c = GuidanceConfig::default();
        assert_eq!(c.guidance_scale, 7.5);
        assert_eq!(
            (c.generalization_weight, c.base_step_size, c.background_weight, c.keypoint_weight),
            (1.0, 10.0, 100.0, 2000.0)
        );
        assert_eq!((c.num_augmented, c.gen_lr, c.gen_iters), (16, 0.1, 100));
        assert_eq!((c.null_lr, c.null_iters), (0.01, 50));
        assert_eq!(DEFAULT_NUM_STEPS, 50);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let c = GuidanceConfig {
            base_step_size: 0.0,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = GuidanceConfig {
            keypoint_weight: -1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
