//! Run configuration: one TOML document, every field defaulted.

use std::path::{Path, PathBuf};

use posedance_core::backend::TrainingConfig;
use posedance_core::compose::AugmentationRanges;
use posedance_core::config::{ConditionalInit, OptimizerKind, DEFAULT_NUM_STEPS};
use posedance_core::guidance::{BaseStep, FrameOptions, GradientMode};
use posedance_core::pose::Canvas;
use posedance_core::toy::ToyWorld;
use posedance_core::{GuidanceConfig, NoiseSchedule, ScheduleProfile};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Null-text optimization of the unconditional embedding only.
    Null,
    /// Joint embeddings over the reference and its augmentations.
    #[default]
    Generalizable,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub profile: String,
    pub steps: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            profile: ScheduleProfile::default().as_str().to_string(),
            steps: DEFAULT_NUM_STEPS,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    #[default]
    GradientDescent,
    Adam,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CondInit {
    #[default]
    WarmStart,
    Prompt,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Gradient {
    #[default]
    FixedEpsilon,
    FullBackprop,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Base {
    #[default]
    Ddim,
    ReverseMean,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceSection {
    pub guidance_scale: f64,
    pub base_step_size: f64,
    pub background_weight: f64,
    pub keypoint_weight: f64,
    pub generalization_weight: f64,
    pub null_lr: f64,
    pub null_iters: usize,
    pub gen_lr: f64,
    pub gen_iters: usize,
    pub optimizer: Optimizer,
    pub conditional_init: CondInit,
    pub gradient: Gradient,
    pub base_step: Base,
}

impl Default for GuidanceSection {
    fn default() -> Self {
        let g = GuidanceConfig::default();
        Self {
            guidance_scale: g.guidance_scale,
            base_step_size: g.base_step_size,
            background_weight: g.background_weight,
            keypoint_weight: g.keypoint_weight,
            generalization_weight: g.generalization_weight,
            null_lr: g.null_lr,
            null_iters: g.null_iters,
            gen_lr: g.gen_lr,
            gen_iters: g.gen_iters,
            optimizer: Optimizer::default(),
            conditional_init: CondInit::default(),
            gradient: Gradient::default(),
            base_step: Base::default(),
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSection {
    /// Number of augmented scenes `M`.
    pub count: usize,
    pub scale: [f64; 2],
    /// Rotation range in degrees.
    pub rotation_deg: [f64; 2],
    pub max_attempts: usize,
}

impl Default for AugmentationSection {
    fn default() -> Self {
        let r = AugmentationRanges::default();
        Self {
            count: GuidanceConfig::default().num_augmented,
            scale: [r.scale.0, r.scale.1],
            rotation_deg: [r.rotation.0, r.rotation.1],
            max_attempts: r.max_attempts,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ToySection {
    pub width: usize,
    pub height: usize,
    pub persons: usize,
    pub backgrounds: u64,
    pub embedding_dim: usize,
    pub dataset_size: usize,
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub time_features: usize,
    pub embedding_drop: f64,
    pub control_drop: f64,
}

impl Default for ToySection {
    fn default() -> Self {
        let w = ToyWorld::default();
        let t = TrainingConfig::default();
        Self {
            width: w.canvas.width,
            height: w.canvas.height,
            persons: w.persons,
            backgrounds: w.backgrounds,
            embedding_dim: w.embedding_dim,
            dataset_size: 1024,
            train_steps: 3000,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            hidden: t.hidden,
            time_features: t.time_features,
            embedding_drop: t.embedding_drop,
            control_drop: t.control_drop,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: Mode,
    /// Frames to generate; all frames of the pose sequence when absent.
    pub frames: Option<usize>,
    /// Frame-level worker threads.
    pub workers: usize,
    pub guidance_enabled: bool,
    pub fps: f64,
    pub schedule: ScheduleSection,
    pub guidance: GuidanceSection,
    pub augmentation: AugmentationSection,
    pub toy: ToySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: Mode::default(),
            frames: None,
            workers: 1,
            guidance_enabled: true,
            fps: 8.0,
            schedule: ScheduleSection::default(),
            guidance: GuidanceSection::default(),
            augmentation: AugmentationSection::default(),
            toy: ToySection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::format(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        self.guidance_config().validate()?;
        self.augmentation_ranges().validate()?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.toy.persons == 0 || self.toy.width == 0 || self.toy.height == 0 {
            return Err(Error::Config("toy world needs a canvas and at least one person".into()));
        }
        Ok(())
    }

    /// Canonical TOML text; its hash is the config digest.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("run configs serialize")
    }

    /// Hex SHA-256 of [`RunConfig::canonical`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let profile: ScheduleProfile = self.schedule.profile.parse()?;
        Ok(NoiseSchedule::new(self.schedule.steps, profile)?)
    }

    pub fn guidance_config(&self) -> GuidanceConfig {
        let g = &self.guidance;
        let mut out = GuidanceConfig {
            guidance_scale: g.guidance_scale,
            base_step_size: g.base_step_size,
            background_weight: g.background_weight,
            keypoint_weight: g.keypoint_weight,
            generalization_weight: g.generalization_weight,
            num_augmented: self.augmentation.count,
            null_lr: g.null_lr,
            null_iters: g.null_iters,
            gen_lr: g.gen_lr,
            gen_iters: g.gen_iters,
            optimizer: match g.optimizer {
                Optimizer::GradientDescent => OptimizerKind::GradientDescent,
                Optimizer::Adam => OptimizerKind::Adam,
            },
            conditional_init: match g.conditional_init {
                CondInit::WarmStart => ConditionalInit::WarmStart,
                CondInit::Prompt => ConditionalInit::Prompt,
            },
        };
        if !self.guidance_enabled {
            out.background_weight = 0.0;
            out.keypoint_weight = 0.0;
        }
        out
    }

    pub fn frame_options(&self) -> FrameOptions {
        FrameOptions {
            gradient: match self.guidance.gradient {
                Gradient::FixedEpsilon => GradientMode::FixedEpsilon,
                Gradient::FullBackprop => GradientMode::FullBackprop,
            },
            base_step: match self.guidance.base_step {
                Base::Ddim => BaseStep::Ddim,
                Base::ReverseMean => BaseStep::ReverseMean,
            },
        }
    }

    pub fn augmentation_ranges(&self) -> AugmentationRanges {
        let a = &self.augmentation;
        AugmentationRanges {
            scale: (a.scale[0], a.scale[1]),
            rotation: (a.rotation_deg[0], a.rotation_deg[1]),
            max_attempts: a.max_attempts,
        }
    }

    pub fn world(&self) -> ToyWorld {
        ToyWorld {
            canvas: Canvas::new(self.toy.width, self.toy.height),
            persons: self.toy.persons,
            backgrounds: self.toy.backgrounds,
            embedding_dim: self.toy.embedding_dim,
        }
    }

    pub fn training_config(&self) -> TrainingConfig {
        let t = &self.toy;
        TrainingConfig {
            steps: t.train_steps,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            hidden: t.hidden,
            time_features: t.time_features,
            seed: self.seed,
            embedding_drop: t.embedding_drop,
            control_drop: t.control_drop,
            ..TrainingConfig::default()
        }
    }
}

/// Default output root: `$POSEDANCE_OUT`, else `posedance-runs`.
pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("posedance-runs"))
}

pub const OUTPUT_ROOT_ENV: &str = "POSEDANCE_OUT";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reported_settings() {
        let c = RunConfig::default();
        let g = c.guidance_config();
        assert_eq!((g.base_step_size, g.background_weight, g.keypoint_weight), (10.0, 100.0, 2000.0));
        assert_eq!((g.num_augmented, g.gen_lr, g.gen_iters, g.null_lr, g.null_iters), (16, 0.1, 100, 0.01, 50));
        assert_eq!(g.guidance_scale, 7.5);
        assert_eq!(c.schedule().unwrap().num_steps(), 50);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn partial_files_fill_in_defaults() {
        let text = "seed = 9\n[guidance]\nnull_iters = 3\n";
        let c: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.guidance.null_iters, 3);
        assert_eq!(c.guidance.gen_iters, 100);
        let back: RunConfig = toml::from_str(&c.canonical()).unwrap();
        assert_eq!(back, c);
        assert!(toml::from_str::<RunConfig>("sed = 1").is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.guidance.keypoint_weight = 1999.0;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn disabling_guidance_zeroes_the_cost_weights() {
        let c = RunConfig {
            guidance_enabled: false,
            ..Default::default()
        };
        let g = c.guidance_config();
        assert_eq!((g.background_weight, g.keypoint_weight), (0.0, 0.0));
        assert_eq!(g.base_step_size, 10.0);
    }
}
