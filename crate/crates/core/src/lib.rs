//! Pose-conditioned zero-shot generation toolkit.
//!
//! The crate is `no_std` and only needs an allocator. It carries the whole
//! numerical pipeline:
//!
//! * [`schedule`] and [`diffusion`]: noise schedules, DDIM inversion and
//!   sampling steps, classifier-free guidance, Tweedie estimates and the
//!   guided reverse step.
//! * [`backend`]: the denoiser / autoencoder abstraction with an analytic
//!   Gaussian backend, a trainable feed-forward toy denoiser and gradient
//!   checking.
//! * [`pose`] and [`compose`]: 18-keypoint skeletons, control-map
//!   rasterization, scene composition and compositional augmentation.
//! * [`inversion`], [`embeddings`] and [`guidance`]: pose-aware inversion
//!   with null-text optimization, generalizable per-timestep embeddings and
//!   consistency-guided frame generation.
//! * [`metrics`]: OKS, mAP over OKS thresholds, embedding similarity and the
//!   harmonic mean score.
//!
//! File formats, images on disk and the command line live in the companion
//! `posedance` crate.
#![no_std]

extern crate alloc;

pub mod backend;
pub mod compose;
pub mod config;
pub mod diffusion;
pub mod embeddings;
mod error;
pub mod guidance;
pub mod inversion;
pub mod metrics;
pub mod optim;
pub mod pose;
pub mod schedule;
pub mod tensor;
pub mod toy;

pub use config::GuidanceConfig;
pub use error::{Error, Result};
pub use schedule::{NoiseLevel, NoiseSchedule, ScheduleProfile};
pub use tensor::{Image, Latent, Mask, Tensor};
