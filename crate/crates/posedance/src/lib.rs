//! Files, configuration and pipeline orchestration around
//! [`posedance_core`].
//!
//! * [`images`], [`poses`], [`scene`]: PNG images and masks, pose sequence
//!   documents, scene manifests and composed-scene directories.
//! * [`formats`]: embeddings, checkpoint and latent binaries.
//! * [`config`] and [`manifest`]: run configuration, digests, output
//!   manifests and JSON-lines logs.
//! * [`pipeline`]: the compose / train-toy / invert / generate / evaluate
//!   stages used by the `posedance` binary.

pub mod config;
mod error;
pub mod formats;
pub mod images;
pub mod manifest;
pub mod pipeline;
pub mod poses;
pub mod scene;

pub use error::{Error, Result};
