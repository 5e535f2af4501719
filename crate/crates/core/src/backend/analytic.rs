//! Closed-form noise predictor for an isotropic Gaussian data distribution.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;

use super::{ControlMap, Denoiser, GradientMechanism, Vjp};
use crate::error::{Error, Result};
use crate::schedule::{NoiseLevel, NoiseSchedule};
use crate::tensor::{Latent, Tensor};

/// Data distribution `N(mean, variance * I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianWorldSpec {
    pub mean: Tensor,
    pub variance: f64,
}

impl GaussianWorldSpec {
    pub fn new(mean: Tensor, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::Config(alloc::format!(
                "Gaussian world variance must be positive, got {}",
                variance
            )));
        }
        Ok(Self { mean, variance })
    }

    /// Prediction `eps = gain * z + offset` at cumulative alpha `ab`.
    fn affine(&self, ab: f64) -> Result<(f64, f64)> {
        if ab >= 1.0 {
            return Err(Error::Singularity(
                "optimal noise prediction is undefined at the clean level".to_string(),
            ));
        }
        let s = sqrt(ab);
        let k = s * self.variance / (ab * self.variance + 1.0 - ab);
        let d = sqrt(1.0 - ab);
        // eps = (z - s * (mean + k (z - s mean))) / d
        let gain = (1.0 - s * k) / d;
        let mean_coef = (-s + s * k * s) / d;
        Ok((gain, mean_coef))
    }

    fn predict_at(&self, z: &Latent, ab: f64) -> Result<Latent> {
        z.ensure_same_shape(&self.mean, "Gaussian world latent")?;
        let (gain, mean_coef) = self.affine(ab)?;
        z.lincomb(gain, &self.mean, mean_coef)
    }
}

/// The MMSE-optimal noise prediction for the Gaussian world at sampler index `t`.
pub fn analytic_gaussian_predict(
    z: &Latent,
    t: usize,
    spec: &GaussianWorldSpec,
    schedule: &NoiseSchedule,
) -> Result<Latent> {
    let level = schedule.level(t)?;
    spec.predict_at(z, level.alpha_bar)
}

/// [`GaussianWorldSpec`] exposed as a [`Denoiser`]; text and control are ignored.
#[derive(Clone, Debug)]
pub struct AnalyticGaussianBackend {
    spec: GaussianWorldSpec,
    embedding_dim: usize,
}

impl AnalyticGaussianBackend {
    pub fn new(spec: GaussianWorldSpec, embedding_dim: usize) -> Self {
        Self {
            spec,
            embedding_dim,
        }
    }

    pub fn spec(&self) -> &GaussianWorldSpec {
        &self.spec
    }
}

impl Denoiser for AnalyticGaussianBackend {
    fn latent_shape(&self) -> [usize; 3] {
        self.spec.mean.shape()
    }

    fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    fn control_shape(&self) -> Option<[usize; 3]> {
        None
    }

    fn empty_embedding(&self) -> Vec<f64> {
        vec![0.0; self.embedding_dim]
    }

    fn gradient_mechanism(&self) -> GradientMechanism {
        GradientMechanism::Analytic
    }

    fn predict(
        &self,
        z: &Latent,
        level: NoiseLevel,
        embedding: &[f64],
        control: Option<&ControlMap>,
    ) -> Result<Latent> {
        self.check_inputs(z, embedding, control)?;
        self.spec.predict_at(z, level.alpha_bar)
    }

    fn vjp(
        &self,
        z: &Latent,
        level: NoiseLevel,
        embedding: &[f64],
        control: Option<&ControlMap>,
        cotangent: &Latent,
    ) -> Result<(Latent, Vjp)> {
        let pred = self.predict(z, level, embedding, control)?;
        pred.ensure_same_shape(cotangent, "cotangent")?;
        let (gain, _) = self.spec.affine(level.alpha_bar)?;
        Ok((
            pred,
            Vjp {
                latent: cotangent.scale(gain),
                embedding: vec![0.0; self.embedding_dim],
            },
        ))
    }
}
