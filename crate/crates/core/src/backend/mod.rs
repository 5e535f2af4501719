//! Denoiser and autoencoder backends.
//!
//! A [`Denoiser`] is the composed noise predictor `eps(z, t, c, p)`: text
//! embedding and pose control enter through one call. Every optimizer and the
//! guided sampler need vector-Jacobian products of the prediction, which
//! backends supply either natively or through central finite differences.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{contract, Error, Result};
use crate::schedule::NoiseLevel;
use crate::tensor::{Latent, Tensor};

mod analytic;
mod autoencoder;
mod gradcheck;
mod mlp;
mod train;

pub use analytic::{analytic_gaussian_predict, AnalyticGaussianBackend, GaussianWorldSpec};
pub use autoencoder::{Autoencoder, IdentityAutoencoder, PooledAutoencoder, ScaledAutoencoder};
pub use gradcheck::{check_gradient, GradientProbe, InputSelector, FD_STEP};
pub use mlp::{MlpArchitecture, MlpDenoiser};
pub use train::{
    heldout_epsilon_error, train_toy_denoiser, TrainingConfig, TrainingExample, TrainingReport,
};

/// A rasterized pose condition with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlMap(Tensor);

impl ControlMap {
    pub fn new(data: Tensor) -> Result<Self> {
        if !data
            .as_slice()
            .iter()
            .all(|v| v.is_finite() && (0.0..=1.0).contains(v))
        {
            return Err(contract!("control map values must lie in [0, 1]"));
        }
        Ok(Self(data))
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        Self(Tensor::zeros(shape))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn shape(&self) -> [usize; 3] {
        self.0.shape()
    }
}

/// How a backend makes gradients of its prediction available.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientMechanism {
    /// Exact vector-Jacobian products.
    Analytic,
    /// Central finite differences over every input coordinate.
    FiniteDifference,
    None,
}

/// Cotangents of a scalar function of the prediction with respect to the
/// latent and the text embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Vjp {
    pub latent: Latent,
    pub embedding: Vec<f64>,
}

/// Step used by the finite-difference fallback.
const FALLBACK_STEP: f64 = 1e-5;

pub trait Denoiser: Send + Sync {
    fn latent_shape(&self) -> [usize; 3];

    fn embedding_dim(&self) -> usize;

    /// Control-map shape accepted by [`Denoiser::predict`], if the backend
    /// uses control at all.
    fn control_shape(&self) -> Option<[usize; 3]>;

    /// The canonical empty-prompt embedding.
    fn empty_embedding(&self) -> Vec<f64>;

    fn gradient_mechanism(&self) -> GradientMechanism;

    fn predict(
        &self,
        z: &Latent,
        level: NoiseLevel,
        embedding: &[f64],
        control: Option<&ControlMap>,
    ) -> Result<Latent>;

    /// Returns the prediction together with the cotangents of
    /// `<cotangent, predict(...)>`.
    fn vjp(
        &self,
        z: &Latent,
        level: NoiseLevel,
        embedding: &[f64],
        control: Option<&ControlMap>,
        cotangent: &Latent,
    ) -> Result<(Latent, Vjp)> {
        match self.gradient_mechanism() {
            GradientMechanism::FiniteDifference => {
                finite_difference_vjp(self, z, level, embedding, control, cotangent)
            }
            GradientMechanism::Analytic => Err(Error::Capability(
                "backend declares analytic gradients but does not implement them".to_string(),
            )),
            GradientMechanism::None => Err(Error::Capability(
                "backend provides no gradients".to_string(),
            )),
        }
    }

    /// Shape checks shared by implementations.
    fn check_inputs(
        &self,
        z: &Latent,
        embedding: &[f64],
        control: Option<&ControlMap>,
    ) -> Result<()> {
        if z.shape() != self.latent_shape() {
            return Err(contract!(
                "latent shape {:?} does not match backend {:?}",
                z.shape(),
                self.latent_shape()
            ));
        }
        if embedding.len() != self.embedding_dim() {
            return Err(contract!(
                "embedding has {} entries, backend expects {}",
                embedding.len(),
                self.embedding_dim()
            ));
        }
        if let (Some(c), Some(expected)) = (control, self.control_shape()) {
            if c.shape() != expected {
                return Err(contract!(
                    "control shape {:?} does not match backend {:?}",
                    c.shape(),
                    expected
                ));
            }
        }
        Ok(())
    }
}

fn finite_difference_vjp<D: Denoiser + ?Sized>(
    backend: &D,
    z: &Latent,
    level: NoiseLevel,
    embedding: &[f64],
    control: Option<&ControlMap>,
    cotangent: &Latent,
) -> Result<(Latent, Vjp)> {
    let pred = backend.predict(z, level, embedding, control)?;
    pred.ensure_same_shape(cotangent, "cotangent")?;
    let probe = |zz: &Latent, e: &[f64]| -> Result<f64> {
        backend.predict(zz, level, e, control)?.dot(cotangent)
    };
    let mut dz = Tensor::zeros(z.shape());
    let mut zz = z.clone();
    for i in 0..z.len() {
        let x = zz.as_slice()[i];
        zz.as_mut_slice()[i] = x + FALLBACK_STEP;
        let plus = probe(&zz, embedding)?;
        zz.as_mut_slice()[i] = x - FALLBACK_STEP;
        let minus = probe(&zz, embedding)?;
        zz.as_mut_slice()[i] = x;
        dz.as_mut_slice()[i] = (plus - minus) / (2.0 * FALLBACK_STEP);
    }
    let mut e = embedding.to_vec();
    let mut de = Vec::with_capacity(e.len());
    for i in 0..e.len() {
        let x = e[i];
        e[i] = x + FALLBACK_STEP;
        let plus = probe(z, &e)?;
        e[i] = x - FALLBACK_STEP;
        let minus = probe(z, &e)?;
        e[i] = x;
        de.push((plus - minus) / (2.0 * FALLBACK_STEP));
    }
    Ok((
        pred,
        Vjp {
            latent: dz,
            embedding: de,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{NoiseSchedule, ScheduleProfile};
    use alloc::vec;

    /// A smooth nonlinear backend that only offers finite differences.
    struct Wobble;

    impl Denoiser for Wobble {
        fn latent_shape(&self) -> [usize; 3] {
            [3, 1, 1]
        }
        fn embedding_dim(&self) -> usize {
            2
        }
        fn control_shape(&self) -> Option<[usize; 3]> {
            None
        }
        fn empty_embedding(&self) -> Vec<f64> {
            vec![0.0; 2]
        }
        fn gradient_mechanism(&self) -> GradientMechanism {
            GradientMechanism::FiniteDifference
        }
        fn predict(
            &self,
            z: &Latent,
            level: NoiseLevel,
            e: &[f64],
            _c: Option<&ControlMap>,
        ) -> Result<Latent> {
            let s = z.as_slice();
            Ok(Tensor::vector(vec![
                libm::sin(s[0]) * e[0] + level.alpha_bar,
                s[1] * s[2] + e[1] * e[1],
                libm::exp(0.1 * s[0]) - e[0] * e[1],
            ]))
        }
    }

    #[test]
    fn finite_difference_fallback_matches_hand_derivative() {
        let s = NoiseSchedule::new(10, ScheduleProfile::LinearToy).unwrap();
        let z = Tensor::vector(vec![0.3, -1.0, 2.0]);
        let e = [0.5, -0.25];
        let w = Tensor::vector(vec![1.0, 2.0, -1.0]);
        let (_, vjp) = Wobble
            .vjp(&z, s.level(3).unwrap(), &e, None, &w)
            .unwrap();
        let dz0 = libm::cos(0.3) * 0.5 - 0.1 * libm::exp(0.03);
        assert!((vjp.latent.as_slice()[0] - dz0).abs() < 1e-8);
        assert!((vjp.latent.as_slice()[1] - 2.0 * 2.0).abs() < 1e-8);
        assert!((vjp.latent.as_slice()[2] - 2.0 * -1.0).abs() < 1e-8);
        let de0 = libm::sin(0.3) - 0.25;
        let de1 = 2.0 * 2.0 * -0.25 + 0.5;
        assert!((vjp.embedding[0] - de0).abs() < 1e-8);
        assert!((vjp.embedding[1] - de1).abs() < 1e-8);
    }

    #[test]
    fn control_map_range() {
        assert!(ControlMap::new(Tensor::filled([1, 2, 2], 1.5)).is_err());
        assert!(ControlMap::new(Tensor::filled([1, 2, 2], f64::NAN)).is_err());
        assert!(ControlMap::new(Tensor::filled([1, 2, 2], 0.5)).is_ok());
    }
}
