//! Backend gradients against central finite differences.

use alloc::string::ToString;
use alloc::vec::Vec;

use super::{ControlMap, Denoiser, GradientMechanism};
use crate::error::{contract, Error, Result};
use crate::schedule::NoiseLevel;
use crate::tensor::Latent;

/// Relative finite-difference step, applied as `FD_STEP * max(1, |x|)`.
pub const FD_STEP: f64 = 1e-4;

/// Scalar probe `<weights, predict(latent, level, embedding, control)>`.
#[derive(Clone, Debug)]
pub struct GradientProbe {
    pub latent: Latent,
    pub level: NoiseLevel,
    pub embedding: Vec<f64>,
    pub control: Option<ControlMap>,
    pub weights: Latent,
    /// Input coordinates to probe; empty probes every coordinate.
    pub coordinates: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputSelector {
    Latent,
    Embedding,
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub(crate) fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Maximum relative error between the backend's gradient of the probe and
/// central finite differences over the selected coordinates.
pub fn check_gradient<D: Denoiser + ?Sized>(
    backend: &D,
    probe: &GradientProbe,
    selector: InputSelector,
) -> Result<f64> {
    if backend.gradient_mechanism() == GradientMechanism::None {
        return Err(Error::Capability(
            "backend declares no gradient mechanism".to_string(),
        ));
    }
    let control = probe.control.as_ref();
    let (_, vjp) = backend.vjp(
        &probe.latent,
        probe.level,
        &probe.embedding,
        control,
        &probe.weights,
    )?;
    let (analytic, len) = match selector {
        InputSelector::Latent => (vjp.latent.as_slice().to_vec(), probe.latent.len()),
        InputSelector::Embedding => (vjp.embedding, probe.embedding.len()),
    };
    let coords: Vec<usize> = if probe.coordinates.is_empty() {
        (0..len).collect()
    } else {
        probe.coordinates.clone()
    };
    let eval = |z: &Latent, e: &[f64]| -> Result<f64> {
        backend
            .predict(z, probe.level, e, control)?
            .dot(&probe.weights)
    };
    let mut worst = 0.0f64;
    let mut z = probe.latent.clone();
    let mut e = probe.embedding.clone();
    for &i in &coords {
        if i >= len {
            return Err(contract!("probe coordinate {} out of range {}", i, len));
        }
        let x = match selector {
            InputSelector::Latent => z.as_slice()[i],
            InputSelector::Embedding => e[i],
        };
        let h = FD_STEP * x.abs().max(1.0);
        let mut at = |v: f64| -> Result<f64> {
            match selector {
                InputSelector::Latent => z.as_mut_slice()[i] = v,
                InputSelector::Embedding => e[i] = v,
            }
            eval(&z, &e)
        };
        let plus = at(x + h)?;
        let minus = at(x - h)?;
        at(x)?;
        let fd = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], fd));
    }
    Ok(worst)
}
