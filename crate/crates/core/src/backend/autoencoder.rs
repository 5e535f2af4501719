//! Image <-> latent maps.

use crate::error::{contract, Result};
use crate::tensor::{Image, Latent, Tensor};

pub trait Autoencoder: Send + Sync {
    /// Latent shape produced for images of `image_shape`.
    fn latent_shape(&self, image_shape: [usize; 3]) -> Result<[usize; 3]>;

    /// Image shape produced when decoding latents of `latent_shape`.
    fn image_shape(&self, latent_shape: [usize; 3]) -> [usize; 3];

    fn encode(&self, image: &Image) -> Result<Latent>;

    fn decode(&self, z: &Latent) -> Result<Image>;

    /// Pulls an image-space cotangent back through [`Autoencoder::decode`].
    fn decode_vjp(&self, z: &Latent, cotangent: &Image) -> Result<Latent>;

    /// Max-abs error bound of `decode(encode(x))` on images it accepts.
    fn reconstruction_tolerance(&self) -> f64;
}

fn check_pixels(image: &Image) -> Result<()> {
    if image
        .as_slice()
        .iter()
        .any(|v| !(v.is_finite() && (0.0..=1.0).contains(v)))
    {
        return Err(contract!("pixel values must lie in [0, 1]"));
    }
    Ok(())
}

/// Latent equals the image tensor.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityAutoencoder;

impl Autoencoder for IdentityAutoencoder {
    fn latent_shape(&self, image_shape: [usize; 3]) -> Result<[usize; 3]> {
        Ok(image_shape)
    }

    fn image_shape(&self, latent_shape: [usize; 3]) -> [usize; 3] {
        latent_shape
    }

    fn encode(&self, image: &Image) -> Result<Latent> {
        check_pixels(image)?;
        Ok(image.clone())
    }

    fn decode(&self, z: &Latent) -> Result<Image> {
        Ok(z.clone())
    }

    fn decode_vjp(&self, _z: &Latent, cotangent: &Image) -> Result<Latent> {
        Ok(cotangent.clone())
    }

    fn reconstruction_tolerance(&self) -> f64 {
        0.0
    }
}

/// Affine map `z = (x - offset) / scale`. With the default mid-grey
/// offset and a scale of 1/8 toy images get latents of roughly unit
/// variance, as a latent scaling factor does for learned autoencoders.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledAutoencoder {
    pub offset: f64,
    pub scale: f64,
}

impl Default for ScaledAutoencoder {
    fn default() -> Self {
        Self {
            offset: 0.5,
            scale: 0.125,
        }
    }
}

impl Autoencoder for ScaledAutoencoder {
    fn latent_shape(&self, image_shape: [usize; 3]) -> Result<[usize; 3]> {
        Ok(image_shape)
    }

    fn image_shape(&self, latent_shape: [usize; 3]) -> [usize; 3] {
        latent_shape
    }

    fn encode(&self, image: &Image) -> Result<Latent> {
        check_pixels(image)?;
        Ok(image.map(|v| (v - self.offset) / self.scale))
    }

    fn decode(&self, z: &Latent) -> Result<Image> {
        Ok(z.map(|v| self.offset + self.scale * v))
    }

    fn decode_vjp(&self, z: &Latent, cotangent: &Image) -> Result<Latent> {
        z.ensure_same_shape(cotangent, "cotangent")?;
        Ok(cotangent.scale(self.scale))
    }

    fn reconstruction_tolerance(&self) -> f64 {
        1e-15
    }
}

/// 2x2 average-pool encoder with a nearest-neighbour decoder.
#[derive(Clone, Copy, Debug, Default)]
pub struct PooledAutoencoder;

impl Autoencoder for PooledAutoencoder {
    fn latent_shape(&self, [c, h, w]: [usize; 3]) -> Result<[usize; 3]> {
        if h % 2 != 0 || w % 2 != 0 {
            return Err(contract!("pooled encoder needs even image sides, got {}x{}", w, h));
        }
        Ok([c, h / 2, w / 2])
    }

    fn image_shape(&self, [c, h, w]: [usize; 3]) -> [usize; 3] {
        [c, 2 * h, 2 * w]
    }

    fn encode(&self, image: &Image) -> Result<Latent> {
        check_pixels(image)?;
        let shape = self.latent_shape(image.shape())?;
        let mut z = Tensor::zeros(shape);
        for c in 0..shape[0] {
            for y in 0..shape[1] {
                for x in 0..shape[2] {
                    let s = image.get(c, 2 * y, 2 * x)
                        + image.get(c, 2 * y, 2 * x + 1)
                        + image.get(c, 2 * y + 1, 2 * x)
                        + image.get(c, 2 * y + 1, 2 * x + 1);
                    z.set(c, y, x, 0.25 * s);
                }
            }
        }
        Ok(z)
    }

    fn decode(&self, z: &Latent) -> Result<Image> {
        let shape = self.image_shape(z.shape());
        let mut img = Tensor::zeros(shape);
        for c in 0..shape[0] {
            for y in 0..shape[1] {
                for x in 0..shape[2] {
                    img.set(c, y, x, z.get(c, y / 2, x / 2));
                }
            }
        }
        Ok(img)
    }

    fn decode_vjp(&self, z: &Latent, cotangent: &Image) -> Result<Latent> {
        if cotangent.shape() != self.image_shape(z.shape()) {
            return Err(contract!(
                "cotangent shape {:?} does not match decoded shape",
                cotangent.shape()
            ));
        }
        let mut g = Tensor::zeros(z.shape());
        for c in 0..cotangent.channels() {
            for y in 0..cotangent.height() {
                for x in 0..cotangent.width() {
                    let i = g.index(c, y / 2, x / 2);
                    g.as_mut_slice()[i] += cotangent.get(c, y, x);
                }
            }
        }
        Ok(g)
    }

    /// Exact only for images constant on aligned 2x2 blocks.
    fn reconstruction_tolerance(&self) -> f64 {
        1.0
    }
}
