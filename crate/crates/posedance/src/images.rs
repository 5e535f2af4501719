//! 8-bit PNG images and masks.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use posedance_core::{Image, Mask, Tensor};

use crate::error::{Error, Result};

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::ErrorKind::NotFound.into(),
        });
    }
    image::open(path).map_err(|e| Error::format(path, e))
}

/// Reads an RGB image as a `[3, h, w]` tensor in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros([3, h, w]);
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            t.set(c, y as usize, x as usize, px[c] as f64 / 255.0);
        }
    }
    Ok(t)
}

/// Writes the first three channels of `image`, clamped to `[0, 1]`.
pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    if image.channels() != 3 {
        return Err(Error::format(path, format!("expected 3 channels, got {}", image.channels())));
    }
    let img = RgbImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([
            to_u8(image.get(0, y, x)),
            to_u8(image.get(1, y, x)),
            to_u8(image.get(2, y, x)),
        ])
    });
    img.save(path).map_err(|e| Error::format(path, e))
}

/// Reads a grayscale mask; pixels at or above 128 are set.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = open(path)?.to_luma8();
    let mut m = Mask::new(img.width() as usize, img.height() as usize, false);
    for (x, y, px) in img.enumerate_pixels() {
        m.set(x as usize, y as usize, px[0] >= 128);
    }
    Ok(m)
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let img = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    img.save(path).map_err(|e| Error::format(path, e))
}
