//! Test-time perturbations: resizing, JPEG compression, brightness change
//! and additive Gaussian noise.

use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::imageops::{self, FilterType};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Image;
use crate::seed;

pub const RESIZE_SIZES: [u32; 4] = [256, 512, 768, 1024];

/// Bilinear resize to `size x size`.
pub fn perturb_resize(img: &Image, size: u32) -> Result<Image> {
    if !RESIZE_SIZES.contains(&size) {
        return Err(Error::BadSize(size));
    }
    if img.width() == size && img.height() == size {
        return Ok(img.clone());
    }
    let out = imageops::resize(&img.to_rgb_image(), size, size, FilterType::Triangle);
    Ok(Image::from_rgb_image(out))
}

/// Baseline JPEG round trip at `quality`; 100 leaves the image untouched.
pub fn perturb_jpeg(img: &Image, quality: u8) -> Result<Image> {
    if !(20..=100).contains(&quality) {
        return Err(Error::Config(format!("JPEG quality must lie in [20, 100], got {quality}")));
    }
    if quality == 100 {
        return Ok(img.clone());
    }
    let mut buf = Cursor::new(Vec::new());
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode_image(&img.to_rgb_image())
        .map_err(|e| Error::decode("jpeg encode", e))?;
    let decoded = image::load_from_memory_with_format(buf.get_ref(), image::ImageFormat::Jpeg)
        .map_err(|e| Error::decode("jpeg round trip", e))?;
    Ok(Image::from_rgb_image(decoded.to_rgb8()))
}

/// `pixel / factor`, rounded and clamped: factors above 1 darken, below 1
/// brighten.
pub fn perturb_brightness(img: &Image, factor: f64) -> Result<Image> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Config(format!("brightness factor must be positive, got {factor}")));
    }
    let pixels = img
        .pixels()
        .iter()
        .map(|&p| (f64::from(p) / factor).round().clamp(0.0, 255.0) as u8)
        .collect();
    Image::new(img.width(), img.height(), pixels)
}

/// Adds i.i.d. `N(0, sigma^2)` noise per pixel and channel, rounded and clamped.
pub fn perturb_noise(img: &Image, sigma: f64, seed_: u64) -> Result<Image> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("noise sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = seed::rng(seed_);
    let pixels = img
        .pixels()
        .iter()
        .map(|&p| (f64::from(p) + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
        .collect();
    Image::new(img.width(), img.height(), pixels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "level", rename_all = "snake_case")]
pub enum Perturbation {
    Resize(u32),
    Jpeg(u8),
    Brightness(f64),
    Noise(f64),
}

impl Perturbation {
    pub fn name(&self) -> &'static str {
        match self {
            Perturbation::Resize(_) => "resize",
            Perturbation::Jpeg(_) => "jpeg",
            Perturbation::Brightness(_) => "brightness",
            Perturbation::Noise(_) => "noise",
        }
    }

    pub fn level(&self) -> String {
        match self {
            Perturbation::Resize(s) => s.to_string(),
            Perturbation::Jpeg(q) => q.to_string(),
            Perturbation::Brightness(f) => f.to_string(),
            Perturbation::Noise(s) => s.to_string(),
        }
    }

    /// Applies the perturbation; `seed` only matters for noise.
    pub fn apply(&self, img: &Image, seed_: u64) -> Result<Image> {
        match *self {
            Perturbation::Resize(s) => perturb_resize(img, s),
            Perturbation::Jpeg(q) => perturb_jpeg(img, q),
            Perturbation::Brightness(f) => perturb_brightness(img, f),
            Perturbation::Noise(s) => perturb_noise(img, s, seed_),
        }
    }
}

/// Peak signal-to-noise ratio in dB; infinite for identical images.
pub fn psnr(a: &Image, b: &Image) -> f64 {
    assert_eq!((a.width(), a.height()), (b.width(), b.height()));
    let mse = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        / a.pixels().len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64.powi(2) / mse).log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(v: u8, size: u32) -> Image {
        Image::from_fn(size, size, |_, _| [v, v, v])
    }

    #[test]
    fn brightness_divides_and_clamps() {
        let img = gray(200, 16);
        assert_eq!(perturb_brightness(&img, 1.0).unwrap(), img);
        assert!(perturb_brightness(&img, 2.0).unwrap().pixels().iter().all(|&p| p == 100));
        assert!(perturb_brightness(&img, 0.5).unwrap().pixels().iter().all(|&p| p == 255));
        assert!(perturb_brightness(&img, 0.0).is_err());
    }

    #[test]
    fn identity_levels() {
        let img = Image::from_fn(32, 32, |x, y| [(x * 7) as u8, (y * 5) as u8, (x + y) as u8]);
        assert_eq!(perturb_jpeg(&img, 100).unwrap(), img);
        assert_eq!(perturb_noise(&img, 0.0, 9).unwrap(), img);
        let big = gray(10, 256);
        assert_eq!(perturb_resize(&big, 256).unwrap(), big);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = Image::from_fn(300, 200, |_, _| [90, 120, 33]);
        let out = perturb_resize(&img, 256).unwrap();
        assert_eq!((out.width(), out.height()), (256, 256));
        assert!(out.pixels().chunks_exact(3).all(|p| p == [90, 120, 33]));
        assert!(matches!(perturb_resize(&img, 300), Err(Error::BadSize(300))));
    }

    #[test]
    fn jpeg_flat_image_survives() {
        let img = gray(77, 64);
        let out = perturb_jpeg(&img, 20).unwrap();
        assert!(out.pixels().iter().all(|&p| p.abs_diff(77) <= 1));
        assert!(perturb_jpeg(&img, 10).is_err());
    }

    #[test]
    fn noise_statistics() {
        let img = gray(128, 128);
        let out = perturb_noise(&img, 5.0, 1).unwrap();
        let diffs: Vec<f64> = out
            .pixels()
            .iter()
            .map(|&p| f64::from(p) - 128.0)
            .collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64;
        assert!((var.sqrt() - 5.0).abs() < 0.25, "std {}", var.sqrt());
        assert_eq!(out, perturb_noise(&img, 5.0, 1).unwrap());
    }
}
