//! Synthetic stand-in dataset: smooth value-noise "real" faces and "fake"
//! faces carrying a periodic period-4 checkerboard, the spectral footprint
//! of strided upsampling.

use std::path::Path;

use rand::Rng;

use super::manifest::{stratified_split, Manifest, ManifestEntry, SplitTag};
use crate::error::{Error, Result};
use crate::features::{landmark_path_for, Image, LandmarkFile, LANDMARKS};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_real: usize,
    pub n_fake: usize,
    pub size: u32,
    pub seed: u64,
    /// Checkerboard amplitude range on the 0-255 scale.
    pub artifact_amplitude: (f64, f64),
    pub train_frac: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_real: 400,
            n_fake: 400,
            size: 256,
            seed: 0,
            artifact_amplitude: (4.0, 8.0),
            train_frac: 0.8,
        }
    }
}

/// Bilinear interpolation of a `g x g` lattice stretched over `size` pixels.
fn lattice_noise(rng: &mut impl Rng, g: usize, size: u32, amp: f64) -> Vec<f64> {
    let grid: Vec<f64> = (0..g * g).map(|_| rng.random_range(-amp..amp)).collect();
    let scale = (g - 1) as f64 / (size - 1).max(1) as f64;
    let mut out = Vec::with_capacity((size * size) as usize);
    for y in 0..size {
        let gy = y as f64 * scale;
        let y0 = (gy.floor() as usize).min(g - 2);
        let fy = gy - y0 as f64;
        for x in 0..size {
            let gx = x as f64 * scale;
            let x0 = (gx.floor() as usize).min(g - 2);
            let fx = gx - x0 as f64;
            let v00 = grid[y0 * g + x0];
            let v01 = grid[y0 * g + x0 + 1];
            let v10 = grid[(y0 + 1) * g + x0];
            let v11 = grid[(y0 + 1) * g + x0 + 1];
            let top = v00 * (1.0 - fx) + v01 * fx;
            let bottom = v10 * (1.0 - fx) + v11 * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// One synthetic face image; `fake` adds the checkerboard artifact.
pub fn synth_image(fake: bool, size: u32, amplitude: (f64, f64), rng: &mut impl Rng) -> Image {
    let mut channels = Vec::with_capacity(3);
    let coarse_amp = rng.random_range(30.0..60.0);
    let fine_amp = rng.random_range(8.0..20.0);
    for _ in 0..3 {
        let mean = rng.random_range(80.0..170.0);
        let coarse = lattice_noise(rng, 5, size, coarse_amp);
        let fine = lattice_noise(rng, 9, size, fine_amp);
        channels.push(
            coarse
                .iter()
                .zip(&fine)
                .map(|(a, b)| mean + a + b)
                .collect::<Vec<f64>>(),
        );
    }
    let amp = if fake {
        rng.random_range(amplitude.0..amplitude.1)
    } else {
        0.0
    };
    let sign = |t: u32| if (t / 2) % 2 == 0 { 1.0 } else { -1.0 };
    Image::from_fn(size, size, |x, y| {
        let i = (y * size + x) as usize;
        let art = amp * sign(x) * sign(y);
        let px = |c: usize| (channels[c][i] + art).round().clamp(0.0, 255.0) as u8;
        [px(0), px(1), px(2)]
    })
}

/// Rough 68-point face layout in normalized coordinates: jaw, brows, nose,
/// eyes, mouth.
fn template() -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(LANDMARKS);
    for i in 0..17 {
        let t = std::f64::consts::PI * (i as f64 / 16.0);
        pts.push((0.5 - 0.32 * t.cos(), 0.45 + 0.35 * t.sin()));
    }
    for side in [0.0, 0.28] {
        for i in 0..5 {
            pts.push((0.22 + side + 0.05 * i as f64, 0.33 - 0.02 * (2.0 - i as f64).abs()));
        }
    }
    for i in 0..4 {
        pts.push((0.5, 0.40 + 0.04 * i as f64));
    }
    for i in 0..5 {
        pts.push((0.44 + 0.03 * i as f64, 0.58));
    }
    for cx in [0.35, 0.65] {
        for i in 0..6 {
            let t = std::f64::consts::TAU * i as f64 / 6.0;
            pts.push((cx + 0.05 * t.cos(), 0.42 + 0.02 * t.sin()));
        }
    }
    for i in 0..12 {
        let t = std::f64::consts::TAU * i as f64 / 12.0;
        pts.push((0.5 + 0.12 * t.cos(), 0.70 + 0.05 * t.sin()));
    }
    for i in 0..8 {
        let t = std::f64::consts::TAU * i as f64 / 8.0;
        pts.push((0.5 + 0.07 * t.cos(), 0.70 + 0.02 * t.sin()));
    }
    debug_assert_eq!(pts.len(), LANDMARKS);
    pts
}

/// Jittered template landmarks in pixel coordinates.
pub fn synth_landmarks(size: u32, rng: &mut impl Rng) -> LandmarkFile {
    let s = f64::from(size);
    let (dx, dy) = (rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03));
    let scale = rng.random_range(0.95..1.05);
    let landmarks = template()
        .into_iter()
        .map(|(x, y)| {
            let jx = rng.random_range(-0.01..0.01);
            let jy = rng.random_range(-0.01..0.01);
            let nx = (0.5 + (x - 0.5) * scale + dx + jx).clamp(0.0, 0.999);
            let ny = (0.5 + (y - 0.5) * scale + dy + jy).clamp(0.0, 0.999);
            vec![(nx * s).floor(), (ny * s).floor()]
        })
        .collect();
    LandmarkFile { landmarks }
}

/// Writes images, landmark sidecars and `manifest.csv` into `dir`.
pub fn generate(dir: &Path, cfg: &SynthConfig) -> Result<Manifest> {
    if cfg.size < 16 {
        return Err(Error::Config(format!("synthetic images must be at least 16 px, got {}", cfg.size)));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(cfg.n_real + cfg.n_fake);
    for (i, fake) in std::iter::repeat_n(false, cfg.n_real)
        .chain(std::iter::repeat_n(true, cfg.n_fake))
        .enumerate()
    {
        let mut rng = seed::stream(cfg.seed, i as u64);
        let img = synth_image(fake, cfg.size, cfg.artifact_amplitude, &mut rng);
        let lm = synth_landmarks(cfg.size, &mut rng);
        let name = format!("{}_{i:05}.png", if fake { "fake" } else { "real" });
        let image_path = dir.join(name);
        img.save_png(&image_path)?;
        let landmark_path = landmark_path_for(&image_path);
        let json = serde_json::to_string(&lm).map_err(|e| Error::decode("landmarks", e))?;
        std::fs::write(&landmark_path, json).map_err(|e| Error::io(&landmark_path, e))?;
        entries.push(ManifestEntry {
            image_path,
            landmark_path,
            label: u8::from(fake),
            split: SplitTag::Train,
        });
    }
    let manifest = stratified_split(&entries, cfg.train_frac, seed::derive(cfg.seed, u64::MAX))?;
    manifest.write(&dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::normalize_landmarks;

    #[test]
    fn template_has_68_points_in_bounds() {
        let mut rng = seed::rng(1);
        let lm = synth_landmarks(256, &mut rng);
        assert!(normalize_landmarks(&lm.landmarks, 256, 256).is_ok());
    }

    #[test]
    fn images_are_deterministic() {
        let a = synth_image(true, 64, (4.0, 8.0), &mut seed::rng(5));
        let b = synth_image(true, 64, (4.0, 8.0), &mut seed::rng(5));
        assert_eq!(a, b);
    }
}
