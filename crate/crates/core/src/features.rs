//! Image decoding, patch splitting, and the appearance / frequency / biology
//! feature vectors fed to the cascades.

use std::cell::RefCell;
use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SIDE: u32 = 16;
pub const HIST_BINS: usize = 256;
pub const SPECTRUM_BINS: usize = 88;
pub const LANDMARKS: usize = 68;

pub const APPEARANCE_DIM: usize = 3 * HIST_BINS;
pub const FREQUENCY_DIM: usize = 3 * SPECTRUM_BINS;
pub const BIOLOGY_DIM: usize = 2 * LANDMARKS;
pub const PATCH_DIM: usize = APPEARANCE_DIM + FREQUENCY_DIM;
/// Width of the first patch of every scale, which also carries the landmarks.
pub const HEAD_PATCH_DIM: usize = PATCH_DIM + BIOLOGY_DIM;

pub const ALL_SCALES: [usize; 4] = [1, 2, 3, 4];

/// 8-bit RGB raster, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::TooSmall { width, height });
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Image {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Values of one channel in row-major order.
    pub fn channel(&self, c: usize) -> impl Iterator<Item = u8> + '_ {
        self.pixels.iter().skip(c).step_by(3).copied()
    }

    /// Copy of the rectangle `[x0, x0+w) x [y0, y0+h)`.
    pub fn crop(&self, x0: u32, y0: u32, w: u32, h: u32) -> Image {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let stride = self.width as usize * 3;
        let mut pixels = Vec::with_capacity(w as usize * h as usize * 3);
        for y in y0..y0 + h {
            let start = y as usize * stride + x0 as usize * 3;
            pixels.extend_from_slice(&self.pixels[start..start + w as usize * 3]);
        }
        Image {
            width: w,
            height: h,
            pixels,
        }
    }

    pub(crate) fn to_rgb_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer length checked at construction")
    }

    pub(crate) fn from_rgb_image(img: image::RgbImage) -> Image {
        let (width, height) = img.dimensions();
        Image {
            width,
            height,
            pixels: img.into_raw(),
        }
    }

    /// Decodes PNG or JPEG bytes, replicating grayscale to three channels.
    pub fn decode(bytes: &[u8], what: &str) -> Result<Image> {
        let format = image::guess_format(bytes).map_err(|e| Error::decode(what, e))?;
        if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Jpeg) {
            return Err(Error::decode(what, format!("unsupported format {format:?}")));
        }
        let dynamic =
            image::load_from_memory_with_format(bytes, format).map_err(|e| Error::decode(what, e))?;
        let img = Image::from_rgb_image(dynamic.to_rgb8());
        if img.width < MIN_SIDE || img.height < MIN_SIDE {
            return Err(Error::TooSmall {
                width: img.width,
                height: img.height,
            });
        }
        Ok(img)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb_image()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::decode(path.display(), other),
            })
    }
}

pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Image::decode(&bytes, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub scale_n: usize,
    pub patches: Vec<Image>,
}

/// Start offsets and lengths of `n` bands over `len` pixels; the last band
/// absorbs the remainder.
fn bands(len: u32, n: u32) -> Vec<(u32, u32)> {
    let step = len / n;
    (0..n)
        .map(|i| {
            let start = i * step;
            let size = if i == n - 1 { len - start } else { step };
            (start, size)
        })
        .collect()
}

/// Splits an image into the patches of scale `n`: the image itself, 2 or 3
/// horizontal bands top to bottom, or 2x2 quadrants in row-major order.
pub fn split_patches(img: &Image, n: usize) -> Result<PatchSet> {
    let (w, h) = (img.width, img.height);
    let patches = match n {
        1 => vec![img.clone()],
        2 | 3 => bands(h, n as u32)
            .into_iter()
            .map(|(y0, bh)| img.crop(0, y0, w, bh))
            .collect(),
        4 => {
            let rows = bands(h, 2);
            let cols = bands(w, 2);
            rows.iter()
                .flat_map(|&(y0, bh)| cols.iter().map(move |&(x0, bw)| (x0, y0, bw, bh)))
                .map(|(x0, y0, bw, bh)| img.crop(x0, y0, bw, bh))
                .collect()
        }
        other => return Err(Error::BadScale(other)),
    };
    Ok(PatchSet {
        scale_n: n,
        patches,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Appearance,
    Frequency,
    Biology,
    Patch,
    Composite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub kind: FeatureKind,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-channel 256-bin histograms normalized by pixel count, R then G then B.
pub fn color_histogram(img: &Image) -> FeatureVector {
    let mut counts = vec![0u64; APPEARANCE_DIM];
    for px in img.pixels.chunks_exact(3) {
        for (c, &v) in px.iter().enumerate() {
            counts[c * HIST_BINS + v as usize] += 1;
        }
    }
    let total = (img.width as u64 * img.height as u64) as f64;
    FeatureVector {
        kind: FeatureKind::Appearance,
        values: counts.into_iter().map(|c| c as f64 / total).collect(),
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Centered 2-D power spectrum `|F|^2` of a real field, row-major.
fn power_2d(field: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = field.iter().map(|&v| Complex::new(v, 0.0)).collect();
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let row_fft = planner.plan_fft_forward(width);
        row_fft.process(&mut buf);

        let mut transposed = vec![Complex::new(0.0, 0.0); buf.len()];
        for y in 0..height {
            for x in 0..width {
                transposed[x * height + y] = buf[y * width + x];
            }
        }
        let col_fft = planner.plan_fft_forward(height);
        col_fft.process(&mut transposed);
        for x in 0..width {
            for y in 0..height {
                buf[y * width + x] = transposed[x * height + y];
            }
        }
    });
    buf.iter().map(|c| c.norm_sqr()).collect()
}

/// Mean power per integer radius `0..floor(min(h, w) / 2)`, measured from the
/// center of the shifted spectrum.
fn azimuthal_profile(power: &[f64], width: usize, height: usize) -> Vec<f64> {
    let radii = width.min(height) / 2;
    let mut sum = vec![0.0; radii];
    let mut count = vec![0usize; radii];
    let (cy, cx) = (height / 2, width / 2);
    for v in 0..height {
        // Position after the quadrant swap, relative to the center.
        let dy = ((v + cy) % height) as f64 - cy as f64;
        for u in 0..width {
            let dx = ((u + cx) % width) as f64 - cx as f64;
            let r = (dx * dx + dy * dy).sqrt().round() as usize;
            if r < radii {
                sum[r] += power[v * width + u];
                count[r] += 1;
            }
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect()
}

/// Linear resampling of a profile onto `bins` evenly spaced positions
/// spanning its first and last entries.
pub(crate) fn resample_linear(profile: &[f64], bins: usize) -> Vec<f64> {
    if profile.len() == 1 {
        return vec![profile[0]; bins];
    }
    let last = (profile.len() - 1) as f64;
    (0..bins)
        .map(|i| {
            let pos = i as f64 * last / (bins - 1) as f64;
            let lo = (pos.floor() as usize).min(profile.len() - 1);
            let hi = (lo + 1).min(profile.len() - 1);
            let frac = pos - lo as f64;
            profile[lo] * (1.0 - frac) + profile[hi] * frac
        })
        .collect()
}

/// Radial power spectrum of one channel: `log(1 + P(r))`, resampled to 88 bins.
pub(crate) fn channel_spectrum(field: &[f64], width: usize, height: usize) -> Vec<f64> {
    let power = power_2d(field, width, height);
    let profile: Vec<f64> = azimuthal_profile(&power, width, height)
        .into_iter()
        .map(f64::ln_1p)
        .collect();
    resample_linear(&profile, SPECTRUM_BINS)
}

/// Azimuthally averaged log power spectrum per channel, 3 x 88 values.
pub fn power_spectrum(img: &Image) -> Result<FeatureVector> {
    if img.width.min(img.height) < 2 {
        return Err(Error::DegenerateImage {
            width: img.width,
            height: img.height,
        });
    }
    let (w, h) = (img.width as usize, img.height as usize);
    let mut values = Vec::with_capacity(FREQUENCY_DIM);
    for c in 0..3 {
        let field: Vec<f64> = img.channel(c).map(f64::from).collect();
        values.extend(channel_spectrum(&field, w, h));
    }
    Ok(FeatureVector {
        kind: FeatureKind::Frequency,
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    /// Normalized `(x / width, y / height)` pairs.
    pub points: Vec<(f64, f64)>,
}

impl LandmarkSet {
    pub fn to_feature(&self) -> FeatureVector {
        FeatureVector {
            kind: FeatureKind::Biology,
            values: self.points.iter().flat_map(|&(x, y)| [x, y]).collect(),
        }
    }
}

/// On-disk landmark sidecar: `{"landmarks": [[x, y], ...]}` in pixels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LandmarkFile {
    pub landmarks: Vec<Vec<f64>>,
}

/// Sidecar location for an image: `<dir>/<stem>.landmarks.json`.
pub fn landmark_path_for(image_path: &Path) -> PathBuf {
    let stem = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    image_path.with_file_name(format!("{stem}.landmarks.json"))
}

/// Validates pixel coordinates against the image and normalizes them.
pub fn normalize_landmarks(points: &[Vec<f64>], width: u32, height: u32) -> Result<LandmarkSet> {
    if points.len() != LANDMARKS {
        return Err(Error::Schema(format!(
            "expected {LANDMARKS} landmark pairs, found {}",
            points.len()
        )));
    }
    let (w, h) = (f64::from(width), f64::from(height));
    let mut out = Vec::with_capacity(LANDMARKS);
    for (index, p) in points.iter().enumerate() {
        let [x, y] = p[..] else {
            return Err(Error::Schema(format!(
                "landmark {index} has {} coordinates",
                p.len()
            )));
        };
        if !(x >= 0.0 && x < w && y >= 0.0 && y < h) {
            return Err(Error::Range {
                index,
                x,
                y,
                width,
                height,
            });
        }
        out.push((x / w, y / h));
    }
    Ok(LandmarkSet { points: out })
}

pub fn read_landmark_file(path: &Path) -> Result<LandmarkFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

pub fn ingest_landmarks(path: &Path, img: &Image) -> Result<FeatureVector> {
    let file = read_landmark_file(path)?;
    Ok(normalize_landmarks(&file.landmarks, img.width, img.height)?.to_feature())
}

/// Appearance followed by frequency features of one patch.
pub fn patch_feature(patch: &Image) -> Result<FeatureVector> {
    let mut values = color_histogram(patch).values;
    values.extend(power_spectrum(patch)?.values);
    Ok(FeatureVector {
        kind: FeatureKind::Patch,
        values,
    })
}

/// Patch feature vectors of one image at one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleFeatures {
    pub scale_n: usize,
    pub patches: Vec<Vec<f64>>,
}

/// All per-scale inputs extracted from one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFeatures {
    pub scales: Vec<ScaleFeatures>,
}

impl ImageFeatures {
    pub fn scale(&self, n: usize) -> Option<&ScaleFeatures> {
        self.scales.iter().find(|s| s.scale_n == n)
    }

    /// Flattened patch vectors in scale order, as written to feature dumps.
    pub fn flatten(&self) -> Vec<Vec<f64>> {
        self.scales
            .iter()
            .flat_map(|s| s.patches.iter().cloned())
            .collect()
    }

    /// Inverse of [`ImageFeatures::flatten`] for a known scale list.
    pub fn unflatten(vectors: Vec<Vec<f64>>, scales: &[usize]) -> Result<Self> {
        let expected: usize = scales.iter().sum();
        if vectors.len() != expected {
            return Err(Error::Schema(format!(
                "expected {expected} patch vectors for scales {scales:?}, found {}",
                vectors.len()
            )));
        }
        let mut it = vectors.into_iter();
        let scales = scales
            .iter()
            .map(|&n| ScaleFeatures {
                scale_n: n,
                patches: it.by_ref().take(n).collect(),
            })
            .collect();
        Ok(ImageFeatures { scales })
    }
}

/// Builds the patch vectors of every requested scale; the biology vector is
/// appended to the first patch of each scale.
pub fn assemble_scale_inputs(
    img: &Image,
    landmarks: &FeatureVector,
    scales: &[usize],
) -> Result<ImageFeatures> {
    if landmarks.len() != BIOLOGY_DIM {
        return Err(Error::DimensionMismatch {
            expected: BIOLOGY_DIM,
            actual: landmarks.len(),
        });
    }
    let mut out = Vec::with_capacity(scales.len());
    for &n in scales {
        let set = split_patches(img, n)?;
        let mut patches = Vec::with_capacity(n);
        for (i, p) in set.patches.iter().enumerate() {
            let mut v = patch_feature(p)?.values;
            if i == 0 {
                v.extend_from_slice(&landmarks.values);
            }
            patches.push(v);
        }
        out.push(ScaleFeatures {
            scale_n: n,
            patches,
        });
    }
    Ok(ImageFeatures { scales: out })
}

/// Loads an image and its landmark sidecar and extracts every scale.
pub fn extract_file(
    image_path: &Path,
    landmark_path: &Path,
    scales: &[usize],
) -> Result<ImageFeatures> {
    let img = load_image(image_path)?;
    let bio = ingest_landmarks(landmark_path, &img)?;
    assemble_scale_inputs(&img, &bio, scales)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_image(w: u32, h: u32, seed: u64) -> Image {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn split_quadrants_of_square() {
        let img = random_image(64, 64, 1);
        let set = split_patches(&img, 4).unwrap();
        assert_eq!(set.patches.len(), 4);
        for p in &set.patches {
            assert_eq!((p.width(), p.height()), (32, 32));
        }
        assert_eq!(set.patches[1].pixel(0, 0), img.pixel(32, 0));
        assert_eq!(set.patches[2].pixel(0, 0), img.pixel(0, 32));
    }

    #[test]
    fn odd_height_bands_use_floor_then_remainder() {
        let img = random_image(24, 23, 2);
        let two = split_patches(&img, 2).unwrap();
        assert_eq!(two.patches[0].height(), 11);
        assert_eq!(two.patches[1].height(), 12);
        let three = split_patches(&img, 3).unwrap();
        let hs: Vec<u32> = three.patches.iter().map(Image::height).collect();
        assert_eq!(hs, vec![7, 7, 9]);
        assert!(matches!(split_patches(&img, 5), Err(Error::BadScale(5))));
        assert!(matches!(split_patches(&img, 0), Err(Error::BadScale(0))));
    }

    #[test]
    fn scale_one_is_identity() {
        let img = random_image(20, 17, 3);
        assert_eq!(split_patches(&img, 1).unwrap().patches, vec![img]);
    }

    #[test]
    fn constant_histogram_has_single_mass() {
        let img = Image::from_fn(32, 32, |_, _| [128, 128, 128]);
        let h = color_histogram(&img);
        for c in 0..3 {
            for b in 0..256 {
                let want = if b == 128 { 1.0 } else { 0.0 };
                assert_eq!(h.values[c * 256 + b], want);
            }
        }
    }

    #[test]
    fn half_black_half_white_histogram() {
        let img = Image::from_fn(16, 16, |x, _| if x < 8 { [0; 3] } else { [255; 3] });
        let h = color_histogram(&img);
        for c in 0..3 {
            assert_eq!(h.values[c * 256], 0.5);
            assert_eq!(h.values[c * 256 + 255], 0.5);
        }
    }

    #[test]
    fn histogram_matches_counting_loop() {
        let img = random_image(64, 64, 4);
        let h = color_histogram(&img);
        for c in 0..3 {
            for b in [0usize, 17, 128, 200, 255] {
                let mut n = 0;
                for y in 0..64 {
                    for x in 0..64 {
                        if img.pixel(x, y)[c] as usize == b {
                            n += 1;
                        }
                    }
                }
                assert_eq!(h.values[c * 256 + b], n as f64 / 4096.0);
            }
        }
    }

    #[test]
    fn resample_identity_when_lengths_match() {
        let p: Vec<f64> = (0..88).map(|i| i as f64 * 0.5).collect();
        let r = resample_linear(&p, 88);
        for (a, b) in p.iter().zip(&r) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(resample_linear(&[3.0], 4), vec![3.0; 4]);
    }

    #[test]
    fn tiny_spectrum_is_rejected() {
        let img = Image::new(1, 5, vec![0; 15]).unwrap();
        assert!(matches!(
            power_spectrum(&img),
            Err(Error::DegenerateImage { .. })
        ));
    }

    #[test]
    fn landmark_bounds_are_exclusive() {
        let mut pts = vec![vec![10.0, 10.0]; 68];
        assert!(normalize_landmarks(&pts, 1024, 1024).is_ok());
        pts[5] = vec![1024.0, 3.0];
        assert!(matches!(
            normalize_landmarks(&pts, 1024, 1024),
            Err(Error::Range { index: 5, .. })
        ));
        pts[5] = vec![-0.5, 3.0];
        assert!(normalize_landmarks(&pts, 1024, 1024).is_err());
        pts.pop();
        assert!(matches!(
            normalize_landmarks(&pts, 1024, 1024),
            Err(Error::Schema(_))
        ));
        let mut bad = vec![vec![1.0, 1.0]; 68];
        bad[0] = vec![1.0];
        assert!(matches!(
            normalize_landmarks(&bad, 64, 64),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn landmark_path_uses_stem() {
        let p = landmark_path_for(Path::new("/data/img_001.png"));
        assert_eq!(p, PathBuf::from("/data/img_001.landmarks.json"));
    }

    #[test]
    fn flatten_round_trips() {
        let img = random_image(32, 32, 5);
        let bio = FeatureVector {
            kind: FeatureKind::Biology,
            values: vec![0.25; BIOLOGY_DIM],
        };
        let f = assemble_scale_inputs(&img, &bio, &ALL_SCALES).unwrap();
        let flat = f.flatten();
        assert_eq!(flat.len(), 10);
        assert_eq!(ImageFeatures::unflatten(flat, &ALL_SCALES).unwrap(), f);
    }
}
