//! Manifests, metrics, perturbations, robustness sweeps and the synthetic
//! fixture generator.

pub mod manifest;
pub mod metrics;
pub mod perturb;
pub mod synth;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divconq::DncModel;
use crate::error::{Error, Result};
use crate::features::{
    assemble_scale_inputs, extract_file, load_image, normalize_landmarks, read_landmark_file,
    FeatureVector, ImageFeatures,
};
use crate::multiscale::{EnsembleModel, Prediction};
use crate::seed;

pub use manifest::{stratified_split, Manifest, ManifestEntry, SplitTag};
pub use metrics::{accuracy, auc, MetricReport};
pub use perturb::{
    perturb_brightness, perturb_jpeg, perturb_noise, perturb_resize, psnr, Perturbation,
};

/// Anything that maps extracted features to a prediction.
pub trait Detector: Sync {
    fn predict(&self, sample: &ImageFeatures) -> Result<Prediction>;
}

impl Detector for EnsembleModel {
    fn predict(&self, sample: &ImageFeatures) -> Result<Prediction> {
        EnsembleModel::predict(self, sample)
    }
}

impl Detector for DncModel {
    fn predict(&self, sample: &ImageFeatures) -> Result<Prediction> {
        DncModel::predict(self, sample)
    }
}

/// Extracts features for every entry in parallel, keeping per-entry errors.
pub fn extract_entries(entries: &[&ManifestEntry], scales: &[usize]) -> Vec<Result<ImageFeatures>> {
    entries
        .par_iter()
        .map(|e| extract_file(&e.image_path, &e.landmark_path, scales))
        .collect()
}

/// Extracts features for every entry, failing on the first error.
pub fn extract_all(entries: &[&ManifestEntry], scales: &[usize]) -> Result<Vec<ImageFeatures>> {
    extract_entries(entries, scales).into_iter().collect()
}

pub fn scores(model: &dyn Detector, samples: &[ImageFeatures]) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| model.predict(s).map(|p| p.prob.p_fake()))
        .collect()
}

pub fn evaluate(model: &dyn Detector, samples: &[ImageFeatures], labels: &[u8]) -> Result<MetricReport> {
    MetricReport::compute(&scores(model, samples)?, labels)
}

/// Perturbation levels to sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub resize: Vec<u32>,
    pub jpeg: Vec<u8>,
    pub brightness: Vec<f64>,
    pub noise: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            resize: perturb::RESIZE_SIZES.to_vec(),
            jpeg: vec![20, 40, 60, 80, 100],
            brightness: vec![0.5, 0.75, 1.0, 1.25, 1.5],
            noise: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
        }
    }
}

impl SweepGrid {
    pub fn perturbations(&self) -> Vec<Perturbation> {
        let mut out = Vec::new();
        out.extend(self.resize.iter().map(|&s| Perturbation::Resize(s)));
        out.extend(self.jpeg.iter().map(|&q| Perturbation::Jpeg(q)));
        out.extend(self.brightness.iter().map(|&f| Perturbation::Brightness(f)));
        out.extend(self.noise.iter().map(|&s| Perturbation::Noise(s)));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub perturbation: String,
    pub level: String,
    pub acc: f64,
    pub auc: f64,
    pub n: usize,
}

struct TestImage {
    image: crate::features::Image,
    landmarks: FeatureVector,
    label: u8,
}

fn load_test_image(e: &ManifestEntry) -> Result<TestImage> {
    let image = load_image(&e.image_path)?;
    let file = read_landmark_file(&e.landmark_path)?;
    // Normalized against the original raster so resizing keeps them valid.
    let landmarks = normalize_landmarks(&file.landmarks, image.width(), image.height())?.to_feature();
    Ok(TestImage {
        image,
        landmarks,
        label: e.label,
    })
}

/// Applies every grid perturbation to the manifest's test split and scores
/// the model on each perturbed copy. Noise draws use a per-image stream of
/// `seed`.
pub fn robustness_sweep(
    model: &dyn Detector,
    manifest: &Manifest,
    grid: &SweepGrid,
    scales: &[usize],
    seed_: u64,
) -> Result<Vec<SweepRow>> {
    let test = manifest.split(SplitTag::Test);
    if test.is_empty() {
        return Err(Error::TooFewSamples("manifest has no test entries".into()));
    }
    let images = test
        .par_iter()
        .map(|e| load_test_image(e))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<u8> = images.iter().map(|t| t.label).collect();
    let mut rows = Vec::new();
    for p in grid.perturbations() {
        let scores = images
            .par_iter()
            .enumerate()
            .map(|(i, t)| {
                let img = p.apply(&t.image, seed::derive(seed_, i as u64))?;
                let f = assemble_scale_inputs(&img, &t.landmarks, scales)?;
                Ok(model.predict(&f)?.prob.p_fake())
            })
            .collect::<Result<Vec<f64>>>()?;
        let r = MetricReport::compute(&scores, &labels)?;
        rows.push(SweepRow {
            perturbation: p.name().to_string(),
            level: p.level(),
            acc: r.acc,
            auc: r.auc,
            n: labels.len(),
        });
    }
    Ok(rows)
}

/// Writes sweep rows as `perturbation,level,acc,auc,n`.
pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::decode(path.display(), e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::decode(path.display(), e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
