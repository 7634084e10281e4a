//! Run configuration and the top-level training driver.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cascade::{GrowthConfig, AUG_DIM};
use crate::divconq::{train_dnc, DncConfig, DncModel};
use crate::error::{Error, Result};
use crate::features::{ImageFeatures, ALL_SCALES};
use crate::forest::{DEFAULT_FOLDS, DEFAULT_TREES};
use crate::hybrid::{HybridConfig, HybridStrategy};
use crate::multiscale::{normalize_scales, train_ensemble, EnsembleModel, LayerStrategy, Prediction, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HybridMode {
    Off,
    H1,
    H2,
    H3,
}

impl std::str::FromStr for HybridMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "off" => Ok(HybridMode::Off),
            "h1" => Ok(HybridMode::H1),
            "h2" => Ok(HybridMode::H2),
            "h3" => Ok(HybridMode::H3),
            other => Err(Error::Config(format!("unknown hybrid mode {other:?}"))),
        }
    }
}

/// Parses `8`, `16-8`, `128-8`, ... into layer widths.
pub fn parse_head_dims(s: &str) -> Result<Vec<usize>> {
    s.split('-')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad head dims {s:?}")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridSettings {
    pub mode: HybridMode,
    pub head_dims: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for HybridSettings {
    fn default() -> Self {
        HybridSettings {
            mode: HybridMode::Off,
            head_dims: vec![AUG_DIM],
            lr: 0.01,
            epochs: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DncSettings {
    pub enabled: bool,
    pub t: usize,
    pub r: f64,
    pub m: usize,
}

impl Default for DncSettings {
    fn default() -> Self {
        let d = DncConfig::default();
        DncSettings {
            enabled: false,
            t: d.t_repeats,
            r: d.ratio_r,
            m: d.m_forests,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scheme: Scheme,
    pub scales: Vec<usize>,
    pub k: usize,
    pub max_layers: usize,
    /// Non-improving layers tolerated before stopping; 0 disables early stopping.
    pub patience: usize,
    pub trees_per_forest: usize,
    pub seed: u64,
    pub hybrid: HybridSettings,
    pub dnc: DncSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scheme: Scheme::E4,
            scales: ALL_SCALES.to_vec(),
            k: DEFAULT_FOLDS,
            max_layers: 20,
            patience: 2,
            trees_per_forest: DEFAULT_TREES,
            seed: 0,
            hybrid: HybridSettings::default(),
            dnc: DncSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn growth(&self) -> GrowthConfig {
        GrowthConfig {
            max_layers: self.max_layers,
            patience: if self.patience == 0 { usize::MAX } else { self.patience },
            k: self.k,
            n_trees: self.trees_per_forest,
            seed: self.seed,
        }
    }

    pub fn hybrid_config(&self) -> Option<HybridConfig> {
        let strategy = match self.hybrid.mode {
            HybridMode::Off => return None,
            HybridMode::H1 => HybridStrategy::H1,
            HybridMode::H2 => HybridStrategy::H2,
            HybridMode::H3 => HybridStrategy::H3,
        };
        Some(HybridConfig {
            strategy,
            head_dims: self.hybrid.head_dims.clone(),
            lr: self.hybrid.lr,
            epochs: self.hybrid.epochs,
            seed: self.seed,
            ..HybridConfig::default()
        })
    }

    pub fn strategy(&self) -> LayerStrategy {
        match self.hybrid_config() {
            Some(h) => LayerStrategy::Hybrid(h),
            None => LayerStrategy::Plain,
        }
    }

    pub fn dnc_config(&self) -> DncConfig {
        DncConfig {
            t_repeats: self.dnc.t,
            ratio_r: self.dnc.r,
            m_forests: self.dnc.m,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        normalize_scales(&self.scales)?;
        crate::multiscale::wiring(self.scheme, &self.scales)?;
        self.growth().validate()?;
        if let Some(h) = self.hybrid_config() {
            h.validate()?;
            if self.dnc.enabled {
                return Err(Error::Config(
                    "hybrid heads and divide-and-conquer training cannot be combined".into(),
                ));
            }
        }
        if self.dnc.enabled {
            self.dnc_config().validate()?;
        }
        Ok(())
    }
}

/// Trained detector: a single ensemble or an averaged set of repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "model", rename_all = "snake_case")]
pub enum DetectorModel {
    Ensemble(EnsembleModel),
    DivideAndConquer(DncModel),
}

impl DetectorModel {
    pub fn predict(&self, sample: &ImageFeatures) -> Result<Prediction> {
        match self {
            DetectorModel::Ensemble(m) => m.predict(sample),
            DetectorModel::DivideAndConquer(m) => m.predict(sample),
        }
    }

    pub fn ensembles(&self) -> Vec<&EnsembleModel> {
        match self {
            DetectorModel::Ensemble(m) => vec![m],
            DetectorModel::DivideAndConquer(m) => m.members.iter().collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DetectorModel::Ensemble(m) => m.validate(),
            DetectorModel::DivideAndConquer(m) => m.validate(),
        }
    }
}

impl crate::eval::Detector for DetectorModel {
    fn predict(&self, sample: &ImageFeatures) -> Result<Prediction> {
        DetectorModel::predict(self, sample)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repeat: Option<usize>,
    pub scale_n: usize,
    pub layer_scores: Vec<f64>,
    pub kept_layers: usize,
    pub best_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub n_train: usize,
    pub members: Vec<MemberReport>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub resident_rows: Vec<usize>,
    pub wall_time_secs: f64,
}

fn member_reports(e: &EnsembleModel, repeat: Option<usize>) -> impl Iterator<Item = MemberReport> + '_ {
    e.members.iter().map(move |m| MemberReport {
        repeat,
        scale_n: m.scale_n,
        layer_scores: m.model.layer_scores.clone(),
        kept_layers: m.model.layers.len(),
        best_score: m.model.best_score,
    })
}

/// Trains the detector described by `cfg`.
pub fn train(samples: &[ImageFeatures], y: &[u8], cfg: &RunConfig) -> Result<(DetectorModel, TrainReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let (model, members, resident_rows) = if cfg.dnc.enabled {
        let m = train_dnc(samples, y, &cfg.dnc_config(), &cfg.growth(), cfg.scheme, &cfg.scales)?;
        let members = m
            .members
            .iter()
            .enumerate()
            .flat_map(|(t, e)| member_reports(e, Some(t)))
            .collect();
        let resident = m.splits.iter().map(|s| s.resident_rows()).collect();
        (DetectorModel::DivideAndConquer(m), members, resident)
    } else {
        let e = train_ensemble(samples, y, cfg.scheme, &cfg.scales, &cfg.growth(), &cfg.strategy())?;
        let members = member_reports(&e, None).collect();
        (DetectorModel::Ensemble(e), members, Vec::new())
    };
    Ok((
        model,
        TrainReport {
            n_train: y.len(),
            members,
            resident_rows,
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_settings() {
        let c = RunConfig::default();
        assert_eq!(c.max_layers, 20);
        assert_eq!(c.patience, 2);
        assert_eq!(c.trees_per_forest, 100);
        assert_eq!(c.scales, vec![1, 2, 3, 4]);
        assert_eq!(c.scheme, Scheme::E4);
        assert_eq!((c.dnc.t, c.dnc.r, c.dnc.m), (5, 0.9, 16));
        assert_eq!(c.hybrid.lr, 0.01);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn head_dims_parse() {
        assert_eq!(parse_head_dims("16-8").unwrap(), vec![16, 8]);
        assert_eq!(parse_head_dims("8").unwrap(), vec![8]);
        assert!(parse_head_dims("a-8").is_err());
    }

    #[test]
    fn hybrid_with_dnc_is_a_config_error() {
        let mut c = RunConfig::default();
        c.hybrid.mode = HybridMode::H3;
        c.dnc.enabled = true;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
