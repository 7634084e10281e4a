//! Per-scale cascades combined under the E1-E4 ensemble schemes.
//!
//! Cross-scale inputs are appended to the first patch vector of the
//! receiving scale. During training they come from the sending cascade's
//! out-of-fold outputs; at inference from its refit forests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cascade::{
    grow_cascade, CascadeModel, GrowthConfig, PlainBuilder, ScaleData, TrainedCascade, AUG_DIM,
};
use crate::divconq::SelectBuilder;
use crate::error::{Error, Result};
use crate::features::{ImageFeatures, ALL_SCALES};
use crate::hybrid::{train_head_pair, HybridBuilder, HybridConfig, HybridStrategy};
use crate::matrix::Matrix;
use crate::prob::ProbVector;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Chain the scales in order, each fed the previous scale's output.
    E1,
    /// E1 plus the whole-image features at the last scale.
    E2,
    /// Each scale fed the outputs of every earlier scale.
    E3,
    /// Every other scale feeds the whole-image base cascade.
    E4,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "e1" => Ok(Scheme::E1),
            "e2" => Ok(Scheme::E2),
            "e3" => Ok(Scheme::E3),
            "e4" => Ok(Scheme::E4),
            other => Err(Error::Config(format!("unknown ensemble scheme {other:?}"))),
        }
    }
}

/// Source of extra columns appended to a scale's first patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtraSource {
    /// Final augmented features of another scale's cascade.
    Augmented(usize),
    /// Raw first-patch features of another scale.
    Raw(usize),
}

/// How each cascade layer is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerStrategy {
    Plain,
    Hybrid(HybridConfig),
    /// Candidate layers of `m` forests reduced to the best 2 + 2 on held-out rows.
    Select { m: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleMember {
    pub scale_n: usize,
    pub extras: Vec<ExtraSource>,
    pub model: CascadeModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub scheme: Scheme,
    pub scales: Vec<usize>,
    /// Cascades in evaluation order; the last one produces the prediction.
    pub members: Vec<ScaleMember>,
    pub growth: GrowthConfig,
    pub strategy: LayerStrategy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub prob: ProbVector,
    pub label: u8,
}

impl From<ProbVector> for Prediction {
    fn from(prob: ProbVector) -> Self {
        Prediction {
            label: prob.label(),
            prob,
        }
    }
}

pub fn normalize_scales(scales: &[usize]) -> Result<Vec<usize>> {
    let mut s = scales.to_vec();
    s.sort_unstable();
    s.dedup();
    if s.is_empty() {
        return Err(Error::Config("at least one scale is required".into()));
    }
    if let Some(&bad) = s.iter().find(|n| !ALL_SCALES.contains(n)) {
        return Err(Error::BadScale(bad));
    }
    Ok(s)
}

/// Evaluation order and cross-scale inputs of every scale under a scheme.
pub fn wiring(scheme: Scheme, scales: &[usize]) -> Result<Vec<(usize, Vec<ExtraSource>)>> {
    let scales = normalize_scales(scales)?;
    let chain = |all_previous: bool| -> Vec<(usize, Vec<ExtraSource>)> {
        scales
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let extras = if all_previous {
                    scales[..i].iter().map(|&p| ExtraSource::Augmented(p)).collect()
                } else if i > 0 {
                    vec![ExtraSource::Augmented(scales[i - 1])]
                } else {
                    Vec::new()
                };
                (n, extras)
            })
            .collect()
    };
    Ok(match scheme {
        Scheme::E1 => chain(false),
        Scheme::E3 => chain(true),
        Scheme::E2 => {
            let mut w = chain(false);
            if w.len() > 1 {
                if !scales.contains(&1) {
                    return Err(Error::Config("scheme e2 needs scale 1".into()));
                }
                w.last_mut().unwrap().1.push(ExtraSource::Raw(1));
            }
            w
        }
        Scheme::E4 => {
            if !scales.contains(&1) {
                return Err(Error::Config("scheme e4 needs the whole-image scale 1".into()));
            }
            let others: Vec<usize> = scales.iter().copied().filter(|&n| n != 1).collect();
            let mut w: Vec<(usize, Vec<ExtraSource>)> =
                others.iter().map(|&n| (n, Vec::new())).collect();
            w.push((1, others.iter().map(|&n| ExtraSource::Augmented(n)).collect()));
            w
        }
    })
}

/// First-layer input width of a scale given its first patch width and the
/// first-patch widths of the raw sources.
pub fn first_layer_dim(patch0_dim: usize, extras: &[ExtraSource], raw_dims: &BTreeMap<usize, usize>) -> usize {
    patch0_dim
        + extras
            .iter()
            .map(|e| match e {
                ExtraSource::Augmented(_) => AUG_DIM,
                ExtraSource::Raw(n) => raw_dims[n],
            })
            .sum::<usize>()
}

pub(crate) fn train_member(
    data: &ScaleData,
    y: &[u8],
    valid: Option<(&ScaleData, &[u8])>,
    cfg: &GrowthConfig,
    strategy: &LayerStrategy,
) -> Result<TrainedCascade> {
    match strategy {
        LayerStrategy::Plain => grow_cascade(data, y, valid, cfg, &mut PlainBuilder),
        LayerStrategy::Hybrid(h) if h.strategy == HybridStrategy::H1 => {
            h.validate()?;
            let mut t = grow_cascade(data, y, valid, cfg, &mut PlainBuilder)?;
            let hc = HybridConfig {
                seed: seed::derive(h.seed, cfg.seed),
                ..h.clone()
            };
            let (head, _) = train_head_pair(&t.final_oof, y, &hc)?;
            t.model.terminal_head = Some(head);
            Ok(t)
        }
        LayerStrategy::Hybrid(h) => {
            h.validate()?;
            grow_cascade(data, y, valid, cfg, &mut HybridBuilder::new(h.clone()))
        }
        LayerStrategy::Select { m } => {
            grow_cascade(data, y, valid, cfg, &mut SelectBuilder::new(*m)?)
        }
    }
}

fn extras_matrix(
    extras: &[ExtraSource],
    rows: usize,
    augs: &BTreeMap<usize, Matrix>,
    data: &BTreeMap<usize, ScaleData>,
) -> Matrix {
    extras.iter().fold(Matrix::zeros(rows, 0), |acc, e| match e {
        ExtraSource::Augmented(n) => acc.hstack(&augs[n]),
        ExtraSource::Raw(n) => acc.hstack(&data[n].patches[0]),
    })
}

fn scale_data(samples: &[ImageFeatures], scales: &[usize]) -> Result<BTreeMap<usize, ScaleData>> {
    scales
        .iter()
        .map(|&n| Ok((n, ScaleData::from_features(samples, n)?)))
        .collect()
}

/// Trains every scale cascade under `scheme`, optionally forwarding a
/// held-out set through each layer as it is built.
pub fn train_ensemble_with(
    samples: &[ImageFeatures],
    y: &[u8],
    valid: Option<(&[ImageFeatures], &[u8])>,
    scheme: Scheme,
    scales: &[usize],
    cfg: &GrowthConfig,
    strategy: &LayerStrategy,
) -> Result<EnsembleModel> {
    cfg.validate()?;
    if samples.len() != y.len() {
        return Err(Error::LengthMismatch(samples.len(), y.len()));
    }
    let scales = normalize_scales(scales)?;
    let plan = wiring(scheme, &scales)?;
    let data = scale_data(samples, &scales)?;
    let valid_data = valid.map(|(v, _)| scale_data(v, &scales)).transpose()?;
    let raw_dims: BTreeMap<usize, usize> = data.iter().map(|(&n, d)| (n, d.patches[0].cols())).collect();

    let mut augs: BTreeMap<usize, Matrix> = BTreeMap::new();
    let mut valid_augs: BTreeMap<usize, Matrix> = BTreeMap::new();
    let mut members = Vec::with_capacity(plan.len());
    for (scale_n, extras) in plan {
        let input = data[&scale_n].with_extra(&extras_matrix(&extras, y.len(), &augs, &data));
        let valid_input = match (&valid_data, valid) {
            (Some(vd), Some((v, _))) => {
                Some(vd[&scale_n].with_extra(&extras_matrix(&extras, v.len(), &valid_augs, vd)))
            }
            _ => None,
        };
        let member_cfg = GrowthConfig {
            seed: seed::derive(cfg.seed, scale_n as u64),
            ..cfg.clone()
        };
        let trained = train_member(
            &input,
            y,
            valid_input.as_ref().zip(valid.map(|(_, vy)| vy)),
            &member_cfg,
            strategy,
        )?;
        let expected = first_layer_dim(raw_dims[&scale_n], &extras, &raw_dims);
        if trained.model.first_layer_dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: trained.model.first_layer_dim(),
            });
        }
        if let Some(vi) = &valid_input {
            valid_augs.insert(scale_n, trained.model.augmented_matrix(vi)?);
        }
        augs.insert(scale_n, trained.final_oof);
        members.push(ScaleMember {
            scale_n,
            extras,
            model: trained.model,
        });
    }
    Ok(EnsembleModel {
        scheme,
        scales,
        members,
        growth: cfg.clone(),
        strategy: strategy.clone(),
    })
}

pub fn train_ensemble(
    samples: &[ImageFeatures],
    y: &[u8],
    scheme: Scheme,
    scales: &[usize],
    cfg: &GrowthConfig,
    strategy: &LayerStrategy,
) -> Result<EnsembleModel> {
    train_ensemble_with(samples, y, None, scheme, scales, cfg, strategy)
}

impl EnsembleModel {
    fn member_inputs(
        &self,
        sample: &ImageFeatures,
        member: &ScaleMember,
        augs: &BTreeMap<usize, Vec<f64>>,
    ) -> Result<Vec<Vec<f64>>> {
        let sf = sample
            .scale(member.scale_n)
            .ok_or_else(|| Error::Schema(format!("sample lacks scale {}", member.scale_n)))?;
        let mut patches = sf.patches.clone();
        for e in &member.extras {
            match e {
                ExtraSource::Augmented(n) => patches[0].extend_from_slice(&augs[n]),
                ExtraSource::Raw(n) => {
                    let raw = sample
                        .scale(*n)
                        .ok_or_else(|| Error::Schema(format!("sample lacks scale {n}")))?;
                    patches[0].extend_from_slice(&raw.patches[0]);
                }
            }
        }
        if patches[0].len() != member.model.first_layer_dim() {
            return Err(Error::DimensionMismatch {
                expected: member.model.first_layer_dim(),
                actual: patches[0].len(),
            });
        }
        Ok(patches)
    }

    /// Augmented outputs of every member for one sample.
    pub fn member_outputs(&self, sample: &ImageFeatures) -> Result<BTreeMap<usize, Vec<f64>>> {
        let mut augs = BTreeMap::new();
        for m in &self.members {
            let patches = self.member_inputs(sample, m, &augs)?;
            augs.insert(m.scale_n, m.model.augmented(&patches)?);
        }
        Ok(augs)
    }

    pub fn predict(&self, sample: &ImageFeatures) -> Result<Prediction> {
        let augs = self.member_outputs(sample)?;
        let last = self.members.last().expect("ensemble has members");
        Ok(last.model.finish(&augs[&last.scale_n])?.into())
    }

    pub fn predict_batch(&self, samples: &[ImageFeatures]) -> Result<Vec<Prediction>> {
        use rayon::prelude::*;
        samples.par_iter().map(|s| self.predict(s)).collect()
    }

    /// `(scale, first-layer input width)` per member.
    pub fn first_layer_dims(&self) -> Vec<(usize, usize)> {
        self.members
            .iter()
            .map(|m| (m.scale_n, m.model.first_layer_dim()))
            .collect()
    }

    pub fn layer_counts(&self) -> Vec<(usize, usize)> {
        self.members
            .iter()
            .map(|m| (m.scale_n, m.model.layers.len()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let plan = wiring(self.scheme, &self.scales)?;
        if plan.len() != self.members.len() {
            return Err(Error::Schema("member count differs from scheme wiring".into()));
        }
        for ((n, extras), m) in plan.iter().zip(&self.members) {
            if *n != m.scale_n || *extras != m.extras || m.model.scale_n != *n {
                return Err(Error::Schema("member order differs from scheme wiring".into()));
            }
            m.model.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn e4_routes_everything_into_scale_one() {
        let w = wiring(Scheme::E4, &[1, 2, 3, 4]).unwrap();
        let order: Vec<usize> = w.iter().map(|(n, _)| *n).collect();
        assert_eq!(order, vec![2, 3, 4, 1]);
        assert_eq!(
            w[3].1,
            vec![
                ExtraSource::Augmented(2),
                ExtraSource::Augmented(3),
                ExtraSource::Augmented(4)
            ]
        );
        let raw = BTreeMap::from([(1, 1168), (2, 1168), (3, 1168), (4, 1168)]);
        assert_eq!(first_layer_dim(1168, &w[3].1, &raw), 1192);
    }

    #[test]
    fn chain_schemes() {
        let e1 = wiring(Scheme::E1, &[4, 3, 2, 1]).unwrap();
        assert_eq!(e1[0], (1, vec![]));
        assert_eq!(e1[3], (4, vec![ExtraSource::Augmented(3)]));
        let e2 = wiring(Scheme::E2, &[1, 2, 3, 4]).unwrap();
        assert_eq!(
            e2[3].1,
            vec![ExtraSource::Augmented(3), ExtraSource::Raw(1)]
        );
        let e3 = wiring(Scheme::E3, &[1, 2, 3, 4]).unwrap();
        assert_eq!(e3[3].1.len(), 3);
        let raw = BTreeMap::from([(1, 1168), (4, 1168)]);
        assert_eq!(first_layer_dim(1168, &e3[3].1, &raw) - 1168, 24);
        assert_eq!(first_layer_dim(1168, &e2[3].1, &raw), 1168 + 8 + 1168);
    }

    #[test]
    fn single_scale_is_a_plain_cascade() {
        for s in [Scheme::E1, Scheme::E2, Scheme::E3, Scheme::E4] {
            assert_eq!(wiring(s, &[1]).unwrap(), vec![(1, vec![])]);
        }
    }

    #[test]
    fn bad_scale_sets() {
        assert!(matches!(wiring(Scheme::E4, &[2, 3]), Err(Error::Config(_))));
        assert!(matches!(wiring(Scheme::E1, &[1, 5]), Err(Error::BadScale(5))));
        assert!(matches!(wiring(Scheme::E1, &[]), Err(Error::Config(_))));
        assert!("e5".parse::<Scheme>().is_err());
        assert_eq!("E4".parse::<Scheme>().unwrap(), Scheme::E4);
    }
}
