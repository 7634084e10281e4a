//! Divide-and-conquer training: each repeat trains on a random `r` fraction
//! of the data with `m`-forest candidate layers, keeps the best two random and
//! best two completely random forests per layer judged on both portions, and
//! the repeats are averaged at inference.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cascade::{BuiltLayer, CascadeLayer, GrowthConfig, LayerBuilder, LayerContext, Selection};
use crate::error::{Error, Result};
use crate::features::ImageFeatures;
use crate::forest::{kfold_augmented, Forest, ForestKind, LayerSpec};
use crate::matrix::Matrix;
use crate::multiscale::{train_ensemble_with, EnsembleModel, LayerStrategy, Prediction, Scheme};
use crate::prob::ProbVector;
use crate::seed;

/// Forests kept per kind after selection.
pub const KEEP_PER_KIND: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DncConfig {
    pub t_repeats: usize,
    pub ratio_r: f64,
    pub m_forests: usize,
    pub seed: u64,
}

impl Default for DncConfig {
    fn default() -> Self {
        DncConfig {
            t_repeats: 5,
            ratio_r: 0.9,
            m_forests: 16,
            seed: 0,
        }
    }
}

impl DncConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio_r > 0.0 && self.ratio_r < 1.0) {
            return Err(Error::Config(format!("ratio r must lie in (0, 1), got {}", self.ratio_r)));
        }
        if self.t_repeats == 0 {
            return Err(Error::Config("at least one repeat is required".into()));
        }
        check_m(self.m_forests)
    }
}

fn check_m(m: usize) -> Result<()> {
    if m < 4 || m % 2 != 0 {
        return Err(Error::Config(format!("m must be even and at least 4, got {m}")));
    }
    Ok(())
}

/// Stratified random partition of `0..labels.len()` into `(D1, D2)` with
/// `|D1| = round(r |D|)`, distributed over the classes by largest remainder
/// so each class contributes within one sample of `r` times its size.
pub fn split_dataset(labels: &[u8], r: f64, seed_: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::Config(format!("ratio r must lie in (0, 1), got {r}")));
    }
    let classes: Vec<Vec<usize>> = [0u8, 1]
        .iter()
        .map(|&c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
        .collect();
    if classes.iter().any(Vec::is_empty) {
        return Err(Error::TooFewSamples("split needs both classes".into()));
    }
    let total = (r * labels.len() as f64).round() as usize;
    let exact: Vec<f64> = classes.iter().map(|c| r * c.len() as f64).collect();
    let mut take: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..2).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut missing = total.saturating_sub(take.iter().sum());
    for &c in order.iter().cycle().take(4) {
        if missing == 0 {
            break;
        }
        if take[c] < classes[c].len() {
            take[c] += 1;
            missing -= 1;
        }
    }
    let mut rng = seed::rng(seed_);
    let (mut d1, mut d2) = (Vec::new(), Vec::new());
    for (members, &n) in classes.into_iter().zip(&take) {
        let mut members = members;
        members.shuffle(&mut rng);
        d1.extend_from_slice(&members[..n]);
        d2.extend_from_slice(&members[n..]);
    }
    if d1.is_empty() || d2.is_empty() {
        return Err(Error::TooFewSamples(format!(
            "ratio {r} leaves an empty portion of {} samples",
            labels.len()
        )));
    }
    d1.sort_unstable();
    d2.sort_unstable();
    Ok((d1, d2))
}

/// A layer of `m` forests with their out-of-fold outputs (two columns each).
pub struct CandidateLayer {
    pub forests: Vec<Forest>,
    pub oof: Matrix,
}

pub fn train_candidate_layer(
    x: &Matrix,
    y: &[u8],
    m: usize,
    k: usize,
    n_trees: usize,
    seed_: u64,
) -> Result<CandidateLayer> {
    check_m(m)?;
    let out = kfold_augmented(x, y, &LayerSpec::balanced(m, n_trees), k, seed_)?;
    Ok(CandidateLayer {
        forests: out.forests,
        oof: out.oof,
    })
}

fn accuracy_of(probs: impl Iterator<Item = ProbVector>, y: &[u8]) -> f64 {
    let hits = probs.zip(y).filter(|(p, &l)| p.label() == l).count();
    hits as f64 / y.len() as f64
}

/// Scores each forest by the mean of its out-of-fold accuracy on D1 and its
/// direct accuracy on D2, and keeps the top two of each kind (ties to the
/// lower index). Selected indices are returned in ascending order within
/// kind, random forests first.
pub fn select_forests(layer: &CandidateLayer, y1: &[u8], x2: &Matrix, y2: &[u8]) -> Result<Selection> {
    if y2.is_empty() {
        return Err(Error::TooFewSamples("selection needs held-out rows".into()));
    }
    let mut scores = Vec::with_capacity(layer.forests.len());
    for (f, forest) in layer.forests.iter().enumerate() {
        let fit = accuracy_of(
            (0..y1.len()).map(|i| {
                let r = layer.oof.row(i);
                ProbVector::new(r[2 * f], r[2 * f + 1])
            }),
            y1,
        );
        let held = accuracy_of(forest.predict_matrix(x2)?.into_iter(), y2);
        scores.push((fit + held) / 2.0);
    }
    let kinds: Vec<ForestKind> = layer.forests.iter().map(|f| f.kind).collect();
    let mut selected = Vec::with_capacity(2 * KEEP_PER_KIND);
    for kind in [ForestKind::Random, ForestKind::CompletelyRandom] {
        let mut of_kind: Vec<usize> = (0..kinds.len()).filter(|&i| kinds[i] == kind).collect();
        of_kind.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut top: Vec<usize> = of_kind.into_iter().take(KEEP_PER_KIND).collect();
        top.sort_unstable();
        selected.extend(top);
    }
    Ok(Selection {
        candidate_kinds: kinds,
        scores,
        selected,
    })
}

/// Layer builder for divide-and-conquer repeats; requires held-out rows.
pub struct SelectBuilder {
    m: usize,
}

impl SelectBuilder {
    pub fn new(m: usize) -> Result<Self> {
        check_m(m)?;
        Ok(SelectBuilder { m })
    }
}

impl LayerBuilder for SelectBuilder {
    fn build(&mut self, ctx: LayerContext<'_>) -> Result<BuiltLayer> {
        let (x2, y2) = ctx
            .valid
            .ok_or_else(|| Error::Config("forest selection needs a held-out portion".into()))?;
        let candidate = train_candidate_layer(ctx.x, ctx.y, self.m, ctx.k, ctx.n_trees, ctx.seed)?;
        let selection = select_forests(&candidate, ctx.y, x2, y2)?;
        let mut oof = Matrix::zeros(ctx.y.len(), 2 * selection.selected.len());
        for i in 0..ctx.y.len() {
            let src = candidate.oof.row(i);
            let dst = oof.row_mut(i);
            for (slot, &f) in selection.selected.iter().enumerate() {
                dst[2 * slot..2 * slot + 2].copy_from_slice(&src[2 * f..2 * f + 2]);
            }
        }
        let mut forests: Vec<Option<Forest>> = candidate.forests.into_iter().map(Some).collect();
        let kept = selection
            .selected
            .iter()
            .map(|&f| forests[f].take().expect("selected once"))
            .collect();
        Ok(BuiltLayer {
            layer: CascadeLayer {
                forests: kept,
                input_dim: ctx.x.cols(),
                head: None,
                selection: Some(selection),
            },
            carry: oof.clone(),
            oof,
        })
    }
}

/// Index partition used by one repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DncSplit {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
}

impl DncSplit {
    /// Training rows held by the repeat at once.
    pub fn resident_rows(&self) -> usize {
        self.train.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DncModel {
    pub members: Vec<EnsembleModel>,
    pub splits: Vec<DncSplit>,
    pub config: DncConfig,
}

pub fn train_dnc(
    samples: &[ImageFeatures],
    y: &[u8],
    cfg: &DncConfig,
    growth: &GrowthConfig,
    scheme: Scheme,
    scales: &[usize],
) -> Result<DncModel> {
    cfg.validate()?;
    if samples.len() != y.len() {
        return Err(Error::LengthMismatch(samples.len(), y.len()));
    }
    let mut members = Vec::with_capacity(cfg.t_repeats);
    let mut splits = Vec::with_capacity(cfg.t_repeats);
    for t in 0..cfg.t_repeats as u64 {
        let (d1, d2) = split_dataset(y, cfg.ratio_r, seed::derive(cfg.seed, t))?;
        let pick = |idx: &[usize]| -> (Vec<ImageFeatures>, Vec<u8>) {
            (
                idx.iter().map(|&i| samples[i].clone()).collect(),
                idx.iter().map(|&i| y[i]).collect(),
            )
        };
        let (s1, y1) = pick(&d1);
        let (s2, y2) = pick(&d2);
        let member_growth = GrowthConfig {
            seed: seed::derive(growth.seed, seed::derive(cfg.seed, t)),
            ..growth.clone()
        };
        let member = train_ensemble_with(
            &s1,
            &y1,
            Some((&s2, &y2)),
            scheme,
            scales,
            &member_growth,
            &LayerStrategy::Select { m: cfg.m_forests },
        )?;
        members.push(member);
        splits.push(DncSplit {
            train: d1,
            valid: d2,
        });
    }
    Ok(DncModel {
        members,
        splits,
        config: cfg.clone(),
    })
}

impl DncModel {
    /// Mean of the member predictions.
    pub fn predict(&self, sample: &ImageFeatures) -> Result<Prediction> {
        let probs = self
            .members
            .iter()
            .map(|m| m.predict(sample).map(|p| p.prob))
            .collect::<Result<Vec<_>>>()?;
        Ok(ProbVector::mean(&probs).into())
    }

    pub fn predict_batch(&self, samples: &[ImageFeatures]) -> Result<Vec<Prediction>> {
        use rayon::prelude::*;
        samples.par_iter().map(|s| self.predict(s)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() || self.members.len() != self.splits.len() {
            return Err(Error::Schema("divide-and-conquer members and splits differ".into()));
        }
        self.members.iter().try_for_each(EnsembleModel::validate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_follow_ratio() {
        let y: Vec<u8> = (0..100).map(|i| u8::from(i % 2 == 0)).collect();
        let (d1, d2) = split_dataset(&y, 0.9, 1).unwrap();
        assert_eq!((d1.len(), d2.len()), (90, 10));
        let mut all: Vec<usize> = d1.iter().chain(&d2).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn split_total_is_rounded_overall() {
        // 7 + 4 samples at r = 0.5: per-class floors give 3 + 2 = 5, the
        // overall target round(5.5) = 6 comes from the larger remainder.
        let y: Vec<u8> = (0..11).map(|i| u8::from(i >= 7)).collect();
        let (d1, _) = split_dataset(&y, 0.5, 3).unwrap();
        assert_eq!(d1.len(), 6);
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(matches!(split_dataset(&[0, 1], 1.0, 0), Err(Error::Config(_))));
        assert!(matches!(split_dataset(&[1, 1, 1], 0.5, 0), Err(Error::TooFewSamples(_))));
    }

    #[test]
    fn m_must_be_even_and_at_least_four() {
        assert!(SelectBuilder::new(4).is_ok());
        assert!(SelectBuilder::new(5).is_err());
        assert!(SelectBuilder::new(2).is_err());
        let bad = DncConfig {
            ratio_r: 1.0,
            ..DncConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
