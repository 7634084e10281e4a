//! Hierarchical cascade forest: layer `j` reads the features of patch
//! `j mod N` together with the previous layer's augmented features.
//!
//! Growth is shared by the plain, hybrid and divide-and-conquer variants;
//! they differ only in how a single layer is built (see [`LayerBuilder`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::ImageFeatures;
use crate::forest::{kfold_augmented, Forest, LayerSpec, DEFAULT_FOLDS, DEFAULT_TREES};
use crate::hybrid::DenseHead;
use crate::matrix::Matrix;
use crate::prob::{self, ProbVector};
use crate::seed;

/// Width of the augmented feature block exchanged between layers.
pub const AUG_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthConfig {
    pub max_layers: usize,
    /// Consecutive non-improving layers tolerated; `usize::MAX` disables
    /// early stopping.
    pub patience: usize,
    pub k: usize,
    pub n_trees: usize,
    pub seed: u64,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        GrowthConfig {
            max_layers: 20,
            patience: 2,
            k: DEFAULT_FOLDS,
            n_trees: DEFAULT_TREES,
            seed: 0,
        }
    }
}

impl GrowthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_layers == 0 {
            return Err(Error::Config("max_layers must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.k < 2 {
            return Err(Error::Config("k must be at least 2".into()));
        }
        if self.n_trees == 0 {
            return Err(Error::Config("trees per forest must be at least 1".into()));
        }
        Ok(())
    }
}

/// Dense refiner attached to a forest layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerHead {
    pub refiner: DenseHead,
    /// When set the head reads `[previous refined ++ current augmented]`.
    pub stacks_previous: bool,
}

/// Forest ranking recorded by divide-and-conquer layer selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub candidate_kinds: Vec<crate::forest::ForestKind>,
    pub scores: Vec<f64>,
    pub selected: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeLayer {
    pub forests: Vec<Forest>,
    pub input_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<LayerHead>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<Selection>,
}

impl CascadeLayer {
    /// Concatenated forest outputs, two values per forest.
    pub fn forest_outputs(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        let mut out = Vec::with_capacity(2 * self.forests.len());
        for f in &self.forests {
            out.extend_from_slice(&f.predict(x)?.0);
        }
        Ok(out)
    }

    /// Vector passed to the next layer: the forest outputs, or their
    /// refinement when a head is attached.
    pub fn carry(&self, outputs: &[f64], prev_carry: Option<&[f64]>) -> Result<Vec<f64>> {
        match &self.head {
            None => Ok(outputs.to_vec()),
            Some(h) if h.stacks_previous => match prev_carry {
                Some(prev) => {
                    let mut input = prev.to_vec();
                    input.extend_from_slice(outputs);
                    h.refiner.forward(&input)
                }
                None => h.refiner.forward(outputs),
            },
            Some(h) => h.refiner.forward(outputs),
        }
    }

    /// `(forest outputs, carry)` for every row of `x`.
    pub fn forward_matrix(&self, x: &Matrix, prev_carry: Option<&Matrix>) -> Result<(Matrix, Matrix)> {
        let mut outs = Vec::with_capacity(x.rows());
        let mut carries = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let o = self.forest_outputs(x.row(i))?;
            let c = self.carry(&o, prev_carry.map(|p| p.row(i)))?;
            outs.push(o);
            carries.push(c);
        }
        Ok((Matrix::from_rows(&outs), Matrix::from_rows(&carries)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeModel {
    pub scale_n: usize,
    pub layers: Vec<CascadeLayer>,
    /// Out-of-fold score of every grown layer, including trimmed ones.
    pub layer_scores: Vec<f64>,
    /// Running maximum of `layer_scores`; the score of the kept prefix.
    pub best_score: f64,
    /// Single refiner applied to the final outputs (Hybrid1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_head: Option<DenseHead>,
}

/// Per-scale inputs for a whole dataset: one matrix per patch position.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleData {
    pub patches: Vec<Matrix>,
}

impl ScaleData {
    pub fn from_features(samples: &[ImageFeatures], scale_n: usize) -> Result<Self> {
        let mut per_patch: Vec<Vec<&[f64]>> = vec![Vec::with_capacity(samples.len()); scale_n];
        for s in samples {
            let sf = s
                .scale(scale_n)
                .ok_or_else(|| Error::Schema(format!("sample lacks scale {scale_n}")))?;
            if sf.patches.len() != scale_n {
                return Err(Error::DimensionMismatch {
                    expected: scale_n,
                    actual: sf.patches.len(),
                });
            }
            for (j, p) in sf.patches.iter().enumerate() {
                if let Some(first) = per_patch[j].first() {
                    if first.len() != p.len() {
                        return Err(Error::DimensionMismatch {
                            expected: first.len(),
                            actual: p.len(),
                        });
                    }
                }
                per_patch[j].push(p);
            }
        }
        Ok(ScaleData {
            patches: per_patch.iter().map(|rows| Matrix::from_rows(rows)).collect(),
        })
    }

    pub fn scale_n(&self) -> usize {
        self.patches.len()
    }

    pub fn rows(&self) -> usize {
        self.patches.first().map_or(0, Matrix::rows)
    }

    pub fn patch_dims(&self) -> Vec<usize> {
        self.patches.iter().map(Matrix::cols).collect()
    }

    /// Appends extra columns to the first patch.
    pub fn with_extra(&self, extra: &Matrix) -> ScaleData {
        let mut patches = self.patches.clone();
        if extra.cols() > 0 {
            patches[0] = patches[0].hstack(extra);
        }
        ScaleData { patches }
    }

    pub fn select_rows(&self, idx: &[usize]) -> ScaleData {
        ScaleData {
            patches: self.patches.iter().map(|m| m.select_rows(idx)).collect(),
        }
    }

    /// Input of layer `j` given the previous layer's carry.
    pub fn layer_input(&self, j: usize, prev_carry: Option<&Matrix>) -> Matrix {
        let patch = &self.patches[j % self.scale_n()];
        match prev_carry {
            Some(c) => patch.hstack(c),
            None => patch.clone(),
        }
    }
}

/// Expected input width of layer `j` for the given patch widths.
pub fn layer_input_dim(patch_dims: &[usize], j: usize) -> usize {
    patch_dims[j % patch_dims.len()] + if j == 0 { 0 } else { AUG_DIM }
}

/// Inputs handed to a [`LayerBuilder`] for one layer.
pub struct LayerContext<'a> {
    pub index: usize,
    pub x: &'a Matrix,
    pub y: &'a [u8],
    pub prev_carry: Option<&'a Matrix>,
    /// Held-out rows forwarded through the layers built so far.
    pub valid: Option<(&'a Matrix, &'a [u8])>,
    pub k: usize,
    pub n_trees: usize,
    pub seed: u64,
}

pub struct BuiltLayer {
    pub layer: CascadeLayer,
    /// Out-of-fold forest outputs of the kept forests (n x 8).
    pub oof: Matrix,
    /// Out-of-fold carry fed to the next layer.
    pub carry: Matrix,
}

pub trait LayerBuilder {
    fn build(&mut self, ctx: LayerContext<'_>) -> Result<BuiltLayer>;
}

/// Two random and two completely random forests trained with k-fold.
pub struct PlainBuilder;

impl LayerBuilder for PlainBuilder {
    fn build(&mut self, ctx: LayerContext<'_>) -> Result<BuiltLayer> {
        let out = kfold_augmented(ctx.x, ctx.y, &LayerSpec::standard(ctx.n_trees), ctx.k, ctx.seed)?;
        Ok(BuiltLayer {
            layer: CascadeLayer {
                forests: out.forests,
                input_dim: ctx.x.cols(),
                head: None,
                selection: None,
            },
            carry: out.oof.clone(),
            oof: out.oof,
        })
    }
}

/// Accuracy of the averaged class vectors in each row.
pub fn averaged_accuracy(outputs: &Matrix, y: &[u8]) -> f64 {
    let hits = (0..y.len())
        .filter(|&i| u8::from(prob::mean_p_fake(outputs.row(i)) >= 0.5) == y[i])
        .count();
    hits as f64 / y.len() as f64
}

/// A trained cascade with the out-of-fold outputs of its final kept layer,
/// used as honest training inputs for downstream scales.
pub struct TrainedCascade {
    pub model: CascadeModel,
    pub final_oof: Matrix,
}

fn check_class_counts(y: &[u8], k: usize) -> Result<()> {
    let pos = y.iter().filter(|&&l| l == 1).count();
    let neg = y.len() - pos;
    if pos.min(neg) < 2 * k {
        return Err(Error::TooFewSamples(format!(
            "cascade training with k={k} needs {} samples per class, got {neg} real / {pos} fake",
            2 * k
        )));
    }
    Ok(())
}

/// Grows a cascade layer by layer until `max_layers` is reached or
/// `patience` consecutive layers fail to beat the best out-of-fold score,
/// then keeps the best-scoring prefix.
pub fn grow_cascade(
    data: &ScaleData,
    y: &[u8],
    valid: Option<(&ScaleData, &[u8])>,
    cfg: &GrowthConfig,
    builder: &mut dyn LayerBuilder,
) -> Result<TrainedCascade> {
    cfg.validate()?;
    if data.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: data.rows(),
            actual: y.len(),
        });
    }
    check_class_counts(y, cfg.k)?;
    if let Some((v, vy)) = valid {
        if v.patch_dims() != data.patch_dims() || v.rows() != vy.len() {
            return Err(Error::DimensionMismatch {
                expected: data.patch_dims().iter().sum(),
                actual: v.patch_dims().iter().sum(),
            });
        }
    }

    let mut layers: Vec<CascadeLayer> = Vec::new();
    let mut oofs: Vec<Matrix> = Vec::new();
    let mut scores: Vec<f64> = Vec::new();
    let mut carry: Option<Matrix> = None;
    let mut valid_carry: Option<Matrix> = None;
    let (mut best, mut best_idx, mut stale) = (f64::NEG_INFINITY, 0, 0);

    while layers.len() < cfg.max_layers {
        let j = layers.len();
        let x = data.layer_input(j, carry.as_ref());
        debug_assert_eq!(x.cols(), layer_input_dim(&data.patch_dims(), j));
        let vx = valid.map(|(v, _)| v.layer_input(j, valid_carry.as_ref()));
        let built = builder.build(LayerContext {
            index: j,
            x: &x,
            y,
            prev_carry: carry.as_ref(),
            valid: valid.map(|(_, vy)| (vx.as_ref().unwrap(), vy)),
            k: cfg.k,
            n_trees: cfg.n_trees,
            seed: seed::derive(cfg.seed, j as u64),
        })?;
        if built.layer.input_dim != x.cols() {
            return Err(Error::DimensionMismatch {
                expected: x.cols(),
                actual: built.layer.input_dim,
            });
        }
        if let Some(vx) = &vx {
            valid_carry = Some(built.layer.forward_matrix(vx, valid_carry.as_ref())?.1);
        }
        let score = averaged_accuracy(&built.oof, y);
        scores.push(score);
        if score > best {
            best = score;
            best_idx = j;
            stale = 0;
        } else {
            stale += 1;
        }
        layers.push(built.layer);
        oofs.push(built.oof);
        carry = Some(built.carry);
        if stale >= cfg.patience {
            break;
        }
    }

    layers.truncate(best_idx + 1);
    let final_oof = oofs.swap_remove(best_idx);
    Ok(TrainedCascade {
        model: CascadeModel {
            scale_n: data.scale_n(),
            layers,
            layer_scores: scores,
            best_score: best,
            terminal_head: None,
        },
        final_oof,
    })
}

/// Plain cascade training.
pub fn train_cascade(data: &ScaleData, y: &[u8], cfg: &GrowthConfig) -> Result<CascadeModel> {
    Ok(grow_cascade(data, y, None, cfg, &mut PlainBuilder)?.model)
}

impl CascadeModel {
    /// Runs every layer on one sample's patch vectors and returns the last
    /// layer's forest outputs.
    pub fn augmented<P: AsRef<[f64]>>(&self, patches: &[P]) -> Result<Vec<f64>> {
        if patches.len() != self.scale_n {
            return Err(Error::DimensionMismatch {
                expected: self.scale_n,
                actual: patches.len(),
            });
        }
        let mut carry: Option<Vec<f64>> = None;
        let mut outputs = Vec::new();
        for (j, layer) in self.layers.iter().enumerate() {
            let mut x = patches[j % self.scale_n].as_ref().to_vec();
            if let Some(c) = &carry {
                x.extend_from_slice(c);
            }
            outputs = layer.forest_outputs(&x)?;
            carry = Some(layer.carry(&outputs, carry.as_deref())?);
        }
        Ok(outputs)
    }

    /// Final class vector: the mean of the last layer's forests, or of the
    /// pairwise re-normalized terminal refinement when one is attached.
    pub fn predict<P: AsRef<[f64]>>(&self, patches: &[P]) -> Result<ProbVector> {
        let outputs = self.augmented(patches)?;
        self.finish(&outputs)
    }

    pub(crate) fn finish(&self, outputs: &[f64]) -> Result<ProbVector> {
        match &self.terminal_head {
            None => Ok(prob::average_pairs(outputs)),
            Some(head) => {
                let refined = head.forward(outputs)?;
                let vs: Vec<ProbVector> = refined
                    .chunks_exact(2)
                    .map(|c| ProbVector::renormalize(c[0], c[1]))
                    .collect();
                Ok(ProbVector::mean(&vs))
            }
        }
    }

    /// Augmented outputs for every row of a dataset.
    pub fn augmented_matrix(&self, data: &ScaleData) -> Result<Matrix> {
        let rows = (0..data.rows())
            .map(|i| {
                let patches: Vec<&[f64]> = data.patches.iter().map(|m| m.row(i)).collect();
                self.augmented(&patches)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Matrix::from_rows(&rows))
    }

    pub fn predict_matrix(&self, data: &ScaleData) -> Result<Vec<ProbVector>> {
        let aug = self.augmented_matrix(data)?;
        aug.iter_rows().map(|r| self.finish(r)).collect()
    }

    pub fn first_layer_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Schema("cascade without layers".into()));
        }
        for l in &self.layers {
            if l.forests.len() != 4 {
                return Err(Error::Schema(format!("layer holds {} forests", l.forests.len())));
            }
            for f in &l.forests {
                if f.n_features != l.input_dim {
                    return Err(Error::Schema("forest width differs from layer input".into()));
                }
                f.validate()?;
            }
        }
        Ok(())
    }
}
