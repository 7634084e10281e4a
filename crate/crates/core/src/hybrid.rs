//! Dense refinement heads for the hybrid cascade.
//!
//! Each head is a stack of linear maps with identity activation. During
//! training it is followed by an auxiliary `8 -> 2` softmax classifier and the
//! pair is fit by full-batch gradient descent on cross-entropy; only the
//! refiner is kept. Heads read forest outputs as constants, so no gradient
//! ever reaches the forests.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cascade::{BuiltLayer, CascadeLayer, LayerBuilder, LayerContext, LayerHead, AUG_DIM};
use crate::error::{Error, Result};
use crate::forest::{kfold_augmented, LayerSpec};
use crate::matrix::Matrix;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::DimensionMismatch {
                expected: in_dim * out_dim + out_dim,
                actual: weight.len() + bias.len(),
            });
        }
        Ok(Linear {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    /// Identity aligned on the trailing entries of the shorter side.
    fn aligned_identity(in_dim: usize, out_dim: usize) -> Self {
        let mut weight = vec![0.0; in_dim * out_dim];
        let n = in_dim.min(out_dim);
        for t in 0..n {
            let o = out_dim - n + t;
            let i = in_dim - n + t;
            weight[o * in_dim + i] = 1.0;
        }
        Linear {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim,
                actual: x.len(),
            });
        }
        Ok(self.apply(x))
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|o| {
                let w = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                self.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Stack of linear refiners, identity activation throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseHead {
    pub layers: Vec<Linear>,
}

impl DenseHead {
    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim(),
                actual: x.len(),
            });
        }
        let mut h = x.to_vec();
        for l in &self.layers {
            h = l.apply(&h);
        }
        Ok(h)
    }

    pub fn forward_matrix(&self, x: &Matrix) -> Result<Matrix> {
        let rows = x
            .iter_rows()
            .map(|r| self.forward(r))
            .collect::<Result<Vec<_>>>()?;
        Ok(Matrix::from_rows(&rows))
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Linear::is_finite)
    }

    /// Aligned identities with seeded Gaussian jitter of standard deviation
    /// `noise` on the weights.
    pub fn init(in_dim: usize, dims: &[usize], noise: f64, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(dims.len());
        let mut prev = in_dim;
        for &d in dims {
            let mut l = Linear::aligned_identity(prev, d);
            jitter(&mut l.weight, noise, rng);
            layers.push(l);
            prev = d;
        }
        DenseHead { layers }
    }
}

fn jitter(values: &mut [f64], noise: f64, rng: &mut impl Rng) {
    if noise > 0.0 {
        let normal = Normal::new(0.0, noise).expect("positive std");
        for v in values {
            *v += normal.sample(rng);
        }
    }
}

fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let (a, b) = ((z[0] - m).exp(), (z[1] - m).exp());
    [a / (a + b), b / (a + b)]
}

/// Refiner plus auxiliary classifier, the unit trained per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadPair {
    pub refiner: DenseHead,
    /// Auxiliary `refiner.out_dim() -> 2` logits, softmax applied in the loss.
    pub auxiliary: Linear,
}

impl HeadPair {
    pub fn init(in_dim: usize, dims: &[usize], noise: f64, rng: &mut impl Rng) -> Self {
        let refiner = DenseHead::init(in_dim, dims, noise, rng);
        let out = refiner.out_dim();
        // Logits start as the summed class probabilities of the pairs.
        let mut weight = vec![0.0; 2 * out];
        for i in 0..out {
            weight[(i % 2) * out + i] = 1.0;
        }
        jitter(&mut weight, noise, rng);
        HeadPair {
            refiner,
            auxiliary: Linear {
                in_dim: out,
                out_dim: 2,
                weight,
                bias: vec![0.0; 2],
            },
        }
    }

    /// Auxiliary class probabilities for one row.
    pub fn predict(&self, x: &[f64]) -> Result<[f64; 2]> {
        let h = self.refiner.forward(x)?;
        let z = self.auxiliary.apply(&h);
        Ok(softmax2([z[0], z[1]]))
    }

    fn linears(&self) -> impl Iterator<Item = &Linear> {
        self.refiner.layers.iter().chain(std::iter::once(&self.auxiliary))
    }

    fn linears_mut(&mut self) -> impl Iterator<Item = &mut Linear> {
        self.refiner
            .layers
            .iter_mut()
            .chain(std::iter::once(&mut self.auxiliary))
    }

    pub fn n_params(&self) -> usize {
        self.linears().map(Linear::n_params).sum()
    }

    /// Parameters flattened as (weight, bias) per linear map, refiners first.
    pub fn params(&self) -> Vec<f64> {
        self.linears()
            .flat_map(|l| l.weight.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "parameter count");
        let mut at = 0;
        for l in self.linears_mut() {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&p[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[at..at + nb]);
            at += nb;
        }
    }

    /// Mean cross-entropy over the rows.
    pub fn loss(&self, x: &Matrix, y: &[u8]) -> f64 {
        let mut total = 0.0;
        for (i, &label) in y.iter().enumerate() {
            let mut h = x.row(i).to_vec();
            for l in &self.refiner.layers {
                h = l.apply(&h);
            }
            let z = self.auxiliary.apply(&h);
            let m = z[0].max(z[1]);
            let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
            total += lse - z[label as usize];
        }
        total / y.len() as f64
    }

    /// Mean cross-entropy and its gradient in [`HeadPair::params`] order.
    pub fn loss_and_grad(&self, x: &Matrix, y: &[u8]) -> (f64, Vec<f64>) {
        let linears: Vec<&Linear> = self.linears().collect();
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = linears
            .iter()
            .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
            .collect();
        let n = y.len() as f64;
        let mut total = 0.0;
        for (i, &label) in y.iter().enumerate() {
            let mut acts = vec![x.row(i).to_vec()];
            for l in &linears {
                let next = l.apply(acts.last().unwrap());
                acts.push(next);
            }
            let z = acts.last().unwrap();
            let p = softmax2([z[0], z[1]]);
            let m = z[0].max(z[1]);
            let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
            total += lse - z[label as usize];

            let mut delta: Vec<f64> = (0..2)
                .map(|c| (p[c] - f64::from(u8::from(c == label as usize))) / n)
                .collect();
            for (li, l) in linears.iter().enumerate().rev() {
                let input = &acts[li];
                let (gw, gb) = &mut grads[li];
                for o in 0..l.out_dim {
                    gb[o] += delta[o];
                    let row = &mut gw[o * l.in_dim..(o + 1) * l.in_dim];
                    for (g, &a) in row.iter_mut().zip(input) {
                        *g += delta[o] * a;
                    }
                }
                if li > 0 {
                    let mut back = vec![0.0; l.in_dim];
                    for o in 0..l.out_dim {
                        let w = &l.weight[o * l.in_dim..(o + 1) * l.in_dim];
                        for (b, &wv) in back.iter_mut().zip(w) {
                            *b += delta[o] * wv;
                        }
                    }
                    delta = back;
                }
            }
        }
        let flat = grads
            .into_iter()
            .flat_map(|(w, b)| w.into_iter().chain(b))
            .collect();
        (total / n, flat)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HybridStrategy {
    /// One head after the final layer.
    H1,
    /// A head after every layer, fed that layer's augmented features.
    H2,
    /// A head after every layer, fed the previous refinement stacked with the
    /// current augmented features.
    H3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub strategy: HybridStrategy,
    pub head_dims: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Standard deviation of the weight jitter around the identity start.
    pub init_noise: f64,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            strategy: HybridStrategy::H3,
            head_dims: vec![AUG_DIM],
            lr: 0.01,
            epochs: 100,
            seed: 0,
            init_noise: 0.01,
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.head_dims.last() != Some(&AUG_DIM) || self.head_dims.contains(&0) {
            return Err(Error::Config(format!(
                "head dims must be positive and end in {AUG_DIM}, got {:?}",
                self.head_dims
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadReport {
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Trains a refiner/auxiliary pair on fixed augmented rows and returns the
/// refiner. The lowest-loss parameters seen are kept, so the reported final
/// loss never exceeds the initial one.
pub fn train_head_pair(x: &Matrix, y: &[u8], cfg: &HybridConfig) -> Result<(DenseHead, HeadReport)> {
    cfg.validate()?;
    if y.len() < 2 || x.rows() != y.len() {
        return Err(Error::TooFewSamples(format!("head training on {} rows", y.len())));
    }
    if y.iter().all(|&l| l == y[0]) {
        return Err(Error::TooFewSamples("head training needs both classes".into()));
    }
    let mut rng = seed::rng(cfg.seed);
    let mut pair = HeadPair::init(x.cols(), &cfg.head_dims, cfg.init_noise, &mut rng);
    let mut params = pair.params();
    let (initial_loss, mut grad) = pair.loss_and_grad(x, y);
    if !initial_loss.is_finite() {
        return Err(Error::NonFinite("initial head loss".into()));
    }
    let mut best = (initial_loss, params.clone());
    for _ in 0..cfg.epochs {
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= cfg.lr * g;
        }
        pair.set_params(&params);
        let (loss, g) = pair.loss_and_grad(x, y);
        if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("head training diverged".into()));
        }
        if loss < best.0 {
            best = (loss, params.clone());
        }
        grad = g;
    }
    pair.set_params(&best.1);
    if !pair.refiner.is_finite() {
        return Err(Error::NonFinite("refiner parameters".into()));
    }
    Ok((
        pair.refiner,
        HeadReport {
            initial_loss,
            final_loss: best.0,
        },
    ))
}

/// Layer builder that attaches a trained refiner after each forest layer
/// (Hybrid2 / Hybrid3). Hybrid1 uses the plain builder plus a terminal head.
pub struct HybridBuilder {
    pub cfg: HybridConfig,
    pub reports: Vec<HeadReport>,
}

impl HybridBuilder {
    pub fn new(cfg: HybridConfig) -> Self {
        HybridBuilder {
            cfg,
            reports: Vec::new(),
        }
    }
}

impl LayerBuilder for HybridBuilder {
    fn build(&mut self, ctx: LayerContext<'_>) -> Result<BuiltLayer> {
        let out = kfold_augmented(ctx.x, ctx.y, &LayerSpec::standard(ctx.n_trees), ctx.k, ctx.seed)?;
        let stacks_previous = self.cfg.strategy == HybridStrategy::H3 && ctx.prev_carry.is_some();
        let head_input = match (stacks_previous, ctx.prev_carry) {
            (true, Some(prev)) => prev.hstack(&out.oof),
            _ => out.oof.clone(),
        };
        let cfg = HybridConfig {
            seed: seed::derive(self.cfg.seed, ctx.seed),
            ..self.cfg.clone()
        };
        let (refiner, report) = train_head_pair(&head_input, ctx.y, &cfg)?;
        self.reports.push(report);
        let carry = refiner.forward_matrix(&head_input)?;
        Ok(BuiltLayer {
            layer: CascadeLayer {
                forests: out.forests,
                input_dim: ctx.x.cols(),
                head: Some(LayerHead {
                    refiner,
                    stacks_previous,
                }),
                selection: None,
            },
            oof: out.oof,
            carry,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_constant_maps() {
        let id = Linear::aligned_identity(3, 3);
        assert_eq!(id.forward(&[1.0, -2.0, 5.0]).unwrap(), vec![1.0, -2.0, 5.0]);
        let c = Linear::new(2, 2, vec![0.0; 4], vec![0.3, 0.7]).unwrap();
        assert_eq!(c.forward(&[9.0, -4.0]).unwrap(), vec![0.3, 0.7]);
        assert!(matches!(
            c.forward(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn aligned_identity_keeps_trailing_block() {
        let l = Linear::aligned_identity(16, 8);
        let x: Vec<f64> = (0..16).map(f64::from).collect();
        assert_eq!(l.apply(&x), (8..16).map(f64::from).collect::<Vec<_>>());
        let up = Linear::aligned_identity(8, 16);
        let head = DenseHead {
            layers: vec![up, Linear::aligned_identity(16, 8)],
        };
        let x: Vec<f64> = (0..8).map(f64::from).collect();
        assert_eq!(head.forward(&x).unwrap(), x);
    }

    #[test]
    fn stacked_head_dims() {
        let mut rng = seed::rng(0);
        let h = DenseHead::init(8, &[16, 8], 0.0, &mut rng);
        assert_eq!(h.layers.len(), 2);
        assert_eq!((h.in_dim(), h.out_dim()), (8, 8));
        assert_eq!(h.layers[0].out_dim, 16);
    }

    #[test]
    fn config_validation() {
        let ok = HybridConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            HybridConfig { epochs: 0, ..ok.clone() },
            HybridConfig { lr: 0.0, ..ok.clone() },
            HybridConfig { head_dims: vec![16], ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn params_round_trip() {
        let mut rng = seed::rng(4);
        let mut pair = HeadPair::init(8, &[8], 0.1, &mut rng);
        let p = pair.params();
        assert_eq!(p.len(), 8 * 8 + 8 + 2 * 8 + 2);
        let shifted: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
        pair.set_params(&shifted);
        assert_eq!(pair.params(), shifted);
    }
}
