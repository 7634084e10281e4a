//! Decision trees, forests of trees, and k-fold out-of-fold class vectors.

mod split;
mod tree;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::prob::ProbVector;
use crate::seed;

pub use split::{best_split, gini, weighted_gini, Split};
pub use tree::{build_tree, candidate_count, ForestKind, Tree, TreeNode};
use split::{Columns, SortedIndex};
use tree::build_tree_columns;

pub const DEFAULT_TREES: usize = 100;
pub const DEFAULT_FOLDS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub kind: ForestKind,
    pub seed: u64,
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

fn class_counts(y: &[u8], rows: &[usize]) -> (usize, usize) {
    let pos = rows.iter().filter(|&&r| y[r] == 1).count();
    (rows.len() - pos, pos)
}

impl Forest {
    /// Fits `n_trees` trees on all rows of `x`.
    pub fn fit(x: &Matrix, y: &[u8], kind: ForestKind, n_trees: usize, seed: u64) -> Result<Forest> {
        let rows: Vec<usize> = (0..y.len()).collect();
        Forest::fit_rows(x, y, &rows, kind, n_trees, seed)
    }

    /// Fits on a subset of rows. Each tree draws from its own rng stream and
    /// sees every row in the subset.
    pub fn fit_rows(
        x: &Matrix,
        y: &[u8],
        rows: &[usize],
        kind: ForestKind,
        n_trees: usize,
        seed: u64,
    ) -> Result<Forest> {
        if x.rows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.rows(),
                actual: y.len(),
            });
        }
        let (neg, pos) = class_counts(y, rows);
        if neg + pos < 2 {
            return Err(Error::EmptySet);
        }
        if neg == 0 || pos == 0 {
            return Err(Error::SingleClass);
        }
        let columns = Columns::new(x);
        let index = (kind == ForestKind::Random).then(|| SortedIndex::new(&columns, rows));
        let trees = (0..n_trees as u64)
            .into_par_iter()
            .map(|t| build_tree_columns(&columns, index.as_ref(), y, rows, kind, &mut seed::stream(seed, t)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Forest {
            kind,
            seed,
            n_features: x.cols(),
            trees,
        })
    }

    /// Mean of the leaf distributions reached in every tree.
    pub fn predict(&self, features: &[f64]) -> Result<ProbVector> {
        if features.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: features.len(),
            });
        }
        Ok(self.predict_unchecked(features))
    }

    fn predict_unchecked(&self, features: &[f64]) -> ProbVector {
        let (mut a, mut b) = (0.0, 0.0);
        for t in &self.trees {
            let p = t.leaf(features);
            a += p.0[0];
            b += p.0[1];
        }
        let n = self.trees.len() as f64;
        ProbVector::new(a / n, b / n)
    }

    pub fn predict_rows(&self, x: &Matrix, rows: &[usize]) -> Result<Vec<ProbVector>> {
        if x.cols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: x.cols(),
            });
        }
        Ok(rows.iter().map(|&r| self.predict_unchecked(x.row(r))).collect())
    }

    pub fn predict_matrix(&self, x: &Matrix) -> Result<Vec<ProbVector>> {
        let rows: Vec<usize> = (0..x.rows()).collect();
        self.predict_rows(x, &rows)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::Schema("forest without trees".into()));
        }
        self.trees.iter().try_for_each(|t| t.validate(self.n_features))
    }
}

/// Stratified fold assignment: within each class, a seeded shuffle dealt
/// round-robin into `k` folds.
pub fn stratified_folds(y: &[u8], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    let mut fold = vec![0; y.len()];
    let mut rng = seed::rng(seed);
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if members.len() < k {
            return Err(Error::TooFewSamples(format!(
                "class {class} has {} samples, {k}-fold needs at least {k}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    Ok(fold)
}

/// Forest composition of one cascade layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kinds: Vec<ForestKind>,
    pub n_trees: usize,
}

impl LayerSpec {
    /// `m / 2` random forests followed by `m / 2` completely random ones.
    pub fn balanced(m: usize, n_trees: usize) -> Self {
        let mut kinds = vec![ForestKind::Random; m / 2];
        kinds.extend(vec![ForestKind::CompletelyRandom; m / 2]);
        LayerSpec { kinds, n_trees }
    }

    /// Two random plus two completely random forests.
    pub fn standard(n_trees: usize) -> Self {
        LayerSpec::balanced(4, n_trees)
    }
}

#[derive(Debug, Clone)]
pub struct KFoldOutput {
    /// Forests refit on every sample, in `LayerSpec::kinds` order.
    pub forests: Vec<Forest>,
    /// Row `i` holds the out-of-fold class vectors of sample `i`, two
    /// columns per forest.
    pub oof: Matrix,
    pub folds: Vec<usize>,
}

/// Trains each forest of a layer with stratified k-fold cross-validation:
/// every sample's augmented row comes from models that never saw it, then the
/// forests are refit on all samples for inference.
pub fn kfold_augmented(x: &Matrix, y: &[u8], spec: &LayerSpec, k: usize, seed: u64) -> Result<KFoldOutput> {
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            actual: y.len(),
        });
    }
    let folds = stratified_folds(y, k, seed::derive(seed, u64::MAX))?;
    let train_rows: Vec<Vec<usize>> = (0..k)
        .map(|f| (0..y.len()).filter(|&i| folds[i] != f).collect())
        .collect();
    let held_rows: Vec<Vec<usize>> = (0..k)
        .map(|f| (0..y.len()).filter(|&i| folds[i] == f).collect())
        .collect();

    // Job (forest, fold) with fold == k meaning the full refit.
    let jobs: Vec<(usize, usize)> = (0..spec.kinds.len())
        .flat_map(|f| (0..=k).map(move |j| (f, j)))
        .collect();
    let all_rows: Vec<usize> = (0..y.len()).collect();
    let fitted = jobs
        .par_iter()
        .map(|&(f, j)| {
            let rows = if j == k { &all_rows } else { &train_rows[j] };
            let s = seed::derive(seed::derive(seed, f as u64), j as u64);
            Forest::fit_rows(x, y, rows, spec.kinds[f], spec.n_trees, s)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut oof = Matrix::zeros(y.len(), 2 * spec.kinds.len());
    let mut forests = Vec::with_capacity(spec.kinds.len());
    for (forest_fits, f) in fitted.chunks(k + 1).zip(0..) {
        for (j, held) in held_rows.iter().enumerate() {
            for (&r, p) in held.iter().zip(forest_fits[j].predict_rows(x, held)?) {
                oof.row_mut(r)[2 * f..2 * f + 2].copy_from_slice(&p.0);
            }
        }
        forests.push(forest_fits[k].clone());
    }
    Ok(KFoldOutput {
        forests,
        oof,
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n: usize, seed: u64) -> (Matrix, Vec<u8>) {
        use rand::Rng;
        let mut rng = seed::rng(seed);
        let mut data = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = (i % 2) as u8;
            let c = if label == 1 { 3.0 } else { -3.0 };
            data.push(c + rng.random_range(-1.0..1.0));
            data.push(c + rng.random_range(-1.0..1.0));
            y.push(label);
        }
        (Matrix::from_vec(n, 2, data), y)
    }

    #[test]
    fn separable_blobs_fit_perfectly() {
        let (x, y) = blobs(200, 11);
        for kind in [ForestKind::Random, ForestKind::CompletelyRandom] {
            let f = Forest::fit(&x, &y, kind, 20, 5).unwrap();
            assert_eq!(f.trees.len(), 20);
            let acc = (0..200)
                .filter(|&i| f.predict(x.row(i)).unwrap().label() == y[i])
                .count();
            assert_eq!(acc, 200);
        }
    }

    #[test]
    fn single_tree_forest_equals_its_tree() {
        let (x, y) = blobs(30, 2);
        let f = Forest::fit(&x, &y, ForestKind::CompletelyRandom, 1, 9).unwrap();
        for i in 0..30 {
            assert_eq!(f.predict(x.row(i)).unwrap(), *f.trees[0].leaf(x.row(i)));
        }
    }

    #[test]
    fn fit_errors() {
        let x = Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            Forest::fit(&x, &[1, 1, 1], ForestKind::Random, 3, 0),
            Err(Error::SingleClass)
        ));
        assert!(matches!(
            Forest::fit(&Matrix::from_vec(1, 1, vec![0.0]), &[1], ForestKind::Random, 3, 0),
            Err(Error::EmptySet)
        ));
        let f = Forest::fit(&x, &[0, 1, 1], ForestKind::Random, 3, 0).unwrap();
        assert!(matches!(
            f.predict(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 1, actual: 2 })
        ));
    }

    #[test]
    fn fixed_seed_reproduces_forest() {
        let (x, y) = blobs(60, 3);
        let a = Forest::fit(&x, &y, ForestKind::Random, 10, 42).unwrap();
        let b = Forest::fit(&x, &y, ForestKind::Random, 10, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn folds_are_stratified_and_balanced() {
        let y: Vec<u8> = (0..30).map(|i| u8::from(i < 12)).collect();
        let folds = stratified_folds(&y, 3, 1).unwrap();
        for f in 0..3 {
            let pos = (0..30).filter(|&i| folds[i] == f && y[i] == 1).count();
            let neg = (0..30).filter(|&i| folds[i] == f && y[i] == 0).count();
            assert_eq!((pos, neg), (4, 6));
        }
        assert!(matches!(
            stratified_folds(&[0, 0, 1], 2, 0),
            Err(Error::TooFewSamples(_))
        ));
    }

    #[test]
    fn out_of_fold_rows_come_from_models_that_never_saw_them() {
        // Duplicate points with opposite labels: an in-fold model would
        // memorize, an out-of-fold model sees only the partner.
        let x = Matrix::from_vec(4, 1, vec![0.0, 1.0, 10.0, 11.0]);
        let y = [0, 0, 1, 1];
        let out = kfold_augmented(&x, &y, &LayerSpec::standard(5), 2, 7).unwrap();
        assert_eq!(out.oof.cols(), 8);
        assert_eq!(out.forests.len(), 4);
        for r in 0..4 {
            for p in crate::prob::pairs(out.oof.row(r)) {
                assert!(p.is_valid());
            }
        }
        // Each fold holds one sample per class; the training fold is the
        // other class pair, so the held sample's own label was never seen
        // at its exact position.
        assert_ne!(out.folds[0], out.folds[1]);
        assert_ne!(out.folds[2], out.folds[3]);
    }
}
