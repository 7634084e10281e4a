//! Gini impurity and the exhaustive threshold search used by CART trees.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Gini impurity `2p(1 - p)` of `pos` positives among `n` labels.
#[inline]
pub(crate) fn gini_counts(n: usize, pos: usize) -> f64 {
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

#[inline]
pub(crate) fn weighted_gini_counts(n_left: usize, pos_left: usize, n_right: usize, pos_right: usize) -> f64 {
    let n = (n_left + n_right) as f64;
    (n_left as f64 / n) * gini_counts(n_left, pos_left)
        + (n_right as f64 / n) * gini_counts(n_right, pos_right)
}

/// Gini impurity of a label set, `p` being the fraction labeled 1.
pub fn gini(labels: &[u8]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptySet);
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok(gini_counts(labels.len(), pos))
}

/// Size-weighted Gini of the partition `x[feature] <= threshold` vs. the
/// rest. A partition with an empty side is a no-op and scores as the parent.
pub fn weighted_gini(x: &Matrix, y: &[u8], feature: usize, threshold: f64) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::EmptySet);
    }
    let (left, right): (Vec<usize>, Vec<usize>) =
        (0..y.len()).partition(|&i| x.get(i, feature) <= threshold);
    if left.is_empty() || right.is_empty() {
        return gini(y);
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| y[i]).collect::<Vec<u8>>();
    let (l, r) = (pick(&left), pick(&right));
    let n = y.len() as f64;
    Ok((l.len() as f64 / n) * gini(&l)? + (r.len() as f64 / n) * gini(&r)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature_index: usize,
    pub threshold: f64,
    pub score: f64,
}

/// Midpoint between two consecutive distinct values that still separates them.
#[inline]
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= hi {
        lo
    } else {
        mid
    }
}

/// Column-major copy of a feature matrix, so split search reads one feature
/// contiguously.
pub(crate) struct Columns {
    rows: usize,
    data: Vec<f64>,
}

impl Columns {
    pub(crate) fn new(x: &Matrix) -> Self {
        let (n, d) = (x.rows(), x.cols());
        let mut data = vec![0.0; n * d];
        for (i, row) in x.iter_rows().enumerate() {
            for (f, &v) in row.iter().enumerate() {
                data[f * n + i] = v;
            }
        }
        Columns { rows: n, data }
    }

    #[inline]
    pub(crate) fn col(&self, f: usize) -> &[f64] {
        &self.data[f * self.rows..(f + 1) * self.rows]
    }

    pub(crate) fn cols(&self) -> usize {
        if self.rows == 0 {
            0
        } else {
            self.data.len() / self.rows
        }
    }
}

/// Per-feature order of a fixed row set, shared by every tree of a forest.
pub(crate) struct SortedIndex {
    n_rows: usize,
    order: Vec<u32>,
}

impl SortedIndex {
    pub(crate) fn new(x: &Columns, rows: &[usize]) -> Self {
        let n = rows.len();
        let mut order = Vec::with_capacity(n * x.cols());
        let mut keyed: Vec<(u64, u32)> = Vec::with_capacity(n);
        for f in 0..x.cols() {
            let col = x.col(f);
            keyed.clear();
            keyed.extend(rows.iter().map(|&r| (order_key(col[r]), r as u32)));
            keyed.sort_unstable();
            order.extend(keyed.iter().map(|&(_, r)| r));
        }
        SortedIndex { n_rows: n, order }
    }

    fn order(&self, f: usize) -> &[u32] {
        &self.order[f * self.n_rows..(f + 1) * self.n_rows]
    }

    /// Scanning the full order beats sorting a node of `n` rows.
    fn pays_off(&self, n: usize) -> bool {
        let log = (usize::BITS - n.leading_zeros()) as usize;
        self.n_rows <= 2 * n * log
    }
}

/// Reusable buffers for split search.
#[derive(Default)]
pub(crate) struct SplitScratch {
    pairs: Vec<(u64, u8)>,
    member: Vec<bool>,
}

/// Integer key with the same order as `f64::total_cmp`.
#[inline]
fn order_key(v: f64) -> u64 {
    let b = v.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | 1 << 63
    }
}

#[inline]
fn from_order_key(k: u64) -> f64 {
    if k >> 63 == 1 {
        f64::from_bits(k & !(1 << 63))
    } else {
        f64::from_bits(!k)
    }
}

/// Lowest weighted Gini over `candidates` x midpoints among `rows`; ties go
/// to the lower feature index, then the lower threshold. `None` when no
/// candidate feature takes two distinct values.
pub(crate) fn best_split_rows(
    x: &Columns,
    y: &[u8],
    rows: &[usize],
    candidates: &[usize],
    index: Option<&SortedIndex>,
    scratch: &mut SplitScratch,
) -> Option<Split> {
    let n = rows.len();
    let total_pos = rows.iter().filter(|&&r| y[r] == 1).count();
    let mut best: Option<Split> = None;
    let mut sorted: Vec<usize> = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let index = index.filter(|ix| ix.pays_off(n));
    if index.is_some() {
        scratch.member.resize(y.len(), false);
        for &r in rows {
            scratch.member[r] = true;
        }
    }
    for &f in &sorted {
        let col = x.col(f);
        let first = col[rows[0]];
        if rows.iter().all(|&r| col[r] == first) {
            continue;
        }
        let pairs = &mut scratch.pairs;
        pairs.clear();
        match index {
            Some(ix) => {
                let member = &scratch.member;
                pairs.extend(
                    ix.order(f)
                        .iter()
                        .map(|&r| r as usize)
                        .filter(|&r| member[r])
                        .map(|r| (order_key(col[r]), y[r])),
                );
            }
            None => {
                pairs.extend(rows.iter().map(|&r| (order_key(col[r]), y[r])));
                pairs.sort_unstable();
            }
        }
        let mut pos_left = 0;
        for i in 0..n - 1 {
            pos_left += usize::from(pairs[i].1 == 1);
            let (v, next) = (from_order_key(pairs[i].0), from_order_key(pairs[i + 1].0));
            if v == next {
                continue;
            }
            let n_left = i + 1;
            let score = weighted_gini_counts(n_left, pos_left, n - n_left, total_pos - pos_left);
            if best.is_none_or(|b| score < b.score) {
                best = Some(Split {
                    feature_index: f,
                    threshold: midpoint(v, next),
                    score,
                });
            }
        }
    }
    if index.is_some() {
        for &r in rows {
            scratch.member[r] = false;
        }
    }
    best
}

/// Best Gini split of the whole sample set over the candidate features.
pub fn best_split(x: &Matrix, y: &[u8], candidates: &[usize]) -> Option<Split> {
    if y.is_empty() {
        return None;
    }
    let rows: Vec<usize> = (0..y.len()).collect();
    best_split_rows(&Columns::new(x), y, &rows, candidates, None, &mut SplitScratch::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_key_round_trips_and_orders() {
        let vals = [-3.5, -0.0, 0.0, 1e-300, 2.0, f64::MAX];
        for w in vals.windows(2) {
            assert!(order_key(w[0]) < order_key(w[1]));
        }
        for v in vals {
            assert_eq!(from_order_key(order_key(v)).to_bits(), v.to_bits());
        }
    }

    #[test]
    fn gini_reference_values() {
        assert_eq!(gini(&[1, 0]).unwrap(), 0.5);
        assert_eq!(gini(&[0, 0, 0]).unwrap(), 0.0);
        assert!((gini(&[1, 1, 0, 0, 0, 0]).unwrap() - 4.0 / 9.0).abs() < 1e-15);
        assert!(matches!(gini(&[]), Err(Error::EmptySet)));
    }

    #[test]
    fn weighted_gini_edge_cases() {
        let x = Matrix::from_vec(4, 1, vec![1.0, 2.0, 8.0, 9.0]);
        let y = [0, 0, 1, 1];
        assert_eq!(weighted_gini(&x, &y, 0, 5.0).unwrap(), 0.0);
        assert_eq!(weighted_gini(&x, &y, 0, 100.0).unwrap(), 0.5);
        assert_eq!(weighted_gini(&x, &y, 0, -1.0).unwrap(), 0.5);
        assert!(matches!(
            weighted_gini(&Matrix::zeros(0, 1), &[], 0, 0.0),
            Err(Error::EmptySet)
        ));
    }

    #[test]
    fn one_dimensional_split_at_gap_midpoint() {
        let x = Matrix::from_vec(4, 1, vec![1.0, 2.0, 8.0, 9.0]);
        let s = best_split(&x, &[0, 0, 1, 1], &[0]).unwrap();
        assert_eq!(s.feature_index, 0);
        assert_eq!(s.threshold, 5.0);
        assert_eq!(s.score, 0.0);
    }

    #[test]
    fn constant_features_give_no_split() {
        let x = Matrix::from_vec(3, 2, vec![1.0, 4.0, 1.0, 4.0, 1.0, 4.0]);
        assert!(best_split(&x, &[0, 1, 0], &[0, 1]).is_none());
    }

    #[test]
    fn ties_prefer_lower_feature() {
        // Both features separate perfectly.
        let x = Matrix::from_vec(4, 2, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let s = best_split(&x, &[0, 0, 1, 1], &[1, 0]).unwrap();
        assert_eq!(s.feature_index, 0);
        assert_eq!(s.threshold, 1.5);
    }

    #[test]
    fn midpoint_between_adjacent_floats() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let m = midpoint(a, b);
        assert!(a <= m && m < b);
    }
}
