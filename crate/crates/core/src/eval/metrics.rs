use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const THRESHOLD: f64 = 0.5;

/// Fraction of scores whose thresholded label (`score >= 0.5` is fake)
/// matches the ground truth.
pub fn accuracy(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(Error::EmptySet);
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| u8::from(s >= THRESHOLD) == l)
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Area under the ROC curve via the Mann-Whitney rank sum with mid-ranks for
/// ties, i.e. `P(score_pos > score_neg) + 0.5 P(equal)`.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; the tie group i..=j shares their mean.
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum_pos += mid_rank * pos_in_group as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub acc: f64,
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub threshold: f64,
}

impl MetricReport {
    pub fn compute(scores: &[f64], labels: &[u8]) -> Result<Self> {
        let n_pos = labels.iter().filter(|&&l| l == 1).count();
        Ok(MetricReport {
            acc: accuracy(scores, labels)?,
            auc: auc(scores, labels)?,
            n_pos,
            n_neg: labels.len() - n_pos,
            threshold: THRESHOLD,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_extremes() {
        let y = [0, 1, 1, 0];
        assert_eq!(accuracy(&[0.1, 0.9, 0.5, 0.2], &y).unwrap(), 1.0);
        assert_eq!(accuracy(&[0.9, 0.1, 0.2, 0.7], &y).unwrap(), 0.0);
        assert!(matches!(accuracy(&[0.1], &y), Err(Error::LengthMismatch(1, 4))));
    }

    #[test]
    fn auc_extremes_and_ties() {
        let y = [0, 0, 1, 1];
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &y).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &y).unwrap(), 0.0);
        assert_eq!(auc(&[0.5; 4], &y).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::SingleClass)));
    }
}
