//! Two-class probability vectors, the unit of every forest output.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

/// Tolerance for the unit-sum invariant.
pub const SUM_TOLERANCE: f64 = 1e-9;

static CHECKED: AtomicU64 = AtomicU64::new(0);
static VIOLATIONS: AtomicU64 = AtomicU64::new(0);

/// Process-wide tally of `(vectors checked, vectors violating the invariant)`.
pub fn audit_counts() -> (u64, u64) {
    (
        CHECKED.load(Ordering::Relaxed),
        VIOLATIONS.load(Ordering::Relaxed),
    )
}

/// `(p_real, p_fake)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(pub [f64; 2]);

impl ProbVector {
    pub const REAL: ProbVector = ProbVector([1.0, 0.0]);
    pub const FAKE: ProbVector = ProbVector([0.0, 1.0]);

    /// Builds a vector and records it in the audit tally.
    pub fn new(p_real: f64, p_fake: f64) -> Self {
        let p = ProbVector([p_real, p_fake]);
        CHECKED.fetch_add(1, Ordering::Relaxed);
        if !p.is_valid() {
            VIOLATIONS.fetch_add(1, Ordering::Relaxed);
        }
        p
    }

    /// Empirical distribution of `pos` fakes among `n` samples.
    pub fn from_counts(n: usize, pos: usize) -> Self {
        debug_assert!(n > 0 && pos <= n);
        let p_fake = pos as f64 / n as f64;
        ProbVector::new((n - pos) as f64 / n as f64, p_fake)
    }

    /// Arithmetic mean of a non-empty set of vectors.
    pub fn mean<'a>(vs: impl IntoIterator<Item = &'a ProbVector>) -> Self {
        let (mut a, mut b, mut n) = (0.0, 0.0, 0usize);
        for v in vs {
            a += v.0[0];
            b += v.0[1];
            n += 1;
        }
        assert!(n > 0, "mean of no probability vectors");
        ProbVector::new(a / n as f64, b / n as f64)
    }

    pub fn p_real(&self) -> f64 {
        self.0[0]
    }

    pub fn p_fake(&self) -> f64 {
        self.0[1]
    }

    /// 1 (fake) iff `p_fake >= 0.5`.
    pub fn label(&self) -> u8 {
        u8::from(self.0[1] >= 0.5)
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p))
            && (self.0[0] + self.0[1] - 1.0).abs() <= SUM_TOLERANCE
    }

    /// Pairwise re-normalization of an arbitrary real pair: negatives are
    /// clipped to zero and the pair is scaled to unit sum, falling back to
    /// the uniform vector when both entries vanish.
    pub fn renormalize(a: f64, b: f64) -> Self {
        let a = if a.is_finite() { a.max(0.0) } else { 0.0 };
        let b = if b.is_finite() { b.max(0.0) } else { 0.0 };
        let s = a + b;
        if s > 0.0 {
            ProbVector::new(a / s, b / s)
        } else {
            ProbVector::new(0.5, 0.5)
        }
    }
}

/// Splits a concatenation of probability pairs back into vectors.
pub fn pairs(values: &[f64]) -> impl Iterator<Item = ProbVector> + '_ {
    values.chunks_exact(2).map(|c| ProbVector::new(c[0], c[1]))
}

/// Mean `p_fake` over the pairs of an augmented row.
pub fn mean_p_fake(values: &[f64]) -> f64 {
    let n = values.len() / 2;
    values.chunks_exact(2).map(|c| c[1]).sum::<f64>() / n as f64
}

/// Averaged prediction over the pairs of an augmented row.
pub fn average_pairs(values: &[f64]) -> ProbVector {
    let n = (values.len() / 2) as f64;
    let (a, b) = values
        .chunks_exact(2)
        .fold((0.0, 0.0), |(a, b), c| (a + c[0], b + c[1]));
    ProbVector::new(a / n, b / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renormalize_handles_degenerate_pairs() {
        assert_eq!(ProbVector::renormalize(-1.0, -2.0).0, [0.5, 0.5]);
        assert_eq!(ProbVector::renormalize(-1.0, 3.0).0, [0.0, 1.0]);
        let p = ProbVector::renormalize(1.0, 3.0);
        assert!((p.p_fake() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn symmetric_mean_is_uniform() {
        let vs = [
            ProbVector::REAL,
            ProbVector::REAL,
            ProbVector::FAKE,
            ProbVector::FAKE,
        ];
        assert_eq!(ProbVector::mean(&vs).0, [0.5, 0.5]);
        assert_eq!(ProbVector::mean(&vs).label(), 1);
    }
}
