use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::split::{best_split_rows, Columns, SortedIndex, SplitScratch};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::prob::ProbVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestKind {
    /// CART trees choosing the best Gini split among `ceil(sqrt(d))` features.
    Random,
    /// Trees splitting on a random feature at a random threshold.
    CompletelyRandom,
}

/// Node of a tree stored as a flat arena; children are referenced by index.
/// Serialized compactly as `[feature, threshold, left, right]` or
/// `[p_real, p_fake]`.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature_index: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        class_distribution: ProbVector,
    },
}

impl Serialize for TreeNode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TreeNode::Split {
                feature_index,
                threshold,
                left,
                right,
            } => (feature_index, threshold, left, right).serialize(s),
            TreeNode::Leaf { class_distribution } => class_distribution.0.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for TreeNode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct NodeVisitor;

        impl<'de> serde::de::Visitor<'de> for NodeVisitor {
            type Value = TreeNode;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a split [feature, threshold, left, right] or a leaf [p_real, p_fake]")
            }

            fn visit_seq<A: serde::de::SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<TreeNode, A::Error> {
                use serde::de::Error as _;
                let a: f64 = seq.next_element()?.ok_or_else(|| A::Error::invalid_length(0, &self))?;
                let b: f64 = seq.next_element()?.ok_or_else(|| A::Error::invalid_length(1, &self))?;
                let Some(left) = seq.next_element::<usize>()? else {
                    return Ok(TreeNode::Leaf {
                        class_distribution: ProbVector([a, b]),
                    });
                };
                let right: usize = seq.next_element()?.ok_or_else(|| A::Error::invalid_length(3, &self))?;
                if seq.next_element::<serde::de::IgnoredAny>()?.is_some() {
                    return Err(A::Error::invalid_length(5, &self));
                }
                if !(a >= 0.0 && a.fract() == 0.0 && a < 9.0e15) {
                    return Err(A::Error::custom("split feature index must be a non-negative integer"));
                }
                Ok(TreeNode::Split {
                    feature_index: a as usize,
                    threshold: b,
                    left,
                    right,
                })
            }
        }

        d.deserialize_seq(NodeVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(&self, features: &[f64]) -> &ProbVector {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Split {
                    feature_index,
                    threshold,
                    left,
                    right,
                } => {
                    at = if features[*feature_index] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
                TreeNode::Leaf { class_distribution } => return class_distribution,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], at: usize) -> usize {
            match nodes[at] {
                TreeNode::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }

    /// Checks that every split references an in-range feature and child.
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Schema("tree without nodes".into()));
        }
        for node in &self.nodes {
            match node {
                TreeNode::Split {
                    feature_index,
                    left,
                    right,
                    ..
                } => {
                    if *feature_index >= n_features
                        || *left >= self.nodes.len()
                        || *right >= self.nodes.len()
                    {
                        return Err(Error::Schema("tree split out of range".into()));
                    }
                }
                TreeNode::Leaf { class_distribution } => {
                    if !class_distribution.is_valid() {
                        return Err(Error::Schema("leaf distribution not normalized".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Number of candidate features examined by a random (CART) tree node.
pub fn candidate_count(d: usize) -> usize {
    ((d as f64).sqrt().ceil() as usize).clamp(1, d.max(1))
}

struct Builder<'a, R> {
    x: &'a Columns,
    index: Option<&'a SortedIndex>,
    y: &'a [u8],
    kind: ForestKind,
    rng: &'a mut R,
    nodes: Vec<TreeNode>,
    scratch: SplitScratch,
}

impl<R: Rng> Builder<'_, R> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let pos = rows.iter().filter(|&&r| self.y[r] == 1).count();
        self.nodes.push(TreeNode::Leaf {
            class_distribution: ProbVector::from_counts(rows.len(), pos),
        });
        self.nodes.len() - 1
    }

    fn choose_random(&mut self, rows: &[usize]) -> Option<(usize, f64)> {
        let d = self.x.cols();
        let m = candidate_count(d);
        let picked = index::sample(self.rng, d, m).into_vec();
        if let Some(s) = best_split_rows(self.x, self.y, rows, &picked, self.index, &mut self.scratch) {
            return Some((s.feature_index, s.threshold));
        }
        // Every sampled feature is constant here; widen to the rest.
        if m < d {
            let mut rest: Vec<usize> = (0..d).filter(|f| !picked.contains(f)).collect();
            rest.sort_unstable();
            return best_split_rows(self.x, self.y, rows, &rest, self.index, &mut self.scratch)
                .map(|s| (s.feature_index, s.threshold));
        }
        None
    }

    fn choose_completely_random(&mut self, rows: &[usize]) -> Option<(usize, f64)> {
        let d = self.x.cols();
        for _ in 0..d {
            let f = self.rng.random_range(0..d);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            let col = self.x.col(f);
            for &r in rows {
                let v = col[r];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if lo < hi {
                let mut t = self.rng.random_range(lo..hi);
                if t >= hi {
                    t = lo;
                }
                return Some((f, t));
            }
        }
        None
    }

    fn grow(&mut self, rows: &mut [usize]) -> usize {
        let pos = rows.iter().filter(|&&r| self.y[r] == 1).count();
        if rows.len() < 2 || pos == 0 || pos == rows.len() {
            return self.leaf(rows);
        }
        let choice = match self.kind {
            ForestKind::Random => self.choose_random(rows),
            ForestKind::CompletelyRandom => self.choose_completely_random(rows),
        };
        let Some((feature_index, threshold)) = choice else {
            return self.leaf(rows);
        };
        let mut split = 0;
        let col = self.x.col(feature_index);
        for i in 0..rows.len() {
            if col[rows[i]] <= threshold {
                rows.swap(i, split);
                split += 1;
            }
        }
        debug_assert!(split > 0 && split < rows.len());
        let at = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            class_distribution: ProbVector::REAL,
        });
        let (l, r) = rows.split_at_mut(split);
        let left = self.grow(l);
        let right = self.grow(r);
        self.nodes[at] = TreeNode::Split {
            feature_index,
            threshold,
            left,
            right,
        };
        at
    }
}

/// Grows one tree on the given rows until every leaf is pure, holds a single
/// sample, or admits no partition.
pub fn build_tree<R: Rng>(
    x: &Matrix,
    y: &[u8],
    rows: &[usize],
    kind: ForestKind,
    rng: &mut R,
) -> Result<Tree> {
    build_tree_columns(&Columns::new(x), None, y, rows, kind, rng)
}

/// `index`, when given, must have been built over exactly `rows`.
pub(crate) fn build_tree_columns<R: Rng>(
    x: &Columns,
    index: Option<&SortedIndex>,
    y: &[u8],
    rows: &[usize],
    kind: ForestKind,
    rng: &mut R,
) -> Result<Tree> {
    if rows.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut b = Builder {
        x,
        index,
        y,
        kind,
        rng,
        nodes: Vec::new(),
        scratch: SplitScratch::default(),
    };
    let mut rows = rows.to_vec();
    b.grow(&mut rows);
    Ok(Tree { nodes: b.nodes })
}
