//! Linear scoring model and deterministic ranking.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::Query;
use crate::{Error, Result};

/// `f(x) = w . x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRanker {
    pub weights: Vec<f64>,
}

impl LinearRanker {
    pub fn new(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { weights: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    /// Inner product with a feature vector of matching length.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::DimensionMismatch { expected: self.weights.len(), actual: x.len() });
        }
        Ok(dot(&self.weights, x))
    }

    /// Scores of every document of `q`. Dimensions are assumed to match.
    pub fn scores(&self, q: &Query) -> Vec<f64> {
        debug_assert!(q.docs.iter().all(|d| d.features.len() == self.dim()));
        q.docs.iter().map(|d| dot(&self.weights, &d.features)).collect()
    }

    pub fn rank(&self, q: &Query) -> RankedList {
        RankedList::from_scores(&self.scores(q))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A permutation of a query's documents. Positions are 1-based; document
/// indices are 0-based indices into `Query::docs`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    order: Vec<usize>,
    position: Vec<usize>,
}

impl RankedList {
    /// Sorts by score descending, ties by ascending document index.
    pub fn from_scores(scores: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Self::from_order(order)
    }

    /// Builds the inverse of `order`, which must be a permutation.
    pub fn from_order(order: Vec<usize>) -> Self {
        let mut position = vec![0; order.len()];
        for (k, &d) in order.iter().enumerate() {
            position[d] = k + 1;
        }
        debug_assert!(position.iter().all(|&p| p > 0));
        Self { order, position }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Document indices, best first.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Document at 1-based `position`.
    pub fn doc_at(&self, position: usize) -> usize {
        self.order[position - 1]
    }

    /// 1-based position of `doc`.
    pub fn position_of(&self, doc: usize) -> usize {
        self.position[doc]
    }
}
