//! Learning-to-rank datasets: queries with graded documents, preprocessing,
//! splitting and a synthetic generator.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::rng::{self, Stream};
use crate::{Error, Result};

/// Highest relevance grade.
pub const MAX_GRADE: u8 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub features: Vec<f64>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: u64,
    pub docs: Vec<Document>,
}

impl Query {
    pub fn labels(&self) -> impl Iterator<Item = u8> + '_ {
        self.docs.iter().map(|d| d.label)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// True when at least two documents carry different grades.
    pub fn has_graded_variation(&self) -> bool {
        let mut labels = self.labels();
        match labels.next() {
            Some(first) => labels.any(|l| l != first),
            None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub queries: Vec<Query>,
    pub feature_dim: usize,
}

impl Dataset {
    /// Builds a dataset, checking that every document has `feature_dim`
    /// features.
    pub fn new(queries: Vec<Query>, feature_dim: usize) -> Result<Self> {
        for doc in queries.iter().flat_map(|q| &q.docs) {
            if doc.features.len() != feature_dim {
                return Err(Error::DimensionMismatch { expected: feature_dim, actual: doc.features.len() });
            }
        }
        Ok(Self { queries, feature_dim })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn num_docs(&self) -> usize {
        self.queries.iter().map(Query::len).sum()
    }

    /// Drops queries whose documents all share one relevance grade.
    pub fn filter_uniform_queries(mut self) -> Self {
        self.queries.retain(Query::has_graded_variation);
        self
    }

    /// Per-query min-max scaling of every feature into `[0, 1]`. A feature
    /// that is constant within a query maps to 0.
    pub fn normalize_query_level(mut self) -> Self {
        let dim = self.feature_dim;
        for query in &mut self.queries {
            let mut lo = vec![f64::INFINITY; dim];
            let mut hi = vec![f64::NEG_INFINITY; dim];
            for doc in &query.docs {
                for (j, &v) in doc.features.iter().enumerate() {
                    lo[j] = lo[j].min(v);
                    hi[j] = hi[j].max(v);
                }
            }
            for doc in &mut query.docs {
                for (j, v) in doc.features.iter_mut().enumerate() {
                    let range = hi[j] - lo[j];
                    *v = if range > 0.0 { (*v - lo[j]) / range } else { 0.0 };
                }
            }
        }
        self
    }

    /// Query-level split into `(train, test)`; query order within each part
    /// follows the input.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::InvalidConfig("test fraction must lie in (0, 1)"));
        }
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = self.len();
        let n_test = libm::round(test_fraction * n as f64) as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(seed, Stream::Split, 0));
        let mut is_test = vec![false; n];
        for &i in &order[..n_test] {
            is_test[i] = true;
        }
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (q, t) in self.queries.iter().zip(is_test) {
            if t {
                test.push(q.clone());
            } else {
                train.push(q.clone());
            }
        }
        Ok((
            Dataset { queries: train, feature_dim: self.feature_dim },
            Dataset { queries: test, feature_dim: self.feature_dim },
        ))
    }
}

/// Parameters of the synthetic generator beyond the dataset shape.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    /// Standard deviation of the label noise added to the hidden score.
    pub label_noise: f64,
    /// Offset of the hidden score; negative values make relevant documents
    /// rarer.
    pub offset: f64,
    /// Scale applied to the hidden weight vector.
    pub signal: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self { label_noise: 0.7, offset: -2.0, signal: 2.0 }
    }
}

/// Hidden ground truth of a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenModel {
    pub weights: Vec<f64>,
    pub offset: f64,
}

impl HiddenModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.offset
    }
}

/// Synthetic LETOR-like data with default parameters.
pub fn generate_synthetic(num_queries: usize, docs_per_query: usize, feature_dim: usize, seed: u64) -> Dataset {
    generate_synthetic_with(num_queries, docs_per_query, feature_dim, seed, &SyntheticParams::default()).0
}

/// Synthetic LETOR-like data. Features are standard normal; the grade is
/// `clamp(round(4 * sigmoid(w*.x + b + noise)))` for a hidden unit-norm
/// `w*` scaled by `params.signal`. Returns the raw (unnormalized) data and
/// the hidden model.
pub fn generate_synthetic_with(
    num_queries: usize,
    docs_per_query: usize,
    feature_dim: usize,
    seed: u64,
    params: &SyntheticParams,
) -> (Dataset, HiddenModel) {
    let mut rng = rng::stream(seed, Stream::Data, 0);
    let mut weights: Vec<f64> = (0..feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = libm::sqrt(weights.iter().map(|w| w * w).sum::<f64>());
    let scale = if norm > 0.0 { params.signal / norm } else { 0.0 };
    weights.iter_mut().for_each(|w| *w *= scale);
    let hidden = HiddenModel { weights, offset: params.offset };

    let queries = (0..num_queries)
        .map(|qi| {
            let mut qrng = rng::stream(seed, Stream::Data, qi as u64 + 1);
            let docs = (0..docs_per_query)
                .map(|_| {
                    let features: Vec<f64> = (0..feature_dim).map(|_| StandardNormal.sample(&mut qrng)).collect();
                    let noise: f64 = StandardNormal.sample(&mut qrng);
                    let z = hidden.score(&features) + params.label_noise * noise;
                    let grade = libm::round(f64::from(MAX_GRADE) * sigmoid(z));
                    Document { features, label: grade.clamp(0.0, f64::from(MAX_GRADE)) as u8 }
                })
                .collect();
            Query { id: qi as u64 + 1, docs }
        })
        .collect();
    (Dataset { queries, feature_dim }, hidden)
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}
