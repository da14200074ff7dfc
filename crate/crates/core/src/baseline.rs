//! Full-information reference ranker: a linear model trained centrally with
//! LambdaRank gradients on the true relevance grades.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::dataset::{sigmoid, Dataset, Query};
use crate::ranker::{LinearRanker, RankedList};
use crate::rng::{self, Stream};

/// Learning rates searched for the baseline.
pub const LAMBDA_LR_GRID: [f64; 12] = [0.001, 0.005, 0.01, 0.03, 0.05, 0.07, 0.09, 0.1, 0.3, 0.5, 0.7, 0.9];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Truncation of the |delta NDCG| weights.
    pub k: usize,
}

impl Default for LambdaConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, epochs: 30, k: 5 }
    }
}

fn gain(grade: u8) -> f64 {
    libm::exp2(f64::from(grade)) - 1.0
}

/// `1 / log2(pos + 1)` inside the cutoff, 0 below it.
fn discount(position: usize, k: usize) -> f64 {
    if position <= k {
        1.0 / libm::log2(position as f64 + 1.0)
    } else {
        0.0
    }
}

fn ideal_dcg(q: &Query, k: usize) -> f64 {
    let mut labels: Vec<u8> = q.labels().collect();
    labels.sort_unstable_by(|a, b| b.cmp(a));
    labels.iter().enumerate().map(|(i, &g)| gain(g) * discount(i + 1, k)).sum()
}

/// `|NDCG@k change|` from swapping documents `i` and `j` in `ranking`.
pub fn delta_ndcg(q: &Query, ranking: &RankedList, i: usize, j: usize, k: usize, idcg: f64) -> f64 {
    let (gi, gj) = (gain(q.docs[i].label), gain(q.docs[j].label));
    let (di, dj) = (discount(ranking.position_of(i), k), discount(ranking.position_of(j), k));
    ((gi - gj) * (di - dj)).abs() / idcg
}

/// LambdaRank gradient (descent direction is its negative): sums
/// `-|dNDCG_ij| * sigmoid(f_j - f_i) * (x_i - x_j)` over pairs with
/// `grade_i > grade_j`.
pub fn lambda_gradient(model: &LinearRanker, q: &Query, cfg: &LambdaConfig) -> Vec<f64> {
    let mut grad = vec![0.0; model.dim()];
    let idcg = ideal_dcg(q, cfg.k);
    if idcg <= 0.0 {
        return grad;
    }
    let scores = model.scores(q);
    let ranking = RankedList::from_scores(&scores);
    for (i, a) in q.docs.iter().enumerate() {
        for (j, b) in q.docs.iter().enumerate() {
            if a.label <= b.label {
                continue;
            }
            let lambda = -delta_ndcg(q, &ranking, i, j, cfg.k, idcg) * sigmoid(scores[j] - scores[i]);
            for ((g, xi), xj) in grad.iter_mut().zip(&a.features).zip(&b.features) {
                *g += lambda * (xi - xj);
            }
        }
    }
    grad
}

/// Query-level SGD from the zero model; queries are shuffled each epoch.
pub fn train_lambda_linear(train: &Dataset, cfg: &LambdaConfig, seed: u64) -> LinearRanker {
    let mut w = LinearRanker::zeros(train.feature_dim);
    let mut rng = rng::stream(seed, Stream::Baseline, 0);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &qi in &order {
            let g = lambda_gradient(&w, &train.queries[qi], cfg);
            for (wk, gk) in w.weights.iter_mut().zip(g) {
                *wk -= cfg.learning_rate * gk;
            }
        }
    }
    w
}
