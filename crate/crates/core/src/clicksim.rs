//! Position-based click simulation: the logging policy, per-user position
//! bias and click generation.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Dataset, Query};
use crate::metrics::RELEVANT_GRADE;
use crate::ranker::{dot, LinearRanker};
use crate::rng::{self, SimRng, Stream};
use crate::{Error, Result};

/// Probability that a document at 1-based `rank` is examined by a user with
/// bias factor `gamma_s`: `(1 / rank)^gamma_s`.
pub fn examination_prob(rank: usize, gamma_s: f64) -> f64 {
    debug_assert!(rank >= 1);
    libm::pow(1.0 / rank as f64, gamma_s)
}

/// Click probability under the default click model.
pub fn click_prob(grade: u8, rank: usize, gamma_s: f64) -> f64 {
    ClickModel::default().click_prob(grade, rank, gamma_s)
}

/// PBM click model: `P(click) = P(examined) * P(relevant | grade)`, where
/// grades at or above `relevant_grade` click with certainty once examined
/// and all others with probability `noise`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickModel {
    pub relevant_grade: u8,
    pub noise: f64,
}

impl Default for ClickModel {
    fn default() -> Self {
        Self { relevant_grade: RELEVANT_GRADE, noise: 0.1 }
    }
}

impl ClickModel {
    pub fn relevance_prob(&self, grade: u8) -> f64 {
        if grade >= self.relevant_grade {
            1.0
        } else {
            self.noise
        }
    }

    pub fn click_prob(&self, grade: u8, rank: usize, gamma_s: f64) -> f64 {
        examination_prob(rank, gamma_s) * self.relevance_prob(grade)
    }
}

/// Draw from `Normal(gamma, sigma)` left-truncated at zero by rejection.
pub fn sample_user_bias<R: Rng + ?Sized>(gamma: f64, sigma: f64, rng: &mut R) -> f64 {
    if sigma == 0.0 {
        return gamma;
    }
    let normal = Normal::new(gamma, sigma).expect("sigma is finite and non-negative");
    loop {
        let v: f64 = normal.sample(rng);
        if v >= 0.0 {
            return v;
        }
    }
}

/// One simulated user.
#[derive(Debug, Clone)]
pub struct UserState {
    pub id: u64,
    pub gamma_s: f64,
    /// Indices into the training set.
    pub query_pool: Vec<usize>,
    /// Private click stream, seeded from `(master seed, id)`.
    pub rng: SimRng,
}

/// Population parameters for [`create_users`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserPopulation {
    pub num_users: usize,
    pub queries_per_user: usize,
    pub gamma: f64,
    pub sigma: f64,
}

/// Users with ids `0..num_users`. Each draws its bias factor and a fixed
/// query pool (uniform, with replacement) from its own setup stream.
pub fn create_users(pop: &UserPopulation, num_train_queries: usize, seed: u64) -> Vec<UserState> {
    (0..pop.num_users as u64)
        .map(|id| {
            let mut setup = rng::stream(seed, Stream::UserSetup, id);
            let gamma_s = sample_user_bias(pop.gamma, pop.sigma, &mut setup);
            let query_pool = (0..pop.queries_per_user).map(|_| setup.random_range(0..num_train_queries)).collect();
            UserState { id, gamma_s, query_pool, rng: rng::stream(seed, Stream::UserClicks, id) }
        })
        .collect()
}

/// One impression: the top of the logging policy's ranking with per-slot
/// click indicators and the user's true examination probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickRecord {
    /// Index of the query in the training set.
    pub query: usize,
    /// Document indices, slot 0 = position 1.
    pub displayed: Vec<usize>,
    pub clicks: Vec<bool>,
    pub propensities: Vec<f64>,
}

impl ClickRecord {
    pub fn num_clicks(&self) -> usize {
        self.clicks.iter().filter(|&&c| c).count()
    }

    /// `(position, document)` of every click, position 1-based.
    pub fn clicked(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.displayed
            .iter()
            .zip(&self.clicks)
            .enumerate()
            .filter(|(_, (_, &c))| c)
            .map(|(slot, (&doc, _))| (slot + 1, doc))
    }
}

/// The production ranker that orders every displayed list.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggingPolicy {
    pub ranker: LinearRanker,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoggingConfig {
    pub sample_fraction: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for LoggingConfig {
    fn default() -> Self {
        Self { sample_fraction: 0.01, epochs: 10, learning_rate: 0.01 }
    }
}

/// Trains a linear ranker on `ceil(fraction * |Q|)` sampled queries with
/// pairwise hinge SGD over all pairs of differently graded documents.
pub fn train_logging_policy(train: &Dataset, cfg: &LoggingConfig, seed: u64) -> Result<LoggingPolicy> {
    if !(cfg.sample_fraction > 0.0 && cfg.sample_fraction <= 1.0) {
        return Err(Error::InvalidConfig("logging sample fraction must lie in (0, 1]"));
    }
    let n = libm::ceil(cfg.sample_fraction * train.len() as f64) as usize;
    let n = n.min(train.len());
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let mut rng = rng::stream(seed, Stream::LoggingPolicy, 0);
    let sample = rand::seq::index::sample(&mut rng, train.len(), n);

    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for qi in sample.iter() {
        let q = &train.queries[qi];
        for (i, a) in q.docs.iter().enumerate() {
            for (j, b) in q.docs.iter().enumerate() {
                if a.label > b.label {
                    pairs.push((qi, i, j));
                }
            }
        }
    }

    let mut w = LinearRanker::zeros(train.feature_dim);
    for _ in 0..cfg.epochs {
        pairs.shuffle(&mut rng);
        for &(qi, i, j) in &pairs {
            let q = &train.queries[qi];
            let (xi, xj) = (&q.docs[i].features, &q.docs[j].features);
            if 1.0 - (dot(&w.weights, xi) - dot(&w.weights, xj)) > 0.0 {
                for ((wk, a), b) in w.weights.iter_mut().zip(xi).zip(xj) {
                    *wk += cfg.learning_rate * (a - b);
                }
            }
        }
    }
    Ok(LoggingPolicy { ranker: w })
}

/// Shows the top `min(k, |D_q|)` documents of `policy` to a user with bias
/// `gamma_s` and draws independent clicks.
pub fn simulate_impression<R: Rng + ?Sized>(
    query_index: usize,
    q: &Query,
    policy: &LoggingPolicy,
    gamma_s: f64,
    k: usize,
    model: &ClickModel,
    rng: &mut R,
) -> ClickRecord {
    let ranking = policy.ranker.rank(q);
    let shown = k.min(q.len());
    let displayed: Vec<usize> = ranking.order()[..shown].to_vec();
    let propensities: Vec<f64> = (1..=shown).map(|pos| examination_prob(pos, gamma_s)).collect();
    let clicks = displayed
        .iter()
        .zip(&propensities)
        .map(|(&d, &p)| rng.random::<f64>() < p * model.relevance_prob(q.docs[d].label))
        .collect();
    ClickRecord { query: query_index, displayed, clicks, propensities }
}

/// Impressions collected by one user in one round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoundClicks {
    pub records: Vec<ClickRecord>,
    pub clicks: usize,
    /// The impression cap was reached before `m` clicks.
    pub capped: bool,
}

/// Draws queries uniformly from the user's pool until at least `m` clicks
/// have been observed or `max_impressions` impressions were shown.
pub fn collect_round_clicks(
    user: &mut UserState,
    train: &Dataset,
    policy: &LoggingPolicy,
    k: usize,
    m: usize,
    max_impressions: usize,
    model: &ClickModel,
) -> RoundClicks {
    let mut out = RoundClicks::default();
    if user.query_pool.is_empty() {
        out.capped = m > 0;
        return out;
    }
    while out.clicks < m && out.records.len() < max_impressions {
        let qi = user.query_pool[user.rng.random_range(0..user.query_pool.len())];
        let rec = simulate_impression(qi, &train.queries[qi], policy, user.gamma_s, k, model, &mut user.rng);
        out.clicks += rec.num_clicks();
        out.records.push(rec);
    }
    out.capped = out.clicks < m;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, Document};
    use crate::metrics::mean_ndcg;
    use alloc::vec;

    #[test]
    fn examination_examples() {
        assert_eq!(examination_prob(1, 3.7), 1.0);
        assert_eq!(examination_prob(2, 1.0), 0.5);
        assert_eq!(examination_prob(4, 2.0), 0.0625);
        assert_eq!(examination_prob(9, 0.0), 1.0);
    }

    #[test]
    fn click_prob_examples() {
        assert_eq!(click_prob(4, 1, 1.0), 1.0);
        assert!((click_prob(1, 1, 1.0) - 0.1).abs() < 1e-15);
        assert_eq!(click_prob(3, 2, 1.0), 0.5);
    }

    #[test]
    fn pbm_factorization_exhaustive() {
        for gamma in [0.0, 0.5, 1.0, 2.0] {
            for grade in 0..=4u8 {
                let rel = if grade >= 3 { 1.0 } else { 0.1 };
                let mut prev = f64::INFINITY;
                for rank in 1..=10 {
                    let c = click_prob(grade, rank, gamma);
                    assert_eq!(c, examination_prob(rank, gamma) * rel);
                    assert!(c <= prev);
                    prev = c;
                }
            }
        }
    }

    #[test]
    fn user_bias_sampling() {
        let mut rng = rng::stream(0, Stream::UserSetup, 0);
        assert_eq!(sample_user_bias(0.7, 0.0, &mut rng), 0.7);
        assert!((0..10_000).all(|_| sample_user_bias(0.05, 0.1, &mut rng) >= 0.0));
    }

    #[test]
    fn logging_policy_sample_size_and_determinism() {
        let d = generate_synthetic(100, 5, 3, 2).filter_uniform_queries().normalize_query_level();
        let cfg = LoggingConfig::default();
        let a = train_logging_policy(&d, &cfg, 4).unwrap();
        let b = train_logging_policy(&d, &cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(libm::ceil(0.01 * 100.0) as usize, 1);
        let empty = Dataset::new(vec![], 3).unwrap();
        assert_eq!(train_logging_policy(&empty, &cfg, 0).unwrap_err(), Error::EmptySample);
        let bad = LoggingConfig { sample_fraction: 0.0, ..cfg };
        assert!(train_logging_policy(&d, &bad, 0).is_err());
    }

    #[test]
    fn logging_policy_beats_random() {
        let d = generate_synthetic(60, 20, 10, 5).filter_uniform_queries().normalize_query_level();
        let cfg = LoggingConfig { sample_fraction: 1.0, ..LoggingConfig::default() };
        let f0 = train_logging_policy(&d, &cfg, 1).unwrap();
        let trained = mean_ndcg(&f0.ranker, &d, 5).unwrap();
        let mut rng = rng::stream(99, Stream::Tuning, 0);
        let random: f64 = (0..20)
            .map(|_| {
                let w = LinearRanker::new((0..10).map(|_| rng.random::<f64>() - 0.5).collect());
                mean_ndcg(&w, &d, 5).unwrap()
            })
            .sum::<f64>()
            / 20.0;
        assert!(trained > random + 0.1, "trained {trained} random {random}");
    }

    fn two_doc_query() -> Query {
        Query {
            id: 1,
            docs: vec![Document { features: vec![1.0], label: 4 }, Document { features: vec![0.0], label: 0 }],
        }
    }

    #[test]
    fn impression_without_bias_has_unit_propensities() {
        let q = Query {
            id: 1,
            docs: (0..8).map(|i| Document { features: vec![i as f64], label: (i % 5) as u8 }).collect(),
        };
        let policy = LoggingPolicy { ranker: LinearRanker::new(vec![1.0]) };
        let mut rng = rng::stream(1, Stream::UserClicks, 0);
        let rec = simulate_impression(0, &q, &policy, 0.0, 5, &ClickModel::default(), &mut rng);
        assert_eq!(rec.displayed, vec![7, 6, 5, 4, 3]);
        assert_eq!(rec.propensities, vec![1.0; 5]);
        assert_eq!(rec.clicks.len(), 5);
        for _ in 0..200 {
            let rec = simulate_impression(0, &q, &policy, 1.0, 3, &ClickModel::default(), &mut rng);
            assert!(rec.displayed.iter().all(|d| [7, 6, 5].contains(d)));
        }
    }

    #[test]
    fn guaranteed_click_needs_one_impression() {
        let train = Dataset::new(vec![two_doc_query()], 1).unwrap();
        let policy = LoggingPolicy { ranker: LinearRanker::new(vec![1.0]) };
        let mut user =
            UserState { id: 0, gamma_s: 0.0, query_pool: vec![0], rng: rng::stream(0, Stream::UserClicks, 0) };
        let model = ClickModel { noise: 0.0, ..ClickModel::default() };
        let got = collect_round_clicks(&mut user, &train, &policy, 1, 1, 50, &model);
        assert_eq!(got.records.len(), 1);
        assert_eq!(got.clicks, 1);
        assert!(!got.capped);
    }

    #[test]
    fn collection_reaches_m_or_cap_and_is_deterministic() {
        let train = generate_synthetic(30, 10, 4, 8).filter_uniform_queries().normalize_query_level();
        let policy = train_logging_policy(&train, &LoggingConfig::default(), 0).unwrap();
        let pop = UserPopulation { num_users: 20, queries_per_user: 5, gamma: 1.0, sigma: 0.1 };
        let mut users = create_users(&pop, train.len(), 3);
        let mut replay = users.clone();
        for (u, r) in users.iter_mut().zip(&mut replay) {
            let a = collect_round_clicks(u, &train, &policy, 5, 10, 500, &ClickModel::default());
            let b = collect_round_clicks(r, &train, &policy, 5, 10, 500, &ClickModel::default());
            assert_eq!(a, b);
            assert_eq!(a.clicks, a.records.iter().map(ClickRecord::num_clicks).sum::<usize>());
            assert!(a.clicks >= 10 || a.capped);
        }
        let mut zero_user = UserState { query_pool: vec![0], gamma_s: 0.0, ..users[0].clone() };
        let irrelevant =
            Dataset::new(vec![Query { id: 1, docs: vec![Document { features: vec![0.0; 4], label: 0 }; 2] }], 4)
                .unwrap();
        let model = ClickModel { noise: 0.0, ..ClickModel::default() };
        let capped = collect_round_clicks(&mut zero_user, &irrelevant, &policy, 5, 3, 7, &model);
        assert!(capped.capped);
        assert_eq!(capped.records.len(), 7);
    }
}
