use fultr_core::clicksim::{simulate_impression, ClickModel, ClickRecord, LoggingPolicy};
use fultr_core::dataset::{generate_synthetic, Dataset};
use fultr_core::propensity::{em_m_step_local, EmConfig, EmEstimatorState};
use fultr_core::ranker::LinearRanker;
use fultr_core::rng::{self, Stream};

fn logs(data: &Dataset, gamma: f64, n: usize, seed: u64) -> Vec<ClickRecord> {
    let policy = LoggingPolicy {
        ranker: LinearRanker::new((0..data.feature_dim).map(|j| if j % 2 == 0 { 0.5 } else { -0.1 }).collect()),
    };
    let mut rng = rng::stream(seed, Stream::UserClicks, 0);
    (0..n)
        .map(|i| {
            let qi = i % data.len();
            simulate_impression(qi, &data.queries[qi], &policy, gamma, 5, &ClickModel::default(), &mut rng)
        })
        .collect()
}

fn data() -> Dataset {
    generate_synthetic(100, 15, 6, 8).filter_uniform_queries().normalize_query_level()
}

#[test]
fn zero_prior_strength_keeps_local_estimates() {
    let data = data();
    let recs = logs(&data, 1.0, 300, 1);
    let mut s = EmEstimatorState::new(6, EmConfig { prior_strength: 0.0, ..EmConfig::default() });
    let start = s.population.clone();
    let relevance = s.relevance.clone();
    let update = s.client_round(4, &recs, &data).unwrap();
    let local = em_m_step_local(&recs, &data, &relevance, &start, s.config.floor).unwrap().theta;
    assert_eq!(s.theta(4), local);
    assert_eq!(update.local_theta.as_deref(), Some(local.as_slice()));
}

#[test]
fn strong_prior_pulls_towards_the_population() {
    let data = data();
    let recs = logs(&data, 1.0, 300, 2);
    let mut weak = EmEstimatorState::new(6, EmConfig { prior_strength: 0.0, ..EmConfig::default() });
    let mut strong = EmEstimatorState::new(6, EmConfig { prior_strength: 1e9, ..EmConfig::default() });
    weak.client_round(0, &recs, &data).unwrap();
    strong.client_round(0, &recs, &data).unwrap();
    let (s, w) = (strong.theta(0), weak.theta(0));
    for ((s, w), p) in s.iter().zip(&w).zip(&strong.population).skip(1) {
        assert!((s - p).abs() < 1e-6);
        assert!((w - p).abs() > 1e-3);
    }
}

#[test]
fn population_table_is_the_mean_of_reported_tables() {
    let data = data();
    let a = logs(&data, 0.5, 200, 3);
    let b = logs(&data, 2.0, 200, 4);
    let mut s = EmEstimatorState::new(6, EmConfig::default());
    let ua = s.clone().client_round(1, &a, &data).unwrap();
    let ub = s.clone().client_round(2, &b, &data).unwrap();
    s.federated_round(&[(1, &a), (2, &b), (3, &[])], &data).unwrap();
    let (ta, tb) = (ua.local_theta.unwrap(), ub.local_theta.unwrap());
    for ((p, a), b) in s.population.iter().zip(&ta).zip(&tb) {
        assert!((p - (a + b) / 2.0).abs() < 1e-12);
    }
    assert_eq!(s.theta(3), vec![1.0; 5]);
}

#[test]
fn estimated_order_matches_the_true_examination_order() {
    let data = data();
    let recs = logs(&data, 1.0, 20_000, 5);
    let mut s = EmEstimatorState::new(6, EmConfig { local_steps: 10, learning_rate: 5.0, ..EmConfig::default() });
    for _ in 0..60 {
        s.federated_round(&[(0, &recs)], &data).unwrap();
    }
    let theta = s.theta(0);
    assert!(theta.windows(2).all(|w| w[0] > w[1]), "{theta:?}");
}
