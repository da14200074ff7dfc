//! FedOpt-structured training rounds: client sampling, broadcast, local
//! IPS-weighted SGD, delta averaging and a server step. FedIPS and FedAvg
//! differ only in the propensity provider handed to the clients.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::clicksim::{
    collect_round_clicks, create_users, train_logging_policy, ClickModel, ClickRecord, LoggingConfig, LoggingPolicy,
    UserPopulation, UserState,
};
use crate::dataset::Dataset;
use crate::metrics::mean_ndcg;
use crate::objective::{accumulate_click_gradient, client_loss, ClientLossContext};
use crate::propensity::{
    ClientEmUpdate, EmConfig, EmEstimatorState, LoggedPropensity, PositionTable, PropensityProvider, UnitPropensity,
};
use crate::ranker::LinearRanker;
use crate::rng::{self, SimRng, Stream};
use crate::{Error, Result};

/// Local learning rates searched during tuning.
pub const LOCAL_LR_GRID: [f64; 5] = [0.00001, 0.0001, 0.001, 0.01, 0.1];
/// Global learning rates searched during tuning.
pub const GLOBAL_LR_GRID: [f64; 4] = [0.05, 0.5, 1.0, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// IPS-weighted client updates.
    FedIps,
    /// Unweighted client updates (every propensity is 1).
    FedAvg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropensityMode {
    /// The users' true examination probabilities.
    Known,
    /// Personalized estimates from the federated EM estimator.
    Estimated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub num_users: usize,
    pub users_per_round: usize,
    pub queries_per_user: usize,
    /// Displayed positions `K`.
    pub positions: usize,
    /// Clicks collected per user per round `m`.
    pub clicks_per_round: usize,
    /// Impression cap per user per round, as a multiple of `m`.
    pub impression_cap_factor: usize,
    pub gamma: f64,
    pub gamma_sigma: f64,
    pub local_lr: f64,
    pub global_lr: f64,
    pub rounds: usize,
    pub mode: Mode,
    pub propensity_mode: PropensityMode,
    pub seed: u64,
    pub eval_every: usize,
    /// Truncation of the evaluation NDCG.
    pub eval_k: usize,
    pub click_model: ClickModel,
    pub logging: LoggingConfig,
    pub em: EmConfig,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            num_users: 200,
            users_per_round: 50,
            queries_per_user: 5,
            positions: 5,
            clicks_per_round: 10,
            impression_cap_factor: 50,
            gamma: 1.0,
            gamma_sigma: 0.1,
            local_lr: 0.01,
            global_lr: 1.0,
            rounds: 100,
            mode: Mode::FedIps,
            propensity_mode: PropensityMode::Known,
            seed: 0,
            eval_every: 1,
            eval_k: 5,
            click_model: ClickModel::default(),
            logging: LoggingConfig::default(),
            em: EmConfig::default(),
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        let checks: [(bool, &'static str); 12] = [
            (self.num_users >= 1, "num_users must be at least 1"),
            (self.users_per_round >= 1, "users_per_round must be at least 1"),
            (self.users_per_round <= self.num_users, "users_per_round must not exceed num_users"),
            (self.queries_per_user >= 1, "queries_per_user must be at least 1"),
            (self.positions >= 1, "positions must be at least 1"),
            (self.clicks_per_round >= 1, "clicks_per_round must be at least 1"),
            (self.local_lr > 0.0 && self.global_lr > 0.0, "learning rates must be positive"),
            (self.rounds >= 1, "rounds must be at least 1"),
            (self.eval_every >= 1 && self.eval_k >= 1, "eval_every and eval_k must be at least 1"),
            (self.gamma >= 0.0 && self.gamma_sigma >= 0.0, "gamma and its spread must be non-negative"),
            (
                self.em.floor > 0.0 && self.em.init_theta > 0.0 && self.em.init_theta < 1.0,
                "EM floor and initial theta must lie in (0, 1)",
            ),
            (self.em.prior_strength >= 0.0, "EM prior strength must be non-negative"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::InvalidConfig(msg)),
            None => Ok(()),
        }
    }

    fn population(&self) -> UserPopulation {
        UserPopulation {
            num_users: self.num_users,
            queries_per_user: self.queries_per_user,
            gamma: self.gamma,
            sigma: self.gamma_sigma,
        }
    }
}

/// Result of one client's local optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client: u64,
    /// Final local weights minus the broadcast weights.
    pub delta: Vec<f64>,
    pub clicks_used: usize,
    pub impressions_used: usize,
}

/// One row of an experiment trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    /// 1-based round index.
    pub round: usize,
    /// Test NDCG@k, present on evaluation rounds.
    pub ndcg: Option<f64>,
    /// Mean over sampled clients of the surrogate loss at the broadcast
    /// weights.
    pub mean_client_loss: f64,
    pub total_clicks: usize,
    /// Clients that hit the impression cap before `m` clicks.
    pub capped_clients: usize,
}

/// One SGD pass over the clicked documents of `records`, in an order drawn
/// from `rng`, starting from the broadcast weights.
pub fn client_opt(
    client: u64,
    w_t: &LinearRanker,
    records: &[ClickRecord],
    data: &Dataset,
    local_lr: f64,
    propensity: &dyn PropensityProvider,
    rng: &mut SimRng,
) -> Result<ClientUpdate> {
    let mut steps: Vec<(usize, usize, usize)> =
        records.iter().enumerate().flat_map(|(ri, rec)| rec.clicked().map(move |(pos, doc)| (ri, pos, doc))).collect();
    steps.shuffle(rng);
    let mut w = w_t.clone();
    let mut grad = vec![0.0; w.dim()];
    for &(ri, pos, doc) in &steps {
        let rec = &records[ri];
        let q = &data.queries[rec.query];
        let p = propensity.propensity(rec, pos);
        grad.iter_mut().for_each(|g| *g = 0.0);
        accumulate_click_gradient(&w, q, &w.scores(q), doc, p, 1.0, &mut grad)?;
        for (wk, g) in w.weights.iter_mut().zip(&grad) {
            *wk -= local_lr * g;
        }
    }
    Ok(ClientUpdate {
        client,
        delta: w.weights.iter().zip(&w_t.weights).map(|(a, b)| a - b).collect(),
        clicks_used: steps.len(),
        impressions_used: records.len(),
    })
}

/// Unweighted mean of the client deltas, accumulated in ascending client id
/// order.
pub fn mean_delta(updates: &[ClientUpdate]) -> Result<Vec<f64>> {
    let first = updates.first().ok_or(Error::NoUpdates)?;
    let dim = first.delta.len();
    let mut order: Vec<&ClientUpdate> = updates.iter().collect();
    order.sort_by_key(|u| u.client);
    let mut sum = vec![0.0; dim];
    for u in order {
        if u.delta.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: u.delta.len() });
        }
        for (s, d) in sum.iter_mut().zip(&u.delta) {
            *s += d;
        }
    }
    let n = updates.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// `w_t + eta_g * mean(delta)`.
pub fn server_opt(w_t: &LinearRanker, updates: &[ClientUpdate], global_lr: f64) -> Result<LinearRanker> {
    SgdServer { rate: global_lr }.step(w_t, &mean_delta(updates)?)
}

/// Server-side optimizer consuming the averaged client delta.
pub trait ServerOptimizer {
    fn step(&mut self, w_t: &LinearRanker, mean_delta: &[f64]) -> Result<LinearRanker>;
}

/// Plain SGD on the pseudo-gradient `-mean_delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdServer {
    pub rate: f64,
}

impl ServerOptimizer for SgdServer {
    fn step(&mut self, w_t: &LinearRanker, mean_delta: &[f64]) -> Result<LinearRanker> {
        if mean_delta.len() != w_t.dim() {
            return Err(Error::DimensionMismatch { expected: w_t.dim(), actual: mean_delta.len() });
        }
        Ok(LinearRanker::new(w_t.weights.iter().zip(mean_delta).map(|(w, d)| w + self.rate * d).collect()))
    }
}

/// A running federated experiment.
pub struct Simulation<'a> {
    cfg: FederationConfig,
    train: &'a Dataset,
    test: &'a Dataset,
    policy: LoggingPolicy,
    users: Vec<UserState>,
    model: LinearRanker,
    round: usize,
    sampler: SimRng,
    server: Box<dyn ServerOptimizer + Send + 'a>,
    em: Option<EmEstimatorState>,
    /// Per-user click logs kept on device for propensity estimation.
    logs: Vec<Vec<ClickRecord>>,
}

impl core::fmt::Debug for Simulation<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Simulation")
            .field("round", &self.round)
            .field("model", &self.model)
            .field("users", &self.users.len())
            .finish_non_exhaustive()
    }
}

impl<'a> Simulation<'a> {
    /// Validates `cfg`, trains the logging policy, creates the user
    /// population and starts from the zero model.
    pub fn new(cfg: FederationConfig, train: &'a Dataset, test: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() || test.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if train.feature_dim != test.feature_dim {
            return Err(Error::DimensionMismatch { expected: train.feature_dim, actual: test.feature_dim });
        }
        let policy = train_logging_policy(train, &cfg.logging, cfg.seed)?;
        let users = create_users(&cfg.population(), train.len(), cfg.seed);
        let estimating = cfg.mode == Mode::FedIps && cfg.propensity_mode == PropensityMode::Estimated;
        let em = estimating
            .then(|| EmEstimatorState::new(train.feature_dim, EmConfig { positions: cfg.positions, ..cfg.em }));
        let logs = if estimating { vec![Vec::new(); users.len()] } else { Vec::new() };
        Ok(Self {
            model: LinearRanker::zeros(train.feature_dim),
            sampler: rng::stream(cfg.seed, Stream::RoundSampling, 0),
            server: Box::new(SgdServer { rate: cfg.global_lr }),
            cfg,
            train,
            test,
            policy,
            users,
            round: 0,
            em,
            logs,
        })
    }

    pub fn with_server_optimizer(mut self, server: Box<dyn ServerOptimizer + Send + 'a>) -> Self {
        self.server = server;
        self
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn model(&self) -> &LinearRanker {
        &self.model
    }

    pub fn logging_policy(&self) -> &LoggingPolicy {
        &self.policy
    }

    pub fn users(&self) -> &[UserState] {
        &self.users
    }

    pub fn estimator(&self) -> Option<&EmEstimatorState> {
        self.em.as_ref()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn run_round(&mut self) -> Result<RoundMetrics> {
        self.round += 1;
        let cfg = &self.cfg;
        let ids = {
            let mut ids = rand::seq::index::sample(&mut self.sampler, self.users.len(), cfg.users_per_round).into_vec();
            ids.sort_unstable();
            ids
        };
        let max_impressions = cfg.impression_cap_factor.saturating_mul(cfg.clicks_per_round).max(1);

        let mut updates = Vec::with_capacity(ids.len());
        let mut em_updates: Vec<ClientEmUpdate> = Vec::new();
        let (mut loss_sum, mut total_clicks, mut capped) = (0.0, 0usize, 0usize);
        for &id in &ids {
            let user = &mut self.users[id];
            let round = collect_round_clicks(
                user,
                self.train,
                &self.policy,
                cfg.positions,
                cfg.clicks_per_round,
                max_impressions,
                &cfg.click_model,
            );
            total_clicks += round.clicks;
            capped += usize::from(round.capped);

            let theta;
            let provider: &dyn PropensityProvider = match (cfg.mode, cfg.propensity_mode, self.em.as_mut()) {
                (Mode::FedAvg, _, _) => &UnitPropensity,
                (Mode::FedIps, PropensityMode::Known, _) => &LoggedPropensity,
                (Mode::FedIps, PropensityMode::Estimated, Some(em)) => {
                    let log = &mut self.logs[id];
                    log.extend(round.records.iter().cloned());
                    em_updates.push(em.client_round(user.id, log, self.train)?);
                    theta = em.theta(user.id);
                    &PositionTable { theta: &theta, floor: em.config.floor }
                }
                (Mode::FedIps, PropensityMode::Estimated, None) => unreachable!("estimator exists in estimated mode"),
            };

            loss_sum += client_loss(&ClientLossContext {
                model: &self.model,
                records: &round.records,
                data: self.train,
                propensity: provider,
            })?;
            updates.push(client_opt(
                user.id,
                &self.model,
                &round.records,
                self.train,
                cfg.local_lr,
                provider,
                &mut user.rng,
            )?);
        }

        self.model = self.server.step(&self.model, &mean_delta(&updates)?)?;
        if let Some(em) = self.em.as_mut() {
            em.apply_updates(&em_updates);
        }

        let evaluate = self.round.is_multiple_of(cfg.eval_every) || self.round == cfg.rounds;
        let ndcg = if evaluate { Some(mean_ndcg(&self.model, self.test, cfg.eval_k)?) } else { None };
        Ok(RoundMetrics {
            round: self.round,
            ndcg,
            mean_client_loss: loss_sum / ids.len() as f64,
            total_clicks,
            capped_clients: capped,
        })
    }
}

/// Runs `cfg.rounds` rounds from the zero model and returns the metrics of
/// the evaluated rounds.
pub fn run_experiment(cfg: &FederationConfig, train: &Dataset, test: &Dataset) -> Result<Vec<RoundMetrics>> {
    let mut sim = Simulation::new(cfg.clone(), train, test)?;
    let mut trace = Vec::new();
    for _ in 0..cfg.rounds {
        let m = sim.run_round()?;
        if m.ndcg.is_some() {
            trace.push(m);
        }
    }
    Ok(trace)
}
