//! Propensity providers: constant (no debiasing), the true per-user
//! examination probabilities, and a federated regression-based EM
//! estimator of personalized per-position examination probabilities.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::clicksim::{examination_prob, ClickRecord, UserState};
use crate::dataset::{sigmoid, Dataset};
use crate::ranker::dot;
use crate::{Error, Result};

/// Maps a displayed slot of a record (1-based position) to a propensity.
pub trait PropensityProvider {
    fn propensity(&self, record: &ClickRecord, position: usize) -> f64;
}

/// `p = 1` everywhere; turns FedIPS into FedAvg.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnitPropensity;

impl PropensityProvider for UnitPropensity {
    fn propensity(&self, _: &ClickRecord, _: usize) -> f64 {
        1.0
    }
}

/// The true examination probabilities logged with each impression.
#[derive(Debug, Clone, Copy, Default)]
pub struct LoggedPropensity;

impl PropensityProvider for LoggedPropensity {
    fn propensity(&self, record: &ClickRecord, position: usize) -> f64 {
        record.propensities[position - 1]
    }
}

/// A per-position table (index 0 = position 1), floored.
#[derive(Debug, Clone, Copy)]
pub struct PositionTable<'a> {
    pub theta: &'a [f64],
    pub floor: f64,
}

impl PropensityProvider for PositionTable<'_> {
    fn propensity(&self, _: &ClickRecord, position: usize) -> f64 {
        self.theta.get(position - 1).copied().unwrap_or(1.0).max(self.floor)
    }
}

/// `(1 / position)^gamma_s` for this user.
pub fn known_propensity(user: &UserState, position: usize) -> f64 {
    examination_prob(position, user.gamma_s)
}

/// Posterior `(P(E=1 | c), P(R=1 | c))` under `c = e * r` with independent
/// priors `P(E=1) = theta`, `P(R=1) = rel`.
pub fn em_e_step(click: bool, theta: f64, rel: f64) -> Result<(f64, f64)> {
    if click {
        return Ok((1.0, 1.0));
    }
    let denom = 1.0 - theta * rel;
    if denom.is_nan() || denom <= 0.0 {
        return Err(Error::ImpossibleObservation);
    }
    Ok((theta * (1.0 - rel) / denom, rel * (1.0 - theta) / denom))
}

/// Relevance model `F(x) = mu . x + b`; `sigmoid(F(x))` is the prior
/// probability that an examined document is clicked.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl RelevanceModel {
    pub fn zeros(dim: usize) -> Self {
        Self { weights: vec![0.0; dim], bias: 0.0 }
    }

    pub fn prob(&self, x: &[f64]) -> f64 {
        sigmoid(dot(&self.weights, x) + self.bias)
    }

    fn axpy(&mut self, a: f64, other: &RelevanceModel) {
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            *w += a * o;
        }
        self.bias += a * other.bias;
    }

    fn delta_from(&self, base: &RelevanceModel) -> RelevanceModel {
        RelevanceModel {
            weights: self.weights.iter().zip(&base.weights).map(|(a, b)| a - b).collect(),
            bias: self.bias - base.bias,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    /// Number of displayed positions `K`.
    pub positions: usize,
    /// Lower bound for every `theta_k`.
    pub floor: f64,
    /// Local EM iterations per federated round.
    pub iters: usize,
    /// Local gradient steps fitting `F` per EM iteration.
    pub local_steps: usize,
    /// Local learning rate of the `F` regression.
    pub learning_rate: f64,
    /// Server learning rate applied to the mean `F` delta.
    pub server_rate: f64,
    /// Starting `theta_k` (k >= 2) of a client's first EM iteration and of
    /// the population table. Must be below 1: `theta = 1` is a fixed point
    /// of the E-step.
    pub init_theta: f64,
    /// Pseudo-impressions of the population table blended into each
    /// client's `theta`; 0 keeps the tables purely local.
    pub prior_strength: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            positions: 5,
            floor: 0.01,
            iters: 1,
            local_steps: 5,
            learning_rate: 2.0,
            server_rate: 1.0,
            init_theta: 0.5,
            prior_strength: 1000.0,
        }
    }
}

/// Client-side output of one EM iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct MStepOutput {
    pub theta: Vec<f64>,
    /// Impressions per position.
    pub counts: Vec<usize>,
    /// `(query index, document index, posterior relevance)`.
    pub targets: Vec<(usize, usize, f64)>,
}

/// E-step over every displayed slot followed by the `theta` M-step.
/// Positions without impressions keep their previous value.
pub fn em_m_step_local(
    records: &[ClickRecord],
    data: &Dataset,
    relevance: &RelevanceModel,
    theta: &[f64],
    floor: f64,
) -> Result<MStepOutput> {
    let k = theta.len();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    let mut targets = Vec::new();
    for rec in records {
        let q = &data.queries[rec.query];
        for (slot, (&doc, &click)) in rec.displayed.iter().zip(&rec.clicks).enumerate().take(k) {
            let x = &q.docs[doc].features;
            let rel = relevance.prob(x).clamp(1e-6, 1.0 - 1e-6);
            let (exam, r) = em_e_step(click, theta[slot], rel)?;
            sums[slot] += exam;
            counts[slot] += 1;
            targets.push((rec.query, doc, r));
        }
    }
    let mut raw: Vec<f64> = (0..k).map(|i| if counts[i] > 0 { sums[i] / counts[i] as f64 } else { theta[i] }).collect();
    let anchor = raw[0];
    if counts[0] > 0 && anchor > 0.0 {
        for (i, v) in raw.iter_mut().enumerate() {
            if counts[i] > 0 {
                *v /= anchor;
            }
        }
    }
    let theta = raw.into_iter().enumerate().map(|(i, v)| if i == 0 { 1.0 } else { v.clamp(floor, 1.0) }).collect();
    Ok(MStepOutput { theta, counts, targets })
}

/// Least-squares steps on `(sigmoid(F(x)) - target)^2`, full batch.
fn fit_relevance(model: &mut RelevanceModel, targets: &[(usize, usize, f64)], data: &Dataset, steps: usize, lr: f64) {
    if targets.is_empty() {
        return;
    }
    let n = targets.len() as f64;
    for _ in 0..steps {
        let mut grad = RelevanceModel::zeros(model.weights.len());
        for &(qi, di, t) in targets {
            let x = &data.queries[qi].docs[di].features;
            let s = model.prob(x);
            let g = 2.0 * (s - t) * s * (1.0 - s) / n;
            for (gw, xv) in grad.weights.iter_mut().zip(x) {
                *gw += g * xv;
            }
            grad.bias += g;
        }
        model.axpy(-lr, &grad);
    }
}

/// Per-client EM state: the personalized `theta` table.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientEm {
    pub theta: Vec<f64>,
}

/// What one client sends back after its local EM iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientEmUpdate {
    pub relevance_delta: RelevanceModel,
    /// Purely local `theta` of the last M-step; `None` without data.
    pub local_theta: Option<Vec<f64>>,
}

/// Shared relevance model, a population `theta` table, and one
/// personalized `theta` table per client.
#[derive(Debug, Clone, PartialEq)]
pub struct EmEstimatorState {
    pub relevance: RelevanceModel,
    pub population: Vec<f64>,
    pub clients: BTreeMap<u64, ClientEm>,
    pub config: EmConfig,
}

impl EmEstimatorState {
    pub fn new(feature_dim: usize, config: EmConfig) -> Self {
        let population = (0..config.positions).map(|k| if k == 0 { 1.0 } else { config.init_theta }).collect();
        Self { relevance: RelevanceModel::zeros(feature_dim), population, clients: BTreeMap::new(), config }
    }

    /// Floored `theta` of `client` at `position`; 1 before any EM round
    /// touched the client, and always 1 at position 1.
    pub fn estimated_propensity(&self, client: u64, position: usize) -> f64 {
        if position <= 1 {
            return 1.0;
        }
        self.clients.get(&client).and_then(|c| c.theta.get(position - 1).copied()).unwrap_or(1.0).max(self.config.floor)
    }

    pub fn theta(&self, client: u64) -> Vec<f64> {
        (1..=self.config.positions).map(|k| self.estimated_propensity(client, k)).collect()
    }

    /// Client half of a federated EM round: `iters` local EM iterations on
    /// `records` starting from the broadcast relevance model. Each M-step
    /// estimate is blended with the population table in proportion
    /// `impressions : prior_strength`. Updates the client's `theta` table.
    pub fn client_round(&mut self, client: u64, records: &[ClickRecord], data: &Dataset) -> Result<ClientEmUpdate> {
        let cfg = self.config;
        if records.is_empty() || cfg.iters == 0 {
            return Ok(ClientEmUpdate {
                relevance_delta: RelevanceModel::zeros(self.relevance.weights.len()),
                local_theta: None,
            });
        }
        let mut local = self.relevance.clone();
        let mut theta = match self.clients.get(&client) {
            Some(c) => c.theta.clone(),
            None => self.population.clone(),
        };
        let mut local_theta = theta.clone();
        for _ in 0..cfg.iters {
            let out = em_m_step_local(records, data, &local, &theta, cfg.floor)?;
            theta = out
                .theta
                .iter()
                .zip(&out.counts)
                .zip(&self.population)
                .map(|((&t, &n), &prior)| {
                    let n = n as f64;
                    if n + cfg.prior_strength > 0.0 {
                        ((n * t + cfg.prior_strength * prior) / (n + cfg.prior_strength)).max(cfg.floor)
                    } else {
                        t
                    }
                })
                .collect();
            local_theta = out.theta;
            fit_relevance(&mut local, &out.targets, data, cfg.local_steps, cfg.learning_rate);
        }
        self.clients.insert(client, ClientEm { theta });
        Ok(ClientEmUpdate { relevance_delta: local.delta_from(&self.relevance), local_theta: Some(local_theta) })
    }

    /// Server half: `F <- F + server_rate * mean(delta)`; the population
    /// table becomes the mean of the reported local tables.
    pub fn apply_updates(&mut self, updates: &[ClientEmUpdate]) {
        if updates.is_empty() {
            return;
        }
        let mut mean = RelevanceModel::zeros(self.relevance.weights.len());
        for u in updates {
            mean.axpy(1.0 / updates.len() as f64, &u.relevance_delta);
        }
        self.relevance.axpy(self.config.server_rate, &mean);
        let reported: Vec<&Vec<f64>> = updates.iter().filter_map(|u| u.local_theta.as_ref()).collect();
        if !reported.is_empty() {
            for (k, p) in self.population.iter_mut().enumerate() {
                *p = reported.iter().map(|t| t[k]).sum::<f64>() / reported.len() as f64;
            }
        }
    }

    /// One full federated EM round over `(client id, records)` pairs, in
    /// the given order.
    pub fn federated_round(&mut self, clients: &[(u64, &[ClickRecord])], data: &Dataset) -> Result<()> {
        let mut updates = Vec::with_capacity(clients.len());
        for &(id, records) in clients {
            updates.push(self.client_round(id, records, data)?);
        }
        self.apply_updates(&updates);
        Ok(())
    }
}
