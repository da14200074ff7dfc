//! Experiment specifications: TOML files or command-line flags resolved
//! into a plan of independent runs.

use std::path::{Path, PathBuf};

use fultr_core::clicksim::ClickModel;
use fultr_core::dataset::SyntheticParams;
use fultr_core::federation::{FederationConfig, Mode, PropensityMode};
use fultr_core::propensity::EmConfig;
use fultr_core::rng::derive_seed;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error("invalid value: {0}")]
    Range(String),
}

/// A training variant run at every sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// FedIPS with the users' true propensities.
    Fedips,
    /// FedIPS with propensities from the federated EM estimator.
    FedipsEstimated,
    Fedavg,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Fedips => "fedips",
            Variant::FedipsEstimated => "fedips-estimated",
            Variant::Fedavg => "fedavg",
        }
    }

    pub fn apply(self, cfg: &mut FederationConfig) {
        let (mode, propensity) = match self {
            Variant::Fedips => (Mode::FedIps, PropensityMode::Known),
            Variant::FedipsEstimated => (Mode::FedIps, PropensityMode::Estimated),
            Variant::Fedavg => (Mode::FedAvg, PropensityMode::Known),
        };
        cfg.mode = mode;
        cfg.propensity_mode = propensity;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    /// SVMLight file; a synthetic set is generated when absent.
    pub path: Option<PathBuf>,
    /// Separate SVMLight test file; otherwise `path` is split.
    pub test_path: Option<PathBuf>,
    pub queries: usize,
    pub docs_per_query: usize,
    pub features: usize,
    pub label_noise: f64,
    pub offset: f64,
    pub signal: f64,
    pub test_fraction: f64,
    pub filter_uniform: bool,
    pub normalize: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        let p = SyntheticParams::default();
        Self {
            path: None,
            test_path: None,
            queries: 500,
            docs_per_query: 20,
            features: 50,
            label_noise: p.label_noise,
            offset: p.offset,
            signal: p.signal,
            test_fraction: 0.2,
            filter_uniform: true,
            normalize: true,
        }
    }
}

impl DatasetSpec {
    pub fn synthetic_params(&self) -> SyntheticParams {
        SyntheticParams { label_noise: self.label_noise, offset: self.offset, signal: self.signal }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmSpec {
    pub iters: usize,
    pub local_steps: usize,
    pub learning_rate: f64,
    pub server_rate: f64,
    pub floor: f64,
    pub init_theta: f64,
    pub prior_strength: f64,
}

impl Default for EmSpec {
    fn default() -> Self {
        let e = EmConfig::default();
        Self {
            iters: e.iters,
            local_steps: e.local_steps,
            learning_rate: e.learning_rate,
            server_rate: e.server_rate,
            floor: e.floor,
            init_theta: e.init_theta,
            prior_strength: e.prior_strength,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationSpec {
    pub num_users: usize,
    pub users_per_round: usize,
    pub queries_per_user: usize,
    pub positions: usize,
    pub clicks_per_round: usize,
    pub impression_cap_factor: usize,
    pub gamma: f64,
    pub gamma_sigma: f64,
    pub click_noise: f64,
    pub local_lr: f64,
    pub global_lr: f64,
    pub rounds: usize,
    pub eval_every: usize,
    pub em: EmSpec,
}

impl Default for FederationSpec {
    fn default() -> Self {
        let f = FederationConfig::default();
        Self {
            num_users: f.num_users,
            users_per_round: f.users_per_round,
            queries_per_user: f.queries_per_user,
            positions: f.positions,
            clicks_per_round: f.clicks_per_round,
            impression_cap_factor: f.impression_cap_factor,
            gamma: f.gamma,
            gamma_sigma: f.gamma_sigma,
            click_noise: f.click_model.noise,
            local_lr: f.local_lr,
            global_lr: f.global_lr,
            rounds: f.rounds,
            eval_every: f.eval_every,
            em: EmSpec::default(),
        }
    }
}

impl FederationSpec {
    pub fn to_config(&self) -> FederationConfig {
        let base = FederationConfig::default();
        FederationConfig {
            num_users: self.num_users,
            users_per_round: self.users_per_round,
            queries_per_user: self.queries_per_user,
            positions: self.positions,
            clicks_per_round: self.clicks_per_round,
            impression_cap_factor: self.impression_cap_factor,
            gamma: self.gamma,
            gamma_sigma: self.gamma_sigma,
            local_lr: self.local_lr,
            global_lr: self.global_lr,
            rounds: self.rounds,
            eval_every: self.eval_every,
            click_model: ClickModel { noise: self.click_noise, ..ClickModel::default() },
            em: EmConfig {
                positions: self.positions,
                floor: self.em.floor,
                iters: self.em.iters,
                local_steps: self.em.local_steps,
                learning_rate: self.em.learning_rate,
                server_rate: self.em.server_rate,
                init_theta: self.em.init_theta,
                prior_strength: self.em.prior_strength,
            },
            ..base
        }
    }
}

/// Sweep dimensions; an absent list sweeps over the single base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub gamma: Option<Vec<f64>>,
    pub num_users: Option<Vec<usize>>,
    pub users_per_round: Option<Vec<usize>>,
    pub clicks_per_round: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub repeats: usize,
    pub out_dir: PathBuf,
    pub variants: Vec<Variant>,
    /// Also train the full-information lambda baseline once per repeat.
    pub lambda_linear: bool,
    /// Grid-search learning rates per sweep point and variant.
    pub tune: bool,
    /// Independent replicas averaged when scoring a grid cell.
    pub tuning_replicas: usize,
    pub dataset: DatasetSpec,
    pub federation: FederationSpec,
    pub sweep: SweepSpec,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            repeats: 1,
            out_dir: PathBuf::from("results"),
            variants: vec![Variant::Fedips, Variant::Fedavg],
            lambda_linear: false,
            tune: false,
            tuning_replicas: 2,
            dataset: DatasetSpec::default(),
            federation: FederationSpec::default(),
            sweep: SweepSpec::default(),
        }
    }
}

/// Coordinates of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    pub gamma: f64,
    pub num_users: usize,
    pub users_per_round: usize,
    pub clicks_per_round: usize,
}

/// One planned run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub point: SweepPoint,
    pub variant: Variant,
    pub repeat: usize,
    /// Seed of the simulation; shared by all variants of a point and
    /// repeat so that they see the same users and logging policy.
    pub seed: u64,
    /// Seed of the dataset (generation and split); shared by all points.
    pub data_seed: u64,
    pub config: FederationConfig,
}

impl RunPlan {
    pub fn label(&self) -> String {
        format!("p{:02}-{}-r{}", self.point.index, self.variant.name(), self.repeat)
    }
}

const DATA_SEED_LANE: u64 = u64::MAX;
const TUNING_SEED_SALT: u64 = 0x7475_6e69_6e67;

/// Seed of the dataset used by `repeat`.
pub fn data_seed(master: u64, repeat: usize) -> u64 {
    derive_seed(master, DATA_SEED_LANE, repeat as u64)
}

/// Seed of a simulation at `point` for `repeat`.
pub fn run_seed(master: u64, point: usize, repeat: usize) -> u64 {
    derive_seed(master, point as u64, repeat as u64)
}

/// Master seed of the tuning replicas, disjoint from the evaluation seeds.
pub fn tuning_master(master: u64) -> u64 {
    derive_seed(master, TUNING_SEED_SALT, 0)
}

fn range(msg: impl Into<String>) -> ConfigError {
    ConfigError::Range(msg.into())
}

fn list<T: Copy>(name: &str, values: &Option<Vec<T>>, base: T) -> Result<Vec<T>, ConfigError> {
    match values {
        None => Ok(vec![base]),
        Some(v) if v.is_empty() => Err(range(format!("sweep list `{name}` is empty"))),
        Some(v) => Ok(v.clone()),
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.repeats < 1 {
            return Err(range("repeats must be at least 1"));
        }
        if self.variants.is_empty() {
            return Err(range("variants must not be empty"));
        }
        if self.tune && self.tuning_replicas < 1 {
            return Err(range("tuning_replicas must be at least 1"));
        }
        let d = &self.dataset;
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return Err(range("dataset.test_fraction must lie in (0, 1)"));
        }
        if d.path.is_none() && (d.queries < 2 || d.docs_per_query < 2 || d.features < 1) {
            return Err(range("synthetic datasets need at least 2 queries, 2 documents per query and 1 feature"));
        }
        if !(0.0..=1.0).contains(&self.federation.click_noise) {
            return Err(range("federation.click_noise must lie in [0, 1]"));
        }
        for p in self.points()? {
            if p.gamma < 0.0 || !p.gamma.is_finite() {
                return Err(range(format!("gamma must be non-negative, got {}", p.gamma)));
            }
            self.config_at(&p).validate().map_err(|e| range(e.to_string()))?;
        }
        Ok(())
    }

    /// Cartesian product of the sweep lists, in a fixed order.
    pub fn points(&self) -> Result<Vec<SweepPoint>, ConfigError> {
        let f = &self.federation;
        let gammas = list("gamma", &self.sweep.gamma, f.gamma)?;
        let users = list("num_users", &self.sweep.num_users, f.num_users)?;
        let per_round = list("users_per_round", &self.sweep.users_per_round, f.users_per_round)?;
        let clicks = list("clicks_per_round", &self.sweep.clicks_per_round, f.clicks_per_round)?;
        let mut points = Vec::new();
        for &gamma in &gammas {
            for &num_users in &users {
                for &users_per_round in &per_round {
                    for &clicks_per_round in &clicks {
                        points.push(SweepPoint {
                            index: points.len(),
                            gamma,
                            num_users,
                            users_per_round,
                            clicks_per_round,
                        });
                    }
                }
            }
        }
        Ok(points)
    }

    /// Base configuration with the point's coordinates applied.
    pub fn config_at(&self, p: &SweepPoint) -> FederationConfig {
        FederationConfig {
            gamma: p.gamma,
            num_users: p.num_users,
            users_per_round: p.users_per_round,
            clicks_per_round: p.clicks_per_round,
            ..self.federation.to_config()
        }
    }

    /// Every (point, variant, repeat) run, points outermost.
    pub fn plan(&self) -> Result<Vec<RunPlan>, ConfigError> {
        let mut runs = Vec::new();
        for point in self.points()? {
            for &variant in &self.variants {
                for repeat in 0..self.repeats {
                    let seed = run_seed(self.seed, point.index, repeat);
                    let mut config = FederationConfig { seed, ..self.config_at(&point) };
                    variant.apply(&mut config);
                    runs.push(RunPlan {
                        point,
                        variant,
                        repeat,
                        seed,
                        data_seed: data_seed(self.seed, repeat),
                        config,
                    });
                }
            }
        }
        Ok(runs)
    }
}
