use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use fultr::config::{ExperimentSpec, Variant};
use fultr::runner;
use fultr::svmlight::save_svmlight;
use fultr_core::dataset::generate_synthetic_with;

/// Worker threads for independent runs; unset means one per core.
const THREADS_ENV: &str = "FULTR_THREADS";

#[derive(Parser)]
#[command(name = "fultr", version, about = "Federated unbiased learning-to-rank simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fedips,
    FedipsEstimated,
    Fedavg,
}

impl From<ModeArg> for Variant {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Fedips => Variant::Fedips,
            ModeArg::FedipsEstimated => Variant::FedipsEstimated,
            ModeArg::Fedavg => Variant::Fedavg,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a TOML spec, flags, or both (flags win).
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Variant to run; repeat for several. Default: fedips and fedavg.
        #[arg(long, value_enum)]
        mode: Vec<ModeArg>,
        #[arg(long, allow_hyphen_values = true)]
        gamma: Option<f64>,
        /// Size of the user population.
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        users_per_round: Option<usize>,
        /// Clicks per user per round.
        #[arg(long)]
        clicks: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        repeats: Option<usize>,
        /// SVMLight dataset instead of the synthetic generator.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Grid-search learning rates before the evaluation runs.
        #[arg(long)]
        tune: bool,
        /// Also train the full-information lambda baseline.
        #[arg(long)]
        lambda: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset in SVMLight format.
    GenData {
        #[arg(long, default_value_t = 500)]
        queries: usize,
        #[arg(long, default_value_t = 20)]
        docs: usize,
        #[arg(long, default_value_t = 50)]
        features: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn threads() -> anyhow::Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => Ok(Some(v.parse().with_context(|| format!("{THREADS_ENV}={v} is not a thread count"))?)),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            mode,
            gamma,
            users,
            users_per_round,
            clicks,
            rounds,
            seed,
            repeats,
            data,
            tune,
            lambda,
            out,
        } => {
            let mut spec = match &config {
                Some(path) => ExperimentSpec::load(path)?,
                None => ExperimentSpec::default(),
            };
            if !mode.is_empty() {
                spec.variants = mode.into_iter().map(Variant::from).collect();
            }
            let f = &mut spec.federation;
            if let Some(g) = gamma {
                f.gamma = g;
            }
            if let Some(u) = users {
                f.num_users = u;
                if users_per_round.is_none() {
                    f.users_per_round = f.users_per_round.min(u);
                }
            }
            if let Some(u) = users_per_round {
                f.users_per_round = u;
            }
            if let Some(c) = clicks {
                f.clicks_per_round = c;
            }
            if let Some(r) = rounds {
                f.rounds = r;
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(r) = repeats {
                spec.repeats = r;
            }
            if data.is_some() {
                spec.dataset.path = data;
            }
            spec.tune |= tune;
            spec.lambda_linear |= lambda;
            if let Some(o) = out {
                spec.out_dir = o;
            }
            spec.validate()?;
            let summary = runner::run(&spec, threads()?)?;
            print!("{summary}");
            eprintln!("results in {}", spec.out_dir.display());
            Ok(())
        }
        Command::GenData { queries, docs, features, seed, out } => {
            let (data, _) = generate_synthetic_with(queries, docs, features, seed, &Default::default());
            save_svmlight(&data, &out).with_context(|| format!("writing {}", out.display()))?;
            eprintln!("wrote {} queries, {} documents to {}", data.len(), data.num_docs(), out.display());
            Ok(())
        }
    }
}
