//! Executes an experiment plan and writes its outputs:
//!
//! - `runs/<label>.csv`: `round,ndcg5,mean_client_loss,total_clicks`, one
//!   row per evaluated round;
//! - `lambda.csv`: test NDCG@5 of the full-information baseline per repeat;
//! - `manifest.json`: the resolved spec, tuned learning rates and run list;
//! - `summary.csv`: mean and standard error of the final NDCG@5 per sweep
//!   point and variant.
//!
//! Every file is written to a temporary name and renamed into place. A run
//! failure leaves a `PARTIAL` marker next to whatever completed.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use fultr_core::baseline::{train_lambda_linear, LambdaConfig, LAMBDA_LR_GRID};
use fultr_core::dataset::{generate_synthetic_with, Dataset};
use fultr_core::federation::{run_experiment, FederationConfig, RoundMetrics, GLOBAL_LR_GRID, LOCAL_LR_GRID};
use fultr_core::metrics::mean_ndcg;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{data_seed, run_seed, tuning_master, ExperimentSpec, RunPlan, SweepPoint, Variant};
use crate::svmlight::load_svmlight;

pub const PARTIAL_MARKER: &str = "PARTIAL";
const EVAL_K: usize = 5;

#[derive(Debug, Serialize)]
struct CsvRow {
    round: usize,
    ndcg5: f64,
    mean_client_loss: f64,
    total_clicks: usize,
}

/// Train/test pairs, one per repeat (or tuning replica).
#[derive(Debug)]
pub struct DataSource {
    loaded: Option<(Dataset, Option<Dataset>)>,
}

impl DataSource {
    pub fn open(spec: &ExperimentSpec) -> anyhow::Result<Self> {
        let d = &spec.dataset;
        let loaded = match &d.path {
            None => None,
            Some(path) => {
                let train = load_svmlight(path).with_context(|| format!("loading {}", path.display()))?;
                let test = match &d.test_path {
                    Some(p) => Some(load_svmlight(p).with_context(|| format!("loading {}", p.display()))?),
                    None => None,
                };
                Some((train, test))
            }
        };
        Ok(Self { loaded })
    }

    pub fn split(&self, spec: &ExperimentSpec, seed: u64) -> anyhow::Result<(Dataset, Dataset)> {
        let d = &spec.dataset;
        let prep = |data: Dataset| {
            let data = if d.filter_uniform { data.filter_uniform_queries() } else { data };
            if d.normalize {
                data.normalize_query_level()
            } else {
                data
            }
        };
        match &self.loaded {
            Some((train, Some(test))) => Ok((prep(train.clone()), prep(test.clone()))),
            Some((all, None)) => Ok(prep(all.clone()).split(d.test_fraction, seed)?),
            None => {
                let (data, _) =
                    generate_synthetic_with(d.queries, d.docs_per_query, d.features, seed, &d.synthetic_params());
                Ok(prep(data).split(d.test_fraction, seed)?)
            }
        }
    }
}

/// Mean and standard error of the mean (sample standard deviation over
/// `sqrt(n)`; 0 for a single value).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn final_ndcg(rows: &[RoundMetrics]) -> f64 {
    rows.last().and_then(|m| m.ndcg).unwrap_or(f64::NAN)
}

pub fn metrics_csv(rows: &[RoundMetrics]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for m in rows {
        let ndcg5 = m.ndcg.ok_or_else(|| anyhow!("round {} was not evaluated", m.round))?;
        w.serialize(CsvRow {
            round: m.round,
            ndcg5,
            mean_client_loss: m.mean_client_loss,
            total_clicks: m.total_clicks,
        })?;
    }
    Ok(w.into_inner()?)
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming {}", tmp.display()))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TunedRates {
    pub point: usize,
    pub variant: Variant,
    pub local_lr: f64,
    pub global_lr: f64,
    /// Mean final NDCG@5 over the tuning replicas.
    pub score: f64,
}

#[derive(Debug, Clone, Serialize)]
struct ManifestRun {
    label: String,
    file: String,
    point: usize,
    variant: Variant,
    repeat: usize,
    seed: u64,
    data_seed: u64,
    local_lr: f64,
    global_lr: f64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    spec: &'a ExperimentSpec,
    points: Vec<SweepPoint>,
    tuned: &'a [TunedRates],
    lambda_learning_rate: Option<f64>,
    runs: Vec<ManifestRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    /// Sweep point index; `None` for the lambda baseline.
    pub point: Option<usize>,
    pub variant: String,
    pub gamma: Option<f64>,
    pub num_users: Option<usize>,
    pub users_per_round: Option<usize>,
    pub clicks_per_round: Option<usize>,
    pub runs: usize,
    pub mean_final_ndcg5: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>5}  {:<17} {:>6} {:>6} {:>6} {:>6} {:>4}  final NDCG@5",
            "point", "variant", "gamma", "users", "/round", "clicks", "runs"
        )?;
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        for r in &self.rows {
            writeln!(
                f,
                "{:>5}  {:<17} {:>6} {:>6} {:>6} {:>6} {:>4}  {:.4} ± {:.4}",
                opt(r.point.map(|p| p.to_string())),
                r.variant,
                opt(r.gamma.map(|g| g.to_string())),
                opt(r.num_users.map(|g| g.to_string())),
                opt(r.users_per_round.map(|g| g.to_string())),
                opt(r.clicks_per_round.map(|g| g.to_string())),
                r.runs,
                r.mean_final_ndcg5,
                r.stderr
            )?;
        }
        Ok(())
    }
}

/// Grid search over the federated learning-rate grid for every sweep point
/// and variant, on replicas seeded independently of the evaluation runs.
pub fn tune_rates(spec: &ExperimentSpec, source: &DataSource) -> anyhow::Result<Vec<TunedRates>> {
    let master = tuning_master(spec.seed);
    let data: Vec<(Dataset, Dataset)> =
        (0..spec.tuning_replicas).map(|r| source.split(spec, data_seed(master, r))).collect::<anyhow::Result<_>>()?;
    let mut jobs = Vec::new();
    for p in spec.points()? {
        for &variant in &spec.variants {
            let mut base = spec.config_at(&p);
            variant.apply(&mut base);
            jobs.push((p, variant, base));
        }
    }
    jobs.par_iter()
        .map(|(p, variant, base)| {
            let mut best: Option<TunedRates> = None;
            for &local_lr in &LOCAL_LR_GRID {
                for &global_lr in &GLOBAL_LR_GRID {
                    let mut finals = Vec::with_capacity(data.len());
                    for (r, (train, test)) in data.iter().enumerate() {
                        let cfg = FederationConfig {
                            local_lr,
                            global_lr,
                            seed: run_seed(master, p.index, r),
                            ..base.clone()
                        };
                        finals.push(final_ndcg(&run_experiment(&cfg, train, test)?));
                    }
                    let score = mean_stderr(&finals).0;
                    if best.is_none_or(|b| score > b.score) {
                        best = Some(TunedRates { point: p.index, variant: *variant, local_lr, global_lr, score });
                    }
                }
            }
            best.ok_or_else(|| anyhow!("empty learning-rate grid"))
        })
        .collect()
}

/// Picks the lambda baseline learning rate by mean test NDCG@5 over the
/// tuning replicas.
pub fn tune_lambda(spec: &ExperimentSpec, source: &DataSource) -> anyhow::Result<f64> {
    let master = tuning_master(spec.seed);
    let data: Vec<(Dataset, Dataset)> =
        (0..spec.tuning_replicas).map(|r| source.split(spec, data_seed(master, r))).collect::<anyhow::Result<_>>()?;
    let scores: Vec<(f64, f64)> = LAMBDA_LR_GRID
        .par_iter()
        .map(|&lr| {
            let cfg = LambdaConfig { learning_rate: lr, ..LambdaConfig::default() };
            let mut s = Vec::new();
            for (r, (train, test)) in data.iter().enumerate() {
                let model = train_lambda_linear(train, &cfg, run_seed(master, usize::MAX, r));
                s.push(mean_ndcg(&model, test, EVAL_K)?);
            }
            Ok((lr, mean_stderr(&s).0))
        })
        .collect::<anyhow::Result<_>>()?;
    let mut best = scores[0];
    for &s in &scores[1..] {
        if s.1 > best.1 {
            best = s;
        }
    }
    Ok(best.0)
}

/// Runs the whole plan with `threads` workers (`None`: one per core).
pub fn run(spec: &ExperimentSpec, threads: Option<usize>) -> anyhow::Result<Summary> {
    spec.validate()?;
    let out = &spec.out_dir;
    fs::create_dir_all(out.join("runs")).with_context(|| format!("creating {}", out.display()))?;
    let marker = out.join(PARTIAL_MARKER);
    if marker.exists() {
        fs::remove_file(&marker)?;
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.unwrap_or(0)).build()?;
    let result = pool.install(|| execute(spec));
    if let Err(e) = &result {
        let _ = fs::write(&marker, format!("{e:#}\n"));
    }
    result
}

fn execute(spec: &ExperimentSpec) -> anyhow::Result<Summary> {
    let out = &spec.out_dir;
    let source = DataSource::open(spec)?;
    let mut plan = spec.plan()?;
    let tuned = if spec.tune { tune_rates(spec, &source)? } else { Vec::new() };
    for run in &mut plan {
        if let Some(t) = tuned.iter().find(|t| t.point == run.point.index && t.variant == run.variant) {
            run.config.local_lr = t.local_lr;
            run.config.global_lr = t.global_lr;
        }
    }
    let lambda_lr = match (spec.lambda_linear, spec.tune) {
        (false, _) => None,
        (true, true) => Some(tune_lambda(spec, &source)?),
        (true, false) => Some(LambdaConfig::default().learning_rate),
    };

    let manifest = Manifest {
        spec,
        points: spec.points()?,
        tuned: &tuned,
        lambda_learning_rate: lambda_lr,
        runs: plan
            .iter()
            .map(|r| ManifestRun {
                label: r.label(),
                file: format!("runs/{}.csv", r.label()),
                point: r.point.index,
                variant: r.variant,
                repeat: r.repeat,
                seed: r.seed,
                data_seed: r.data_seed,
                local_lr: r.config.local_lr,
                global_lr: r.config.global_lr,
            })
            .collect(),
    };
    write_atomic(&out.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;

    let data: Vec<(Dataset, Dataset)> =
        (0..spec.repeats).map(|r| source.split(spec, data_seed(spec.seed, r))).collect::<anyhow::Result<_>>()?;

    let finals: Vec<f64> =
        plan.par_iter().map(|run| execute_run(run, &data[run.repeat], out)).collect::<anyhow::Result<_>>()?;

    let mut rows = Vec::new();
    let points = spec.points()?;
    for p in &points {
        for &variant in &spec.variants {
            let values: Vec<f64> = plan
                .iter()
                .zip(&finals)
                .filter(|(r, _)| r.point.index == p.index && r.variant == variant)
                .map(|(_, &v)| v)
                .collect();
            let (mean, stderr) = mean_stderr(&values);
            rows.push(SummaryRow {
                point: Some(p.index),
                variant: variant.name().into(),
                gamma: Some(p.gamma),
                num_users: Some(p.num_users),
                users_per_round: Some(p.users_per_round),
                clicks_per_round: Some(p.clicks_per_round),
                runs: values.len(),
                mean_final_ndcg5: mean,
                stderr,
            });
        }
    }

    if let Some(lr) = lambda_lr {
        let cfg = LambdaConfig { learning_rate: lr, ..LambdaConfig::default() };
        let scores: Vec<f64> = data
            .par_iter()
            .enumerate()
            .map(|(r, (train, test))| {
                let model = train_lambda_linear(train, &cfg, run_seed(spec.seed, usize::MAX, r));
                Ok(mean_ndcg(&model, test, EVAL_K)?)
            })
            .collect::<anyhow::Result<_>>()?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["repeat", "learning_rate", "ndcg5"])?;
        for (r, s) in scores.iter().enumerate() {
            w.write_record([r.to_string(), lr.to_string(), s.to_string()])?;
        }
        write_atomic(&out.join("lambda.csv"), &w.into_inner()?)?;
        let (mean, stderr) = mean_stderr(&scores);
        rows.push(SummaryRow {
            point: None,
            variant: "lambda-linear".into(),
            gamma: None,
            num_users: None,
            users_per_round: None,
            clicks_per_round: None,
            runs: scores.len(),
            mean_final_ndcg5: mean,
            stderr,
        });
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    write_atomic(&out.join("summary.csv"), &w.into_inner()?)?;
    Ok(Summary { rows })
}

fn execute_run(run: &RunPlan, data: &(Dataset, Dataset), out: &Path) -> anyhow::Result<f64> {
    let rows = run_experiment(&run.config, &data.0, &data.1).with_context(|| format!("run {}", run.label()))?;
    write_atomic(&out.join("runs").join(format!("{}.csv", run.label())), &metrics_csv(&rows)?)?;
    Ok(final_ndcg(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_stderr_examples() {
        assert_eq!(mean_stderr(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn csv_header_and_rows() {
        let rows =
            vec![RoundMetrics { round: 1, ndcg: Some(0.5), mean_client_loss: 2.0, total_clicks: 7, capped_clients: 0 }];
        let text = String::from_utf8(metrics_csv(&rows).unwrap()).unwrap();
        assert_eq!(text, "round,ndcg5,mean_client_loss,total_clicks\n1,0.5,2.0,7\n");
    }
}
