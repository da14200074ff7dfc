use std::fs;
use std::path::Path;

use fultr::config::{ExperimentSpec, Variant};
use fultr::runner::{mean_stderr, run, PARTIAL_MARKER};

fn small_spec(out: &Path) -> ExperimentSpec {
    let mut spec = ExperimentSpec::from_toml(
        r#"
        repeats = 2
        variants = ["fedips", "fedavg"]
        [dataset]
        queries = 40
        docs_per_query = 8
        features = 6
        [federation]
        num_users = 20
        users_per_round = 5
        rounds = 3
        eval_every = 1
        [sweep]
        gamma = [0.5, 2.0]
        "#,
    )
    .unwrap();
    spec.out_dir = out.to_path_buf();
    spec
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn writes_one_row_per_evaluated_round() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(dir.path());
    run(&spec, Some(1)).unwrap();
    for point in 0..2 {
        for variant in ["fedips", "fedavg"] {
            let rows: usize =
                (0..2).map(|r| read_csv(&dir.path().join(format!("runs/p{point:02}-{variant}-r{r}.csv"))).len()).sum();
            assert_eq!(rows, 6);
        }
    }
    let header = fs::read_to_string(dir.path().join("runs/p00-fedips-r0.csv")).unwrap();
    assert!(header.starts_with("round,ndcg5,mean_client_loss,total_clicks\n"));
    assert!(!dir.path().join(PARTIAL_MARKER).exists());
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 8);
    assert_eq!(manifest["spec"]["federation"]["rounds"], 3);
}

#[test]
fn rerun_is_byte_identical_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(&small_spec(a.path()), Some(1)).unwrap();
    run(&small_spec(b.path()), Some(3)).unwrap();
    for name in ["summary.csv", "runs/p00-fedips-r0.csv", "runs/p01-fedavg-r1.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let strip = |p: &Path| fs::read_to_string(p.join("manifest.json")).unwrap().replace(&p.display().to_string(), "");
    assert_eq!(strip(a.path()), strip(b.path()));
}

#[test]
fn summary_matches_raw_rows() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(dir.path());
    let summary = run(&spec, Some(1)).unwrap();
    assert_eq!(summary.rows.len(), 4);
    for row in &summary.rows {
        let finals: Vec<f64> = (0..2)
            .map(|r| {
                let rows =
                    read_csv(&dir.path().join(format!("runs/p{:02}-{}-r{r}.csv", row.point.unwrap(), row.variant)));
                rows.last().unwrap()[1].parse().unwrap()
            })
            .collect();
        let (mean, stderr) = mean_stderr(&finals);
        assert_eq!(row.mean_final_ndcg5, mean);
        assert_eq!(row.stderr, stderr);
    }
    let written = read_csv(&dir.path().join("summary.csv"));
    assert_eq!(written.len(), 4);
    assert_eq!(written[0][7].parse::<f64>().unwrap(), summary.rows[0].mean_final_ndcg5);
}

#[test]
fn failed_run_leaves_partial_marker() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.txt");
    let test = dir.path().join("test.txt");
    let mut lines = String::new();
    for q in 1..=6 {
        for d in 0..4 {
            lines.push_str(&format!("{} qid:{q} 1:{} 2:{}\n", d % 3, d as f64 * 0.3, q as f64));
        }
    }
    fs::write(&train, lines).unwrap();
    fs::write(&test, "1 qid:1 1:0.5\n1 qid:1 1:0.7\n").unwrap();
    let mut spec = small_spec(&dir.path().join("out"));
    spec.dataset.path = Some(train);
    spec.dataset.test_path = Some(test);
    spec.sweep.gamma = None;
    spec.variants = vec![Variant::Fedips];
    assert!(run(&spec, Some(1)).is_err());
    assert!(dir.path().join("out").join(PARTIAL_MARKER).exists());
}

#[test]
fn lambda_baseline_and_tuning_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = small_spec(dir.path());
    spec.sweep.gamma = None;
    spec.repeats = 1;
    spec.variants = vec![Variant::Fedavg];
    spec.tune = true;
    spec.tuning_replicas = 1;
    spec.lambda_linear = true;
    let summary = run(&spec, Some(1)).unwrap();
    assert_eq!(summary.rows.last().unwrap().variant, "lambda-linear");
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    let tuned = &manifest["tuned"][0];
    assert_eq!(manifest["runs"][0]["local_lr"], tuned["local_lr"]);
    assert!(manifest["lambda_learning_rate"].is_number());
    assert_eq!(read_csv(&dir.path().join("lambda.csv")).len(), 1);
}
