use std::path::Path;
use std::process::{Command, Output};

use csrn_core::connect::parse_pattern;
use csrn_core::harness::persist::read_text_files;
use csrn_core::harness::{ExperimentConfig, MetricsFile, PlotSeries};
use csrn_core::maze::parse_maze;

fn csrn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csrn"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("cfg.json");
    std::fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL_MAZE: &str = r#"{
  "maze": {"m": 3, "n_train": 2, "n_test": 1},
  "network": {"n_recurrent": 2, "internal_steps": 4},
  "cycles": 2
}"#;

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gen_mazes_writes_parseable_grids() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let o = csrn(&["gen-mazes", "--seed", "4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let train = read_text_files(&out.join("train"), "maze").unwrap();
    let test = read_text_files(&out.join("test"), "maze").unwrap();
    assert_eq!((train.len(), test.len()), (30, 10));
    for text in train.iter().chain(&test) {
        assert_eq!(parse_maze(text).unwrap().m, 5);
    }
    let cfg =
        ExperimentConfig::from_json(&std::fs::read_to_string(out.join("config.json")).unwrap())
            .unwrap();
    assert_eq!(cfg.seeds, csrn_core::harness::Seeds::from_base(4));
}

#[test]
fn gen_patterns_writes_labelled_patterns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let o = csrn(&["gen-patterns", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let train: Vec<_> = read_text_files(&out.join("train"), "pattern")
        .unwrap()
        .iter()
        .map(|t| parse_pattern(t).unwrap())
        .collect();
    assert_eq!(train.len(), 60);
    assert_eq!(train.iter().filter(|p| p.label).count(), 30);
}

#[test]
fn train_eval_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_MAZE);
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();

    let o = csrn(&["train", "--config", &cfg, "--out", run_s]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("stopped after"));
    let metrics = MetricsFile::load(&run.join("metrics.json")).unwrap();
    assert_eq!(metrics.records.len(), 3);

    let o = csrn(&["eval", "--config", &cfg, "--out", run_s]);
    assert!(o.status.success(), "{o:?}");
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let last = metrics.records.last().unwrap();
    assert_eq!(
        report["train"]["mean_sse"].as_f64().unwrap(),
        last.train_sse
    );
    assert_eq!(report["test"]["score"].as_f64(), last.test_score);

    let plots = dir.path().join("plots");
    let o = csrn(&[
        "plot-data",
        "--metrics",
        run.join("metrics.json").to_str().unwrap(),
        "--out",
        plots.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    for name in ["error", "score"] {
        let text = std::fs::read_to_string(plots.join(format!("{name}.tsv"))).unwrap();
        assert_eq!(PlotSeries::parse(name, &text).unwrap().rows.len(), 3);
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_MAZE);
    let run = dir.path().join("run");
    let o = csrn(&[
        "train",
        "--config",
        &cfg,
        "--trainer",
        "alr",
        "--cycles",
        "1",
        "--seed",
        "9",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    let metrics = MetricsFile::load(&run.join("metrics.json")).unwrap();
    assert_eq!(metrics.records.len(), 2);
    assert!(metrics.records[1].learning_rate.is_some());
    assert_eq!(metrics.config.cycles, 1);
    assert_eq!(metrics.seeds, csrn_core::harness::Seeds::from_base(9));
}

#[test]
fn eval_rejects_weights_for_another_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_MAZE);
    let run = dir.path().join("run");
    assert!(
        csrn(&["train", "--config", &cfg, "--out", run.to_str().unwrap()])
            .status
            .success()
    );
    let weights = run.join("weights.json");
    let o = csrn(&["eval", "--weights", weights.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad_key = write_config(dir.path(), r#"{"cycels": 2}"#);
    assert_eq!(
        csrn(&["train", "--config", &bad_key, "--out", "x"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        csrn(&["train", "--config", "/no/such/file.json", "--out", "x"])
            .status
            .code(),
        Some(1)
    );
    // --out is required for training
    assert_eq!(csrn(&["train", "--cycles", "0"]).status.code(), Some(1));
    let o = csrn(&["plot-data", "--metrics", "/no/such/metrics.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn numeric_divergence_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    for extra in [
        r#""ekf": {"k0": 1e300}"#,
        r#""network": {"n_recurrent": 2, "init_range": 1e300}"#,
    ] {
        let cfg = write_config(
            dir.path(),
            &format!(r#"{{"maze": {{"m": 3, "n_train": 1, "n_test": 0}}, "cycles": 5, {extra}}}"#),
        );
        let o = csrn(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{extra}: {o:?}");
    }
}

#[test]
fn unsampleable_init_range_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"network": {"init_range": 1e308}}"#);
    assert_eq!(
        csrn(&["train", "--config", &cfg, "--out", "x"])
            .status
            .code(),
        Some(1)
    );
}
