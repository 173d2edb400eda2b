//! Black-box tests of the `convmod` binary: exit codes, output files and the
//! decode contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use convmod::config::ModelConfig;
use convmod::corpus::Corpus;
use convmod::synthetic::{generate, SyntheticSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_convmod"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_corpus(dir: &Path, seed: u64, threads: usize) -> PathBuf {
    let mut spec = SyntheticSpec::three_state(seed);
    spec.num_threads = threads;
    let corpus = generate(&spec).unwrap();
    let path = dir.join("corpus.jsonl");
    corpus.save(&path).unwrap();
    path
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, json).unwrap();
    path
}

const SMALL_CONFIG: &str = r#"{
  "model": {
    "labelSet": ["Problem", "Solution", "Other"],
    "initialNumClusters": 3,
    "mergeInsertionStates": false,
    "maxNumIterations": 10
  },
  "folds": 3,
  "repetitions": 1,
  "masterSeed": 7
}"#;

#[test]
fn validate_prints_stats_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), 81, 10);
    let config = write_config(dir.path(), SMALL_CONFIG);
    let out = run(&[
        "validate",
        "--corpus",
        corpus.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("corpus is valid"));
    assert!(stdout.contains("threads:        10"));
}

#[test]
fn usage_errors_exit_one() {
    let out = run(&["no-such-subcommand"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["validate"]); // missing --corpus
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_corpus_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "this is not json\n").unwrap();
    let out = run(&["validate", "--corpus", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 1"), "stderr: {stderr}");
}

#[test]
fn train_semi_with_more_folds_than_threads_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), 82, 4);
    let config = write_config(dir.path(), SMALL_CONFIG);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "train-semi",
        "--corpus",
        corpus.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--folds",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_semi_writes_reports_manifest_and_model() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), 83, 15);
    let config = write_config(dir.path(), SMALL_CONFIG);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "train-semi",
        "--corpus",
        corpus.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("manifest.json").exists());
    assert!(out_dir.join("aggregate.json").exists());
    assert!(out_dir.join("model.json").exists());
    for f in 0..3 {
        assert!(out_dir.join(format!("reports/rep000_fold{f:03}.json")).exists());
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["master_seed"], 7);
    assert!(manifest["config"]["model"]["labelSet"].is_array());
}

#[test]
fn train_unsup_reports_and_saves_a_mapped_model() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), 84, 20);
    let config = write_config(dir.path(), SMALL_CONFIG);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "train-unsup",
        "--corpus",
        corpus.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("model.json").exists());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("aggregate over"), "stdout: {stdout}");
}

#[test]
fn rejected_unsupervised_run_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), 85, 15);
    let config = write_config(
        dir.path(),
        r#"{
          "model": {
            "labelSet": ["Problem", "Solution", "Other"],
            "initialNumClusters": 2,
            "mergeInsertionStates": false,
            "maxNumIterations": 3
          },
          "repetitions": 1,
          "masterSeed": 3
        }"#,
    );
    let out_dir = dir.path().join("out");
    let out = run(&[
        "train-unsup",
        "--corpus",
        corpus.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    // two clusters can never cover the three labels, so the run is
    // rejected rather than errored
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("rejected"), "stderr: {stderr}");
}

#[test]
fn baselines_majority_matches_the_majority_frequency() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = write_corpus(dir.path(), 86, 20);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "baselines",
        "--corpus",
        corpus_path.to_str().unwrap(),
        "--config",
        write_config(dir.path(), SMALL_CONFIG).to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    for name in ["random", "majority", "ps_heuristic1", "ps_heuristic2"] {
        assert!(out_dir.join(format!("baseline_{name}.json")).exists(), "missing {name}");
    }
    // recompute the majority frequency from the corpus and compare
    let mut cfg = ModelConfig::default();
    cfg.label_set = vec!["Problem".into(), "Solution".into(), "Other".into()];
    let corpus = Corpus::load(&corpus_path, &cfg).unwrap();
    let stats = corpus.stats();
    let majority = stats.label_counts.iter().map(|(_, c)| *c).max().unwrap();
    let expected = majority as f64 / stats.num_labeled_posts as f64;
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("baseline_majority.json")).unwrap(),
    )
    .unwrap();
    let micro = report["fine"]["micro_accuracy"].as_f64().unwrap();
    assert!((micro - expected).abs() < 1e-12, "micro {micro} vs expected {expected}");
}

#[test]
fn sweep_reports_the_best_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), 87, 15);
    let config = write_config(
        dir.path(),
        r#"{
          "model": {
            "labelSet": ["Problem", "Solution", "Other"],
            "initialNumClusters": 3,
            "mergeInsertionStates": false,
            "maxNumIterations": 5
          },
          "repetitions": 1,
          "masterSeed": 5,
          "grid": {"delta1": [0.01, 0.1]}
        }"#,
    );
    let out_dir = dir.path().join("out");
    let out = run(&[
        "sweep",
        "--corpus",
        corpus.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("sweep.json").exists());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("best micro-A"), "stdout: {stdout}");

    // sweep without a grid is a usage-level error on the config
    let empty = write_config(dir.path(), SMALL_CONFIG);
    let out = run(&[
        "sweep",
        "--corpus",
        corpus.to_str().unwrap(),
        "--config",
        empty.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn realistic_forum_fixture_flows_through_the_cli() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/tires.jsonl");
    let dir = tempfile::tempdir().unwrap();

    let out = run(&["validate", "--corpus", fixture.to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("threads:        4"));
    // one post is unlabeled (annotator disagreement)
    assert!(stdout.contains("posts:          17"));
    assert!(stdout.contains("labeled posts:  16"));

    let base_out = dir.path().join("base");
    let out = run(&[
        "baselines",
        "--corpus",
        fixture.to_str().unwrap(),
        "--out",
        base_out.to_str().unwrap(),
        "--seed",
        "5",
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    // tiny labeled corpus with POS and feature models, two folds
    let config = write_config(
        dir.path(),
        r#"{
          "model": {"usePosModel": true, "useFeatureModel": true,
                    "mergeInsertionStates": false, "maxNumIterations": 5},
          "folds": 2,
          "repetitions": 1,
          "masterSeed": 1
        }"#,
    );
    let semi_out = dir.path().join("semi");
    let out = run(&[
        "train-semi",
        "--corpus",
        fixture.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        semi_out.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    // the partially labeled thread only serves for evaluation
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("unlabeled posts"), "stderr: {stderr}");

    let dec_out = dir.path().join("dec");
    let out = run(&[
        "decode",
        "--corpus",
        fixture.to_str().unwrap(),
        "--model",
        semi_out.join("model.json").to_str().unwrap(),
        "--out",
        dec_out.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let decoded = std::fs::read_to_string(dec_out.join("decoded.jsonl")).unwrap();
    assert_eq!(decoded.lines().count(), 4);
    assert!(decoded.contains("\"label\""));
}

#[test]
fn decode_is_idempotent_and_does_not_touch_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = write_corpus(dir.path(), 88, 15);
    let config = write_config(dir.path(), SMALL_CONFIG);
    let train_out = dir.path().join("train");
    let out = run(&[
        "train-semi",
        "--corpus",
        corpus_path.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        train_out.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let model = train_out.join("model.json");
    let input_bytes = std::fs::read(&corpus_path).unwrap();

    let decode1 = dir.path().join("dec1");
    let out = run(&[
        "decode",
        "--corpus",
        corpus_path.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--out",
        decode1.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(&corpus_path).unwrap(), input_bytes, "input mutated");

    // decoding the decoded corpus reproduces it exactly
    let decode2 = dir.path().join("dec2");
    let out = run(&[
        "decode",
        "--corpus",
        decode1.join("decoded.jsonl").to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--out",
        decode2.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(decode1.join("decoded.jsonl")).unwrap(),
        std::fs::read(decode2.join("decoded.jsonl")).unwrap()
    );
}
