//! End-to-end tests of the command-line interface.

use std::fs;
use std::path::Path;
use std::process::Command;

fn sqsnn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sqsnn"))
}

fn synth_config(dir: &Path, trainer: &str, iterations: u64, lambda: f64) -> std::path::PathBuf {
    let out = dir.join("run");
    let text = format!(
        r#"version = 1

[dataset]
kind = "synthetic"
train_per_class = 30
test_per_class = 15
channels = 8
noise_flip_prob = 0.05
t_len = 8

[model]
neuron = "sqs"
hidden = []
n_io = 1
n_mem = 1

[trainer]
kind = "{trainer}"
global_passes = 1
m_syn = 5
m_som = 1
m_p = 5
epsilon = 1e-3
lr_w = {lr}
lr_theta = {lr}
mode = "exact"
p_floor = 1e-12
lambda = {lambda}
batch_size = 16
seed = 0

[run]
iterations = {iterations}
eval_every = 10
seed = 7
out_dir = "{out}"
workers = 1
"#,
        trainer = trainer,
        lr = if trainer == "local" { 0.02 } else { 0.5 },
        lambda = lambda,
        iterations = iterations,
        out = out.display(),
    );
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn train_surrogate_reaches_target_accuracy_with_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth_config(dir.path(), "surrogate", 120, 0.0);
    let status = sqsnn().args(["train", "--config"]).arg(&config).status().unwrap();
    assert!(status.success());
    let run = dir.path().join("run");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert!(summary["best_test_accuracy"].as_f64().unwrap() >= 0.95);
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("# sqsnn-metrics-v1\n"));
    assert!(metrics.contains("iteration,loss,train_acc,test_acc,mean_spikes_per_step"));
    assert!(run.join("checkpoint.json").exists());
}

#[test]
fn same_seed_produces_byte_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth_config(dir.path(), "surrogate", 30, 0.0);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for (out, workers) in [(&out_a, "1"), (&out_b, "3")] {
        let status = sqsnn()
            .args(["train", "--config"])
            .arg(&config)
            .arg("--out-dir")
            .arg(out)
            .args(["--workers", workers])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = fs::read(out_a.join("metrics.csv")).unwrap();
    let b = fs::read(out_b.join("metrics.csv")).unwrap();
    assert_eq!(a, b, "metrics differ across runs/thread counts");
}

#[test]
fn missing_dataset_exits_two_without_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let text = format!(
        r#"version = 1
[dataset]
kind = "usps-csv"
train_path = "{missing}"
test_path = "{missing}"
[model]
neuron = "sqs"
[trainer]
kind = "local"
global_passes = 1
m_syn = 5
m_som = 1
m_p = 5
epsilon = 1e-3
lr_w = 0.02
lr_theta = 0.02
mode = "exact"
p_floor = 1e-12
lambda = 0.0
batch_size = 8
seed = 0
[run]
iterations = 5
out_dir = "{out}"
"#,
        missing = dir.path().join("nope.csv").display(),
        out = out.display(),
    );
    let config = dir.path().join("bad.toml");
    fs::write(&config, text).unwrap();
    let status = sqsnn().args(["train", "--config"]).arg(&config).status().unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out.join("metrics.csv").exists());
    assert!(!out.join("summary.json").exists());
}

#[test]
fn eval_reproduces_checkpoint_and_leaves_it_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth_config(dir.path(), "surrogate", 40, 0.0);
    assert!(sqsnn().args(["train", "--config"]).arg(&config).status().unwrap().success());
    let run = dir.path().join("run");
    let checkpoint = run.join("checkpoint.json");
    let before = fs::read(&checkpoint).unwrap();
    let output = sqsnn()
        .args(["eval", "--checkpoint"])
        .arg(&checkpoint)
        .args(["--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("accuracy"), "missing accuracy line: {text}");
    assert!(run.join("eval.json").exists());
    assert_eq!(before, fs::read(&checkpoint).unwrap(), "eval mutated the checkpoint");
}

#[test]
fn eval_rejects_mismatched_dataset_shape() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth_config(dir.path(), "surrogate", 10, 0.0);
    assert!(sqsnn().args(["train", "--config"]).arg(&config).status().unwrap().success());
    // Same checkpoint, but a config whose dataset has twice the channels.
    let text = fs::read_to_string(&config).unwrap().replace("channels = 8", "channels = 16");
    let wide = dir.path().join("wide.toml");
    fs::write(&wide, text).unwrap();
    let status = sqsnn()
        .args(["eval", "--checkpoint"])
        .arg(dir.path().join("run/checkpoint.json"))
        .args(["--config"])
        .arg(&wide)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn silent_network_scores_majority_class_with_zero_spikes() {
    // Zero out every weight and angle in a trained checkpoint: no neuron
    // can ever spike, so decoding always falls back to class 0.
    let dir = tempfile::tempdir().unwrap();
    let config = synth_config(dir.path(), "surrogate", 5, 0.0);
    assert!(sqsnn().args(["train", "--config"]).arg(&config).status().unwrap().success());
    let checkpoint = dir.path().join("run/checkpoint.json");
    let mut doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&checkpoint).unwrap()).unwrap();
    for neuron in doc["graph"]["neurons"].as_array_mut().unwrap() {
        let params = &mut neuron["params"];
        for field in ["weights", "theta"] {
            for v in params[field].as_array_mut().unwrap() {
                *v = serde_json::json!(0.0);
            }
        }
    }
    let silent = dir.path().join("silent.json");
    fs::write(&silent, serde_json::to_string(&doc).unwrap()).unwrap();
    let output = sqsnn()
        .args(["eval", "--checkpoint"])
        .arg(&silent)
        .args(["--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(output.status.success());
    let eval: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/eval.json")).unwrap())
            .unwrap();
    assert_eq!(eval["spikes_per_step"].as_f64().unwrap(), 0.0);
    // Balanced task, ties decode to class 0: exactly half correct.
    assert!((eval["accuracy"].as_f64().unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn oracle_check_passes_and_faults_name_the_invariant() {
    let ok = sqsnn().args(["oracle-check", "--quick"]).output().unwrap();
    assert!(ok.status.success());
    let report = String::from_utf8_lossy(&ok.stdout);
    assert!(report.contains("ok   jensen-bound"));
    // Identical report for a fixed seed.
    let again = sqsnn().args(["oracle-check", "--quick"]).output().unwrap();
    assert_eq!(ok.stdout, again.stdout);
    // An injected violation must fail with the invariant named.
    let bad = sqsnn()
        .args(["oracle-check", "--quick", "--inject-fault", "jensen"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL jensen-bound"));
}

#[test]
fn sweep_writes_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth_config(dir.path(), "surrogate", 15, 0.0);
    let status = sqsnn()
        .args(["sweep", "--config"])
        .arg(&config)
        .args(["--param", "lambda", "--values", "0,0.1,1"])
        .status()
        .unwrap();
    assert!(status.success());
    let csv = fs::read_to_string(dir.path().join("run/sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 2 + 3, "header lines plus one row per value: {csv}");
    assert!(rows[2].starts_with("lambda,0,"));
    assert!(rows[4].starts_with("lambda,1,"));
}

#[test]
fn sweep_with_empty_grid_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth_config(dir.path(), "surrogate", 5, 0.0);
    let status = sqsnn()
        .args(["sweep", "--config"])
        .arg(&config)
        .args(["--param", "lambda", "--values", ""])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}
