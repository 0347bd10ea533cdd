//! End-to-end tests of the `synthgen` binary: exit codes, run directory
//! layout, and determinism of offline runs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_synthgen"))
}

fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf()
}

fn seed_dataset_json() -> String {
    let mut records = Vec::new();
    for i in 0..8 {
        records.push(serde_json::json!({
            "text": format!("Sample question number {i} about a well-known topic?"),
            "choices": [
                {"key": "A", "body": "the accurate statement"},
                {"key": "B", "body": "a popular misconception"},
                {"key": "C", "body": "an irrelevant aside"},
                {"key": "D", "body": "an absurd claim"}
            ],
            "label": "A"
        }));
    }
    serde_json::to_string_pretty(&records).unwrap()
}

fn write_config(dir: &Path, seed_path: &Path, extra: serde_json::Value) -> PathBuf {
    let mut config = serde_json::json!({
        "model": "mock-model",
        "generation_number": 15,
        "batch_size": 5,
        "seed": 7,
        "dataset_description": "multiple-choice questions with exactly one correct answer",
        "seed_dataset": seed_path,
        "stages": {
            "attribute_guided": true,
            "quality_loop": true,
            "group_checking": true
        }
    });
    if let (Some(base), Some(add)) = (config.as_object_mut(), extra.as_object()) {
        for (k, v) in add {
            base.insert(k.clone(), v.clone());
        }
    }
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

#[test]
fn generate_writes_a_complete_run_dir() {
    let dir = tempfile::tempdir().unwrap();
    let seed_path = dir.path().join("seed.json");
    std::fs::write(&seed_path, seed_dataset_json()).unwrap();
    let config = write_config(dir.path(), &seed_path, serde_json::json!({}));
    let out_dir = dir.path().join("run");

    let output = run(
        &[
            "generate",
            "--config",
            config.to_str().unwrap(),
            "--offline",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    for file in ["config.json", "dataset.json", "manifest.json"] {
        assert!(out_dir.join(file).exists(), "missing {file}");
    }
    assert!(out_dir.join("reports").join("summary.json").exists());
    assert!(out_dir.join("logs").join("stages.log").exists());

    let dataset: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("dataset.json")).unwrap())
            .unwrap();
    let n = dataset.as_array().unwrap().len();
    assert!(
        (10..=15).contains(&n),
        "expected ~15 items after dedupe, got {n}"
    );
}

#[test]
fn generate_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let seed_path = dir.path().join("seed.json");
    std::fs::write(&seed_path, seed_dataset_json()).unwrap();
    let config = write_config(dir.path(), &seed_path, serde_json::json!({}));

    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let output = run(
            &[
                "generate",
                "--config",
                config.to_str().unwrap(),
                "--offline",
                "--out",
                out_dir.to_str().unwrap(),
            ],
            dir.path(),
        );
        assert!(output.status.success());
        outputs.push((
            std::fs::read(out_dir.join("dataset.json")).unwrap(),
            std::fs::read(out_dir.join("manifest.json")).unwrap(),
        ));
    }
    assert_eq!(outputs[0].0, outputs[1].0, "dataset.json differs");
    assert_eq!(outputs[0].1, outputs[1].1, "manifest.json differs");
}

#[test]
fn missing_api_key_in_live_mode_exits_one_before_any_call() {
    let dir = tempfile::tempdir().unwrap();
    let seed_path = dir.path().join("seed.json");
    std::fs::write(&seed_path, seed_dataset_json()).unwrap();
    let config = write_config(
        dir.path(),
        &seed_path,
        serde_json::json!({
            "provider": {
                "kind": "openai_compatible",
                "base_url": "http://127.0.0.1:9",
                "api_key_env": "SYNTHGEN_TEST_MISSING_KEY"
            }
        }),
    );
    let output = bin()
        .args(["generate", "--config", config.to_str().unwrap()])
        .env_remove("SYNTHGEN_TEST_MISSING_KEY")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("SYNTHGEN_TEST_MISSING_KEY"),
        "stderr: {stderr}"
    );
}

#[test]
fn unreachable_live_provider_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let seed_path = dir.path().join("seed.json");
    std::fs::write(&seed_path, seed_dataset_json()).unwrap();
    let config = write_config(
        dir.path(),
        &seed_path,
        serde_json::json!({
            "provider": {
                "kind": "openai_compatible",
                "base_url": "http://127.0.0.1:9/v1",
                "api_key_env": "SYNTHGEN_TEST_DUMMY_KEY"
            },
            "stages": {"attribute_guided": false, "quality_loop": false, "group_checking": false},
            "few_shot_strategy": "random"
        }),
    );
    let output = bin()
        .args(["generate", "--config", config.to_str().unwrap()])
        .env("SYNTHGEN_TEST_DUMMY_KEY", "dummy")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn unproductive_provider_exits_two_with_artifacts_kept() {
    let dir = tempfile::tempdir().unwrap();
    let seed_path = dir.path().join("seed.json");
    std::fs::write(&seed_path, seed_dataset_json()).unwrap();
    // A templates override whose return-format block drops the phrase the mock
    // generation handler keys on, so every iteration parses zero items.
    let templates = dir.path().join("templates");
    std::fs::create_dir_all(&templates).unwrap();
    std::fs::write(
        templates.join("return_format.txt"),
        "Entries wanted: {batch_size}. Shape: {data_format}\n",
    )
    .unwrap();
    let config = write_config(
        dir.path(),
        &seed_path,
        serde_json::json!({"templates_dir": templates}),
    );
    let out_dir = dir.path().join("partial");
    let output = run(
        &[
            "generate",
            "--config",
            config.to_str().unwrap(),
            "--offline",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(output.status.code(), Some(2));
    assert!(out_dir.join("manifest.json").exists());
    assert!(out_dir.join("dataset.json").exists());
}

#[test]
fn missing_config_for_generate_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(&["generate", "--offline"], dir.path());
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn metrics_reports_diversity_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let seed_path = dir.path().join("seed.json");
    std::fs::write(&seed_path, seed_dataset_json()).unwrap();
    let output = run(
        &[
            "metrics",
            "--dataset",
            seed_path.to_str().unwrap(),
            "--offline",
        ],
        dir.path(),
    );
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("remote_clique"), "stdout: {stdout}");
    assert!(dir.path().join("seed-diversity.json").exists());
}

#[test]
fn bench_compliance_prints_judge_and_local_rates() {
    let dir = tempfile::tempdir().unwrap();
    let seed_path = dir.path().join("seed.json");
    std::fs::write(&seed_path, seed_dataset_json()).unwrap();
    let output = run(
        &[
            "bench",
            "--dataset",
            seed_path.to_str().unwrap(),
            "--candidate",
            "mock-candidate",
            "--judge",
            "mock-judge",
            "--constraint",
            "Ensure each question contains four options",
            "--offline",
        ],
        dir.path(),
    );
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("judge compliance"), "stdout: {stdout}");
    assert!(
        stdout.contains("local compliance: 8/8 = 100.00%"),
        "stdout: {stdout}"
    );
}

#[test]
fn bench_accuracy_prints_ori_gen_diff_table() {
    let dir = tempfile::tempdir().unwrap();
    let gen_path = dir.path().join("gen.json");
    std::fs::write(&gen_path, seed_dataset_json()).unwrap();
    // Same questions but the correct key is B; the mock candidate always
    // answers A, so ori. scores 0 while gen. scores 1.
    let ori_path = dir.path().join("ori.json");
    std::fs::write(
        &ori_path,
        seed_dataset_json().replace("\"label\": \"A\"", "\"label\": \"B\""),
    )
    .unwrap();
    let out_dir = dir.path().join("bench-out");
    let output = run(
        &[
            "bench",
            "--dataset",
            gen_path.to_str().unwrap(),
            "--original",
            ori_path.to_str().unwrap(),
            "--candidate",
            "mock-candidate",
            "--judge",
            "mock-judge",
            "--offline",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("ori."), "stdout: {stdout}");
    assert!(stdout.contains("gen."), "stdout: {stdout}");
    assert!(stdout.contains("diff."), "stdout: {stdout}");
    assert!(stdout.contains("-1.000"), "stdout: {stdout}");
    assert!(out_dir.join("verdicts-gen.jsonl").exists());
    assert!(out_dir.join("verdicts-ori.jsonl").exists());
}

#[test]
fn feedback_refuses_non_interactive_stdin() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    std::fs::create_dir_all(&run_dir).unwrap();
    std::fs::write(run_dir.join("dataset.json"), seed_dataset_json()).unwrap();
    let output = bin()
        .args([
            "feedback",
            "--run-dir",
            run_dir.to_str().unwrap(),
            "--offline",
        ])
        .stdin(std::process::Stdio::piped())
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("not a terminal"), "stderr: {stderr}");
}

#[test]
fn report_summarizes_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let seed_path = dir.path().join("seed.json");
    std::fs::write(&seed_path, seed_dataset_json()).unwrap();
    let config = write_config(dir.path(), &seed_path, serde_json::json!({}));
    let out_dir = dir.path().join("run");
    let output = run(
        &[
            "generate",
            "--config",
            config.to_str().unwrap(),
            "--offline",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(output.status.success());

    let output = run(
        &["report", "--run-dir", out_dir.to_str().unwrap()],
        dir.path(),
    );
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("cost:"), "stdout: {stdout}");
    assert!(stdout.contains("quality epochs:"), "stdout: {stdout}");
    assert!(stdout.contains("dedupe: theta"), "stdout: {stdout}");
    assert!(
        stdout.contains("code verification: disabled"),
        "stdout: {stdout}"
    );
    assert!(out_dir.join("report.json").exists());
}

#[test]
fn demo_config_runs_end_to_end() {
    let root = repo_root();
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("demo-run");
    let output = bin()
        .args([
            "generate",
            "--config",
            "demo/config.json",
            "--offline",
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .current_dir(&root)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert!(manifest["cost"]["total"].as_f64().unwrap() > 0.0);
}
