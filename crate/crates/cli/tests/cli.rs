//! End-to-end checks of the command-line surface: artifact layout, flag
//! semantics, exit codes, and reproducibility guarantees.

use std::path::Path;
use std::process::{Command, Output};

fn fewshot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fewshot"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn make_dataset(dir: &Path) {
    let out = fewshot(&[
        "dataset",
        "--base-categories",
        "3",
        "--novel-categories",
        "2",
        "--k-shot",
        "3",
        "--samples-per-base",
        "8",
        "--test-per-category",
        "4",
        "--seed",
        "11",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
}

#[test]
fn knowledge_case2_writes_unit_diagonal_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    make_dataset(&data);
    let out_dir = tmp.path().join("zeta");
    let out = fewshot(&[
        "knowledge",
        "--case",
        "2",
        "--labels",
        data.join("labels.json").to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let csv = std::fs::read_to_string(out_dir.join("zeta.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 5);
    for (i, line) in lines.enumerate() {
        let row: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row[i], 1.0, "diagonal of row {i}");
        for v in &row {
            assert!((0.0..=1.0).contains(v));
        }
    }
    assert!(out_dir.join("manifest.json").exists());
}

#[test]
fn unknown_flags_are_rejected_with_parsable_error() {
    let out = fewshot(&["knowledge", "--does-not-exist", "x"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = stderr.trim().lines().collect();
    assert_eq!(lines.len(), 1, "one-line reason, got: {stderr}");
    let parsed: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert!(parsed["error"].is_string());
}

#[test]
fn help_lists_flags_with_published_defaults() {
    let out = fewshot(&["fine-tune", "--help"]);
    assert_ok(&out);
    let help = String::from_utf8_lossy(&out.stdout);
    for (flag, default) in [
        ("--tau", "0.2"),
        ("--epsilon", "0.05"),
        ("--erase-threshold", "0.8"),
        ("--k-e", "3"),
        ("--n-cluster-centers", "1"),
        ("--knowledge-case", "3"),
        ("--cluster-count", "5"),
        ("--k-shot", "5"),
    ] {
        assert!(help.contains(flag), "missing {flag}");
        let section = help.split(flag).nth(1).unwrap();
        let blurb: String = section.chars().take(120).collect();
        assert!(
            blurb.contains(default),
            "{flag} help does not state default {default}: {blurb}"
        );
    }
}

#[test]
fn bounds_eval_thm1_at_lambda_zero_prints_gamma() {
    let tmp = tempfile::tempdir().unwrap();
    let params = tmp.path().join("p.json");
    std::fs::write(&params, r#"{"lambda_c": 0.0, "gamma_gap": 0.625}"#).unwrap();
    let out = fewshot(&[
        "bounds",
        "eval",
        "--formula",
        "thm1",
        "--params",
        params.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let value: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stdout).trim()).unwrap();
    assert_eq!(value["value"].as_f64().unwrap(), 0.625);
}

#[test]
fn bounds_sweep_writes_csv_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let params = tmp.path().join("p.json");
    std::fs::write(&params, "{}").unwrap();
    let csv = tmp.path().join("sweep.csv");
    let out = fewshot(&[
        "bounds",
        "sweep",
        "--formula",
        "thm2",
        "--params",
        params.to_str().unwrap(),
        "--vary",
        "k_e",
        "--from",
        "2",
        "--to",
        "10",
        "--steps",
        "9",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 10);
    assert!(text.starts_with("k_e,sup_with,sup_without,holds"));
    for line in text.lines().skip(1) {
        assert!(line.ends_with("true"), "{line}");
    }
}

#[test]
fn export_round_trips_between_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    make_dataset(&data);
    let src = data.join("category_words.fsm");
    let csv = tmp.path().join("words.csv");
    let back = tmp.path().join("words.fsm");
    assert_ok(&fewshot(&[
        "export",
        "--input",
        src.to_str().unwrap(),
        "--output",
        csv.to_str().unwrap(),
    ]));
    assert_ok(&fewshot(&[
        "export",
        "--input",
        csv.to_str().unwrap(),
        "--output",
        back.to_str().unwrap(),
    ]));
    let a = std::fs::read(&src).unwrap();
    let b = std::fs::read(&back).unwrap();
    assert_eq!(a, b, "binary -> csv -> binary must be lossless");
}

fn quick_pipeline(tmp: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = tmp.join("data");
    make_dataset(&data);
    let base = tmp.join("base");
    assert_ok(&fewshot(&[
        "train-base",
        "--dataset",
        data.to_str().unwrap(),
        "--iterations",
        "60",
        "--batch-size",
        "6",
        "--seed",
        "5",
        "--out",
        base.to_str().unwrap(),
    ]));
    (data, base.join("params"))
}

#[test]
fn no_knowledge_matrix_equals_explicit_all_ones_file() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, params) = quick_pipeline(tmp.path());

    // Hand-written all-ones matrix file for the five categories.
    let ones = tmp.path().join("ones.csv");
    let names = "base0,base1,base2,novel0,novel1";
    let mut text = String::from(names);
    for _ in 0..5 {
        text.push_str("\n1,1,1,1,1");
    }
    std::fs::write(&ones, text + "\n").unwrap();

    let common = [
        "--dataset",
        data.to_str().unwrap(),
        "--params",
        params.to_str().unwrap(),
        "--iterations",
        "40",
        "--batch-size",
        "6",
        "--k-shot",
        "3",
        "--seed",
        "5",
    ];
    let out_a = tmp.path().join("ft_no_matrix");
    let mut args_a: Vec<&str> = vec!["fine-tune"];
    args_a.extend_from_slice(&common);
    args_a.extend_from_slice(&["--no-knowledge-matrix", "--out", out_a.to_str().unwrap()]);
    assert_ok(&fewshot(&args_a));

    let out_b = tmp.path().join("ft_ones_file");
    let mut args_b: Vec<&str> = vec!["fine-tune"];
    args_b.extend_from_slice(&common);
    args_b.extend_from_slice(&["--zeta", ones.to_str().unwrap(), "--out", out_b.to_str().unwrap()]);
    assert_ok(&fewshot(&args_b));

    let a = std::fs::read(out_a.join("metrics.jsonl")).unwrap();
    let b = std::fs::read(out_b.join("metrics.jsonl")).unwrap();
    assert_eq!(a, b, "metric streams must be byte-identical");
    let ea = std::fs::read(out_a.join("eval.json")).unwrap();
    let eb = std::fs::read(out_b.join("eval.json")).unwrap();
    assert_eq!(ea, eb);
}

#[test]
fn augment_preview_dumps_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, params) = quick_pipeline(tmp.path());
    let out_dir = tmp.path().join("preview");
    assert_ok(&fewshot(&[
        "augment-preview",
        "--dataset",
        data.to_str().unwrap(),
        "--params",
        params.to_str().unwrap(),
        "--index",
        "1",
        "--seed",
        "9",
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    for name in [
        "original.ppm",
        "augmented.ppm",
        "attribution_class.pgm",
        "attribution_counter.pgm",
        "counterfactual.pgm",
        "mask.pgm",
        "preview.json",
        "manifest.json",
    ] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("preview.json")).unwrap())
            .unwrap();
    assert_eq!(sidecar["threshold"].as_f64().unwrap(), 0.8);
    assert_eq!(sidecar["seed"].as_u64().unwrap(), 9);
    assert!(sidecar["counter_category"].is_u64());
    let mask = std::fs::read_to_string(out_dir.join("mask.pgm")).unwrap();
    assert!(mask.starts_with("P2"));
}

#[test]
fn config_file_is_honored_and_flags_override_it() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, params) = quick_pipeline(tmp.path());
    let config = tmp.path().join("train.json");
    std::fs::write(
        &config,
        r#"{"tau": 0.5, "iterations": 20, "batch_size": 4, "k_shot": 3, "epsilon": 0.0, "seed": 3}"#,
    )
    .unwrap();
    let out_dir = tmp.path().join("ft");
    assert_ok(&fewshot(&[
        "fine-tune",
        "--dataset",
        data.to_str().unwrap(),
        "--params",
        params.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--tau",
        "0.3",
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    // The flag wins over the file; untouched keys come from the file.
    assert_eq!(manifest["config"]["tau"].as_f64().unwrap(), 0.3);
    assert_eq!(manifest["config"]["iterations"].as_u64().unwrap(), 20);
    assert_eq!(manifest["config"]["batch_size"].as_u64().unwrap(), 4);
    assert_eq!(manifest["seed"].as_u64().unwrap(), 3);
    let metrics = std::fs::read_to_string(out_dir.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 20);
}

#[test]
fn missing_dataset_fails_with_reason() {
    let out = fewshot(&[
        "train-base",
        "--dataset",
        "/nonexistent/path",
        "--out",
        "/tmp/unused-fewshot-test",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let parsed: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert!(parsed["error"].is_string());
}
