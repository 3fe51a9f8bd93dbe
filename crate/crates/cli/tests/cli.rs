use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use suffixbench_core::evaluation::{dls, parse_report_csv};

const BIN: &str = env!("CARGO_BIN_EXE_suffixbench");
const TINY: &[&str] = &["--epochs", "2", "--d-model", "8", "--layers", "1", "--heads", "2", "--batch-size", "32"];

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("SUFFIXBENCH_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthesizes and ingests a log, returning the ingested directory.
fn ingested(root: &Path, name: &str, preset: &str, seed: &str, traces: &str) -> PathBuf {
    let csv = root.join(format!("{name}.csv"));
    let dir = root.join(name);
    ok(&["synth", "--preset", preset, "--seed", seed, "--traces", traces, "--out", s(&csv)]);
    ok(&["ingest", "--input", s(&csv), "--format", "csv", "--out", s(&dir)]);
    dir
}

fn train(log: &Path, out: &Path, arch: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--log", s(log), "--out", s(out), "--arch", arch, "--seed", "7"];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn ingest_writes_histograms_that_sum_to_the_log() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = ingested(tmp.path(), "mem", "memorization", "1", "120");
    for f in ["log.bin", "vocab.txt", "histograms.csv", "ingest.cfg"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let text = std::fs::read_to_string(dir.join("histograms.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("kind,key,count"));
    let (mut traces, mut weighted_len, mut events, mut eos) = (0, 0, 0, 0);
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let count: usize = cols[2].parse().unwrap();
        match cols[0] {
            "trace_length" => {
                traces += count;
                weighted_len += count * cols[1].parse::<usize>().unwrap();
            }
            "activity" => {
                events += count;
                if cols[1] == "[EOS]" {
                    eos = count;
                }
            }
            _ => {}
        }
    }
    assert_eq!(traces, 120);
    assert_eq!(eos, 120);
    assert_eq!(events, weighted_len);
    let vocab = std::fs::read_to_string(dir.join("vocab.txt")).unwrap();
    assert!(vocab.lines().any(|l| l == "[EOS]"));
    assert_eq!(vocab.lines().filter(|l| !l.starts_with('[')).count(), 8);
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["ingest", "--input", "x.csv", "--format", "parquet", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["train", "--log", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_log_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = train(&tmp.path().join("absent"), &tmp.path().join("runs"), "gpt", &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_csv_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("bad.csv");
    std::fs::write(&csv, "case_id,activity\nc1,A\n").unwrap();
    let out = run(&["ingest", "--input", s(&csv), "--format", "csv", "--out", s(&tmp.path().join("o"))]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn train_all_writes_one_checkpoint_per_architecture() {
    let tmp = tempfile::tempdir().unwrap();
    let log = ingested(tmp.path(), "mem", "memorization", "2", "60");
    let runs = tmp.path().join("runs");
    let out = train(&log, &runs, "all", &["--jobs", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for arch in ["lstm", "gpt", "bert", "wavenet", "ae", "transformer", "ae-gan"] {
        let dir = runs.join(format!("mem-{arch}-7"));
        for f in ["model.ckpt", "run.cfg", "train.txt", "eval.txt", "train_log.jsonl", "train_report.json"] {
            assert!(dir.join(f).is_file(), "{arch}: {f}");
        }
        let cfg = std::fs::read_to_string(dir.join("run.cfg")).unwrap();
        assert!(cfg.contains(&format!("arch = {arch}")));
        assert_eq!(cfg.contains("lambda"), arch == "ae-gan", "{arch}");
        let epochs = std::fs::read_to_string(dir.join("train_log.jsonl")).unwrap();
        assert_eq!(epochs.lines().count(), 2);
    }
}

#[test]
fn split_manifests_partition_the_log() {
    let tmp = tempfile::tempdir().unwrap();
    let log = ingested(tmp.path(), "mem", "memorization", "3", "50");
    let runs = tmp.path().join("runs");
    assert!(train(&log, &runs, "wavenet", &[]).status.success());
    let dir = runs.join("mem-wavenet-7");
    let read = |f: &str| -> Vec<String> {
        std::fs::read_to_string(dir.join(f)).unwrap().lines().map(str::to_string).collect()
    };
    let (tr, ev) = (read("train.txt"), read("eval.txt"));
    assert_eq!(tr.len(), 40);
    assert_eq!(ev.len(), 10);
    assert!(tr.iter().all(|c| !ev.contains(c)));
}

#[test]
fn existing_run_directory_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let log = ingested(tmp.path(), "mem", "memorization", "4", "40");
    let runs = tmp.path().join("runs");
    assert!(train(&log, &runs, "gpt", &[]).status.success());
    let again = train(&log, &runs, "gpt", &[]);
    assert_eq!(again.status.code(), Some(2));
    assert!(runs.join("mem-gpt-7/model.ckpt").is_file());
    assert!(train(&log, &runs, "gpt", &["--force"]).status.success());
}

#[test]
fn flags_override_config_file_values() {
    let tmp = tempfile::tempdir().unwrap();
    let log = ingested(tmp.path(), "mem", "memorization", "5", "40");
    let cfg = tmp.path().join("train.cfg");
    std::fs::write(&cfg, "lr = 0.003\nbatch_size = 16\nseed = 99\n").unwrap();
    let runs = tmp.path().join("runs");
    let out = run(&[
        "train", "--log", s(&log), "--out", s(&runs), "--arch", "gpt", "--config", s(&cfg), "--epochs", "1",
        "--d-model", "8", "--layers", "1", "--heads", "2", "--lr", "0.01",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let written = std::fs::read_to_string(runs.join("mem-gpt-99/run.cfg")).unwrap();
    assert!(written.contains("lr = 0.01\n"), "{written}");
    assert!(written.contains("batch_size = 16\n"));
    assert!(written.contains("seed = 99\n"));

    std::fs::write(&cfg, "learning_rate = 0.1\n").unwrap();
    let out = run(&["train", "--log", s(&log), "--out", s(&runs), "--config", s(&cfg), "--force"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let log = ingested(tmp.path(), "mem", "memorization", "6", "40");
    let runs = tmp.path().join("runs");
    let mut args = vec!["train", "--log", s(&log), "--out", s(&runs), "--arch", "wavenet"];
    args.extend_from_slice(TINY);
    let out = Command::new(BIN).args(&args).env("SUFFIXBENCH_SEED", "31").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(runs.join("mem-wavenet-31").is_dir());

    let out = Command::new(BIN).args(&args).arg("--seed").arg("32").env("SUFFIXBENCH_SEED", "31").output().unwrap();
    assert!(out.status.success());
    assert!(runs.join("mem-wavenet-32").is_dir());

    let out = ok(&args);
    assert!(out.status.success());
    assert!(runs.join("mem-wavenet-0").is_dir());
}

#[test]
fn evaluate_rejects_a_foreign_log_with_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let mem = ingested(tmp.path(), "mem", "memorization", "8", "40");
    let skew = ingested(tmp.path(), "skew", "skewed", "8", "40");
    let mem2 = ingested(tmp.path(), "mem2", "memorization", "9", "40");
    let runs = tmp.path().join("runs");
    assert!(train(&mem, &runs, "gpt", &[]).status.success());
    let ckpt = runs.join("mem-gpt-7");
    let out = run(&["evaluate", "--log", s(&skew), "--checkpoint", s(&ckpt)]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("vocabulary"), "{err}");
    let out = run(&["evaluate", "--log", s(&mem2), "--checkpoint", s(&ckpt)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn evaluate_report_matches_its_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let log = ingested(tmp.path(), "mem", "memorization", "10", "60");
    let runs = tmp.path().join("runs");
    assert!(train(&log, &runs, "lstm", &[]).status.success());
    let dir = runs.join("mem-lstm-7");
    ok(&["evaluate", "--log", s(&log), "--checkpoint", s(&dir.join("model.ckpt")), "--jobs", "2"]);
    for f in ["predictions.jsonl", "report.csv", "dls.svg", "mae.svg", "eval.cfg"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let report = parse_report_csv(&std::fs::read_to_string(dir.join("report.csv")).unwrap()).unwrap();
    let preds = std::fs::read_to_string(dir.join("predictions.jsonl")).unwrap();
    let (mut sum_dls, mut sum_mae, mut n) = (0.0, 0.0, 0usize);
    for line in preds.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let seq = |key: &str| -> Vec<String> {
            v[key].as_array().unwrap().iter().map(|x| x.as_str().unwrap().to_string()).collect()
        };
        let d = dls(&seq("predicted"), &seq("truth"));
        assert!((d - v["dls"].as_f64().unwrap()).abs() < 1e-12);
        sum_dls += d;
        sum_mae += v["abs_error_days"].as_f64().unwrap();
        n += 1;
    }
    assert_eq!(n, report.n_samples);
    assert!((sum_dls / n as f64 - report.overall_dls).abs() < 1e-9);
    assert!((sum_mae / n as f64 - report.overall_mae_days).abs() < 1e-9);
    let cfg = std::fs::read_to_string(dir.join("eval.cfg")).unwrap();
    assert!(cfg.contains("dls_includes_eos = true"));
}

#[test]
fn evaluate_without_manifest_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let log = ingested(tmp.path(), "mem", "memorization", "11", "40");
    let runs = tmp.path().join("runs");
    assert!(train(&log, &runs, "gpt", &[]).status.success());
    let dir = runs.join("mem-gpt-7");
    std::fs::remove_file(dir.join("eval.txt")).unwrap();
    let out = run(&["evaluate", "--log", s(&log), "--checkpoint", s(&dir)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn report_tags_best_and_worst_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let log = ingested(tmp.path(), "mem", "memorization", "12", "40");
    let runs = tmp.path().join("runs");
    assert!(train(&log, &runs, "gpt,wavenet", &[]).status.success());
    let out = run(&["report", "--runs", s(&runs)]);
    assert_eq!(out.status.code(), Some(1), "no evaluated runs yet");

    ok(&["evaluate", "--log", s(&log), "--checkpoint", s(&runs.join("mem-gpt-7"))]);
    ok(&["report", "--runs", s(&runs)]);
    let single = std::fs::read_to_string(runs.join("combined.csv")).unwrap();
    let overall: Vec<&str> = single.lines().filter(|l| l.contains(",overall,")).collect();
    assert_eq!(overall.len(), 1);
    assert!(overall[0].ends_with(",best;worst,best;worst"), "{}", overall[0]);

    ok(&["evaluate", "--log", s(&log), "--checkpoint", s(&runs.join("mem-wavenet-7"))]);
    let combined = tmp.path().join("all.csv");
    ok(&["report", "--runs", s(&runs), "--out", s(&combined)]);
    let text = std::fs::read_to_string(&combined).unwrap();
    assert_eq!(text.lines().next(), Some(suffixbench_cli::COMBINED_HEADER));
    let mut expected_rows = 0;
    for arch in ["gpt", "wavenet"] {
        let r = std::fs::read_to_string(runs.join(format!("mem-{arch}-7/report.csv"))).unwrap();
        expected_rows += r.lines().count() - 1;
    }
    assert_eq!(text.lines().count() - 1, expected_rows);
    let rows: Vec<Vec<&str>> = text.lines().filter(|l| l.contains(",overall,")).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    let dls: Vec<f64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    let best = if dls[0] >= dls[1] { 0 } else { 1 };
    if dls[0] != dls[1] {
        assert_eq!(rows[best][6], "best");
        assert_eq!(rows[1 - best][6], "worst");
    }
    let mae: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    let best = if mae[0] <= mae[1] { 0 } else { 1 };
    if mae[0] != mae[1] {
        assert_eq!(rows[best][7], "best");
        assert_eq!(rows[1 - best][7], "worst");
    }
}

#[test]
fn synth_is_deterministic_and_validates_its_input() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    ok(&["synth", "--preset", "skewed", "--seed", "3", "--traces", "30", "--out", s(&a)]);
    ok(&["synth", "--preset", "skewed", "--seed", "3", "--traces", "30", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let out = run(&["synth", "--preset", "skewed", "--loop-p", "1.5", "--out", s(&a)]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["synth", "--traces", "0", "--out", s(&a)]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["synth", "--preset", "skewed", "--spec", "x.cfg", "--out", s(&a)]);
    assert_eq!(out.status.code(), Some(2));
}
