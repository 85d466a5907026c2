mod common;

use std::fs;
use std::process::Command;

use robustrec::error::Error;
use robustrec::evalkit::{read_rows, Condition};
use robustrec::harness::cache::Cache;
use robustrec::harness::config::ExperimentConfig;
use robustrec::harness::pipeline::{evaluate_configured, run_sweep};

use common::{write_config, SMALL_SWEEP};

fn small_config() -> ExperimentConfig {
    ExperimentConfig::from_json_str(SMALL_SWEEP).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_robustrec"))
}

fn file_snapshot(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn sweep_grid_counts_and_cache_reuse() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = Cache::new(tmp.path());
    let cfg = small_config();
    let rows = run_sweep(&cache, &cfg).unwrap();

    assert_eq!(rows.len(), 6);
    assert_eq!(fs::read_dir(tmp.path().join("runs")).unwrap().count(), 2);
    let clean: Vec<_> = rows.iter().filter(|r| r.condition == Condition::Clean.label()).collect();
    assert_eq!(clean.len(), 2);
    assert_eq!(rows.iter().filter(|r| r.eps_a > 0.0).count(), 4);
    assert_eq!(rows[0].lambda, 0.0);
    // one bed for both runs
    assert!(rows.iter().all(|r| r.n_pairs == rows[0].n_pairs));

    let before = file_snapshot(tmp.path());
    let again = run_sweep(&cache, &cfg).unwrap();
    assert_eq!(again, rows);
    assert_eq!(file_snapshot(tmp.path()), before);
}

#[test]
fn evaluate_needs_the_vanilla_run_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = Cache::new(tmp.path());
    let mut cfg = small_config();
    cfg.defense.lambda = 0.5;
    cfg.defense.eps_d = 0.25;
    assert!(matches!(evaluate_configured(&cache, &cfg), Err(Error::Dependency(_))));

    run_sweep(&cache, &small_config()).unwrap();
    let a = evaluate_configured(&cache, &cfg).unwrap();
    let b = evaluate_configured(&cache, &cfg).unwrap();
    assert_eq!(a.len(), 3);
    assert_eq!(a, b);
    assert!(a.iter().all(|r| r.lambda == 0.5));
}

#[test]
fn cli_sweep_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL_SWEEP);
    let out = tmp.path().join("out");
    let status = bin()
        .arg("--cache")
        .arg(tmp.path().join("cache"))
        .args(["sweep", "--out"])
        .arg(&out)
        .arg("--config")
        .arg(&config)
        .status()
        .unwrap();
    assert!(status.success());
    let rows = read_rows(fs::File::open(out.join("results.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 6);

    let report = tmp.path().join("report");
    let status = bin()
        .args(["report", "--input"])
        .arg(out.join("results.csv"))
        .arg("--out")
        .arg(&report)
        .status()
        .unwrap();
    assert!(status.success());
    let table = fs::read_to_string(report.join("table_EFM_tiny.txt")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[1].contains("Clean") && lines[1].contains("Attack eps_a=1"));
    assert!(lines[3].trim_start().starts_with("vanilla"));
    assert!(lines[4].trim_start().starts_with("0.5"));
    assert_eq!(lines.len(), 5);
    let curve = fs::read_to_string(report.join("curve_EFM_tiny_0.25.csv")).unwrap();
    assert!(curve.starts_with("lambda,eps_a,expl_f1"));
    assert_eq!(curve.lines().count(), 1 + 6);
}

#[test]
fn cli_names_the_offending_config_key() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL_SWEEP);
    let out = bin()
        .arg("--cache")
        .arg(tmp.path().join("cache"))
        .args(["train", "--config"])
        .arg(&config)
        .args(["--training.batch_sise", "8"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("training.batch_sise"));

    let out = bin()
        .args(["train", "--config"])
        .arg(tmp.path().join("missing.json"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn cli_evaluate_without_reference_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL_SWEEP);
    let out = bin()
        .arg("--cache")
        .arg(tmp.path().join("cache"))
        .args(["evaluate", "--config"])
        .arg(&config)
        .args(["--defense.lambda", "0.5", "--defense.eps_d", "0.25"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing dependency"));
}
