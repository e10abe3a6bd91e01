use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mixfield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixfield")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mixfield_cli_{name}_{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

const SMALL: &str = r#"
version = 1
name = "small"
seeds = [1, 2]
noise_dbm = -80.0

[geometry]
num_antennas = 10

[budget]
total_w = 1.0

[[users]]
spatial = 0.0
range_rayleigh = 0.1

[[users]]
spatial = 0.05
range_rayleigh = 1.5

[[sweep]]
target = { kind = "total_power_w" }
values = [0.5, 1.0]

[[schemes]]
kind = "full_array"

[[schemes]]
kind = "greedy"

[[schemes]]
kind = "subarray"
num_subarrays = 1
"#;

fn write_config(dir: &Path) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path
}

#[test]
fn lists_presets() {
    let out = mixfield(&["presets"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["fig2", "fig7", "fig10", "rician"] {
        assert!(text.lines().any(|l| l == name), "{name}");
    }
}

#[test]
fn run_is_reproducible_and_writes_manifest() {
    let dir = scratch("run");
    let cfg = write_config(&dir);
    let a = dir.join("a");
    let b = dir.join("b");
    for out in [&a, &b] {
        let o = mixfield(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", "2"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv_a = fs::read(a.join("small.csv")).unwrap();
    assert_eq!(csv_a, fs::read(b.join("small.csv")).unwrap());
    let text = String::from_utf8(csv_a).unwrap();
    assert!(text.starts_with("seed,sweep_param,sweep_value,scheme,rate_u0,rate_u1,sum_rate"));
    // 2 seeds x 2 powers x 3 schemes; the subarray rows fail (K > U) but stay
    assert_eq!(text.lines().count(), 1 + 12);
    assert_eq!(text.lines().filter(|l| l.contains(",subarray,") && l.contains("infeasible")).count(), 4);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("small.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["name"], "small");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["seeds"], serde_json::json!([1, 2]));
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn seed_flag_overrides_seed_list() {
    let dir = scratch("seed");
    let cfg = write_config(&dir);
    let o = mixfield(&["run", cfg.to_str().unwrap(), "--seed", "7", "--out", dir.to_str().unwrap()]);
    assert!(o.status.success());
    let text = fs::read_to_string(dir.join("small.csv")).unwrap();
    assert!(text.lines().skip(1).all(|l| l.starts_with("7,")));
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn oracle_subcommand_dominates_run() {
    let dir = scratch("oracle");
    let cfg = write_config(&dir);
    assert!(mixfield(&["run", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]).status.success());
    let o = mixfield(&["oracle", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let read = |name: &str| -> Vec<Vec<String>> {
        fs::read_to_string(dir.join(name))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(String::from).collect())
            .collect()
    };
    let oracle = read("small_oracle.csv");
    assert_eq!(oracle.len(), 4);
    for row in read("small.csv").iter().filter(|r| r[3] != "subarray") {
        let o = oracle.iter().find(|o| o[0] == row[0] && o[2] == row[2]).unwrap();
        let (a, b): (f64, f64) = (o[6].parse().unwrap(), row[6].parse().unwrap());
        assert!(a >= b - 1e-9, "oracle {a} < {} {b}", row[3]);
    }
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn preset_prints_a_loadable_config() {
    let o = mixfield(&["preset", "fig8", "--print-config"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let cfg = mixfield_core::experiment::ExperimentConfig::from_toml_str(&text).unwrap();
    assert_eq!(cfg, mixfield_core::experiment::preset("fig8").unwrap());
}

#[test]
fn preset_fig2_runs() {
    let dir = scratch("fig2");
    let o = mixfield(&["preset", "fig2", "--out", dir.to_str().unwrap()]);
    assert!(o.status.success());
    let text = fs::read_to_string(dir.join("fig2.csv")).unwrap();
    assert!(text.starts_with("seed,sweep_param,sweep_value,correlation,full_array_sum_rate,error"));
    assert_eq!(text.lines().count(), 52);
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn errors_exit_nonzero() {
    let o = mixfield(&["preset", "fig99"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown preset"));
    let o = mixfield(&["run", "/nonexistent/config.toml"]);
    assert!(!o.status.success());
}
