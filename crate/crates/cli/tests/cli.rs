//! The `cbfed-lab` binary: exit codes, outputs and seed handling.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cbfed::{FourierField, Grid, GridSpec};
use cbfed_lab::{RunConfig, RunReport};
use tempfile::TempDir;

const SMALL_SIMULATE: &str = r#"
kind = "simulate"
seed = 5

[grid]
n = 16

[time]
horizon = 0.02
dt = 1e-3
stride = 10
"#;

fn lab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbfed-lab"))
        .current_dir(dir)
        .env_remove("CBFED_LAB_OUT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn report(dir: &Path) -> RunReport {
    serde_json::from_slice(&fs::read(dir.join("report.json")).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn simulate_writes_report_series_and_fields() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "sim.toml", SMALL_SIMULATE);
    let o = lab(tmp.path(), &["--config", "sim.toml", "--out", "out", "--quiet"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = tmp.path().join("out");
    let r = report(&out);
    assert!(r.passed);
    assert_eq!(r.seeds.master, 5);
    assert!(out.join("series/energy.csv").is_file());
    assert!(out.join("fields/final.bin").is_file());
    assert!(out.join("fields/snapshot_0000.bin").is_file());
}

#[test]
fn malformed_config_exits_two_without_outputs() {
    let tmp = TempDir::new().unwrap();
    let cases = [
        ("broken.toml", "kind = \"simulate\"\nseed = "),
        ("unknown.toml", "kind = \"simulate\"\n[grid]\nsize = 8\n"),
        ("kind.toml", "kind = \"teleport\"\n"),
        ("trace.toml", "kind = \"sde-run\"\n[noise]\neps_q = 1.0\n"),
        ("theta.toml", "kind = \"sde-bounds\"\n[monte_carlo]\ntheta = 1.5\n"),
    ];
    for (name, body) in cases {
        write(tmp.path(), name, body);
        let o = lab(tmp.path(), &["--config", name, "--out", "out"]);
        assert_eq!(code(&o), 2, "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!tmp.path().join("out").exists(), "{name} wrote outputs");
    }
    let o = lab(tmp.path(), &["--config", "missing.toml"]);
    assert_eq!(code(&o), 2);
    let o = lab(tmp.path(), &["--bogus"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn seed_flag_overrides_the_config() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "sim.toml", SMALL_SIMULATE);
    let o = lab(tmp.path(), &["--config", "sim.toml", "--seed", "77", "--quiet"]);
    assert_eq!(code(&o), 0);
    let r = report(&tmp.path().join("runs/simulate-77"));
    assert_eq!(r.seeds.master, 77);
    assert_eq!(r.config.seed, 77);
}

#[test]
fn environment_supplies_the_fallback_output_directory() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "sim.toml", SMALL_SIMULATE);
    let o = Command::new(env!("CARGO_BIN_EXE_cbfed-lab"))
        .current_dir(tmp.path())
        .env("CBFED_LAB_OUT", "from-env")
        .args(["--config", "sim.toml", "--quiet"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(tmp.path().join("from-env/report.json").is_file());

    // `out` in the file wins over the environment.
    write(tmp.path(), "sim2.toml", &format!("out = \"from-file\"\n{SMALL_SIMULATE}"));
    let o = Command::new(env!("CARGO_BIN_EXE_cbfed-lab"))
        .current_dir(tmp.path())
        .env("CBFED_LAB_OUT", "from-env-2")
        .args(["--config", "sim2.toml", "--quiet"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(tmp.path().join("from-file/report.json").is_file());
    assert!(!tmp.path().join("from-env-2").exists());
}

#[test]
fn echoed_config_reruns_to_identical_metrics() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "sim.toml", SMALL_SIMULATE);
    assert_eq!(code(&lab(tmp.path(), &["--config", "sim.toml", "--out", "a", "--quiet"])), 0);
    let first = report(&tmp.path().join("a"));
    let echoed = RunConfig::from_toml(&first.config_toml).unwrap();
    assert_eq!(echoed, first.config);
    write(tmp.path(), "echo.toml", &first.config_toml);
    assert_eq!(code(&lab(tmp.path(), &["--config", "echo.toml", "--out", "b", "--quiet"])), 0);
    let second = report(&tmp.path().join("b"));
    assert_eq!(first.metrics.to_bytes(), second.metrics.to_bytes());
}

#[test]
fn snapshots_feed_back_as_initial_states() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "sim.toml", SMALL_SIMULATE);
    assert_eq!(code(&lab(tmp.path(), &["--config", "sim.toml", "--out", "a", "--quiet"])), 0);
    let resumed = format!(
        "{SMALL_SIMULATE}\n[initial]\nkind = \"snapshot\"\npath = \"a/fields/final.bin\"\n"
    );
    write(tmp.path(), "resume.toml", &resumed);
    assert_eq!(code(&lab(tmp.path(), &["--config", "resume.toml", "--out", "b", "--quiet"])), 0);

    let g = Grid::new(GridSpec::new(2, 16, 1.0).unwrap()).unwrap();
    let read = |p: &str| {
        let f = fs::File::open(tmp.path().join(p)).unwrap();
        FourierField::read_snapshot(&g, std::io::BufReader::new(f)).unwrap()
    };
    let end = read("a/fields/final.bin");
    let start = read("b/fields/snapshot_0000.bin");
    assert!(start.max_coeff_diff(&end) <= 1e-15 * end.norm_h().max(1.0));

    // A snapshot on another grid is a configuration error.
    let other = resumed.replace("n = 16", "n = 8");
    write(tmp.path(), "other.toml", &other);
    assert_eq!(code(&lab(tmp.path(), &["--config", "other.toml", "--out", "c"])), 2);
    assert!(!tmp.path().join("c").exists());
}

#[test]
fn default_steering_succeeds() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "steer.toml", "kind = \"steer\"\nseed = 3\n[grid]\nn = 32\n");
    let o = lab(tmp.path(), &["--config", "steer.toml", "--out", "out"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&tmp.path().join("out"));
    assert!(r.criteria.iter().any(|c| c.name == "success" && c.passed));
    assert!(tmp.path().join("out/series/distance.csv").is_file());
}
