//! End-to-end runs of the `pimatch` binary on small experiments.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pimatch::compare::CompareReport;
use pimatch::config::GainsFile;
use pimatch::io::{ensemble_from_json, load_record_csv, read_curve_csv, read_sweep_csv, sha256_hex, tune_from_json, Manifest};
use pimatch::matching::StageCost;
use pimatch::reactor::ReactorParameters;
use tempfile::TempDir;

const SMALL: &str = r#"
[sim]
n_paths = 4
tf = 30.0

[[tuning.grid]]
gain = "kp"
lo = -4.0e-3
hi = 0.0
count = 5
paths = 3

[[tuning.grid]]
gain = "ki"
lo = -1.0e-3
hi = 0.0
count = 5
paths = 3

[sweep]
count = 7
"#;

fn pimatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pimatch")).args(args).output().expect("spawn pimatch")
}

fn ok(args: &[&str]) -> Output {
    let out = pimatch(args);
    assert!(out.status.success(), "pimatch {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

/// Every file listed in the manifest exists with the recorded hash.
fn assert_manifest_matches(dir: &Path, command: &str) -> Manifest {
    let m = manifest(dir);
    assert_eq!(m.command, command);
    assert!(!m.files.is_empty());
    for (name, hash) in &m.files {
        assert_eq!(&sha256_hex(&std::fs::read(dir.join(name)).unwrap()), hash, "{name}");
    }
    m
}

#[test]
fn calibrate_writes_loadable_parameters_and_is_idempotent() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["calibrate", "--out", s(&a)]);
    let p = ReactorParameters::load(&a.join("reactor.toml")).unwrap();
    assert_manifest_matches(&a, "calibrate");

    // Calibrating again from the calibrated file reproduces it.
    let cfg = write_config(tmp.path(), "cal.toml", &format!("reactor_file = {:?}\n", s(&a.join("reactor.toml"))));
    ok(&["calibrate", "--config", s(&cfg), "--out", s(&b)]);
    let q = ReactorParameters::load(&b.join("reactor.toml")).unwrap();
    assert!((p.k0 - q.k0).abs() <= 1e-12 * p.k0);
    assert!((p.beta - q.beta).abs() <= 1e-12 * p.beta);
}

#[test]
fn steady_sweep_lists_requested_flows() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    ok(&["steady-sweep", "--config", s(&cfg), "--out", s(tmp.path())]);
    let rows = read_sweep_csv(std::fs::File::open(tmp.path().join("sweep.csv")).unwrap()).unwrap();
    let mut flows: Vec<f64> = rows.iter().map(|r| r.flow_ml_min).collect();
    flows.dedup();
    assert_eq!(flows.len(), 7);
    assert!(rows.iter().any(|r| r.stable));
    assert_manifest_matches(tmp.path(), "steady-sweep");
}

#[test]
fn empty_sweep_writes_header_only() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[sweep]\ncount = 0\n");
    ok(&["steady-sweep", "--config", s(&cfg), "--out", s(tmp.path())]);
    let text = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(read_sweep_csv(text.as_bytes()).unwrap().is_empty());
}

#[test]
fn simulate_is_reproducible_per_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|d| tmp.path().join(d)).collect();
    ok(&["simulate", "--config", s(&cfg), "--seed", "7", "--out", s(&dirs[0])]);
    ok(&["simulate", "--config", s(&cfg), "--seed", "7", "--out", s(&dirs[1])]);
    ok(&["simulate", "--config", s(&cfg), "--seed", "8", "--out", s(&dirs[2])]);
    let read = |d: &Path| std::fs::read(d.join("trajectory.csv")).unwrap();
    assert_eq!(read(&dirs[0]), read(&dirs[1]));
    assert_ne!(read(&dirs[0]), read(&dirs[2]));
    let rec = load_record_csv(&dirs[0].join("trajectory.csv")).unwrap();
    assert_eq!(rec.len(), 31);
    assert_eq!(rec.seed, 7);
    let m = assert_manifest_matches(&dirs[0], "simulate");
    assert_eq!(m.seed, 7);
    assert_eq!(m.config_sha256, sha256_hex(SMALL.as_bytes()));
}

#[test]
fn simulate_mpc_writes_slacks() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    ok(&["simulate", "--controller", "mpc", "--config", s(&cfg), "--out", s(tmp.path())]);
    let rec = load_record_csv(&tmp.path().join("trajectory.csv")).unwrap();
    assert!(rec.slack_lo.iter().all(|e| *e >= 0.0));
    assert!(rec.u.iter().all(|u| (0.0..=1000.0 / 60_000.0 + 1e-15).contains(u)));
}

#[test]
fn zero_paths_are_rejected() {
    let out = pimatch(&["run", "--paths", "0", "--out", "/nonexistent-never-created"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("paths"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[sim]\nn_path = 3\n");
    let out = pimatch(&["run", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_path"));
}

#[test]
fn tune_then_run_with_the_tuned_gains() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let tuned = tmp.path().join("tuned");
    ok(&["tune", "--objective", "phi1", "--config", s(&cfg), "--out", s(&tuned)]);
    let g = GainsFile::from_toml_str(&std::fs::read_to_string(tuned.join("gains.toml")).unwrap()).unwrap();
    let t = tune_from_json(&std::fs::read_to_string(tuned.join("tune.json")).unwrap()).unwrap();
    assert_eq!((t.gains.kp, t.gains.ki, t.gains.kaw), (g.kp, g.ki, g.kaw));
    for name in ["curve_kp.csv", "curve_ki.csv"] {
        let c = read_curve_csv(std::fs::File::open(tuned.join(name)).unwrap()).unwrap();
        assert_eq!(c.curve.len(), 5);
    }
    assert_manifest_matches(&tuned, "tune");

    let run_cfg = write_config(
        tmp.path(),
        "run.toml",
        &format!("[sim]\nn_paths = 3\ntf = 30.0\n[pi]\ngains_file = {:?}\n", s(&tuned.join("gains.toml"))),
    );
    let ran = tmp.path().join("ran");
    ok(&["run", "--config", s(&run_cfg), "--out", s(&ran)]);
    let e = ensemble_from_json(&std::fs::read_to_string(ran.join("ensemble.json")).unwrap()).unwrap();
    assert_eq!(e.paths.len(), 3);
    assert_eq!(e.controller, "pi");
}

#[test]
fn match_then_compare_with_the_stored_cost() {
    let tmp = TempDir::new().unwrap();
    let matched = tmp.path().join("matched");
    ok(&["match", "--out", s(&matched)]);
    let cost = StageCost::from_toml_str(&std::fs::read_to_string(matched.join("stage_cost.toml")).unwrap()).unwrap();
    assert!(cost.beta >= 1.0);

    let cfg = write_config(
        tmp.path(),
        "cmp.toml",
        &format!("[sim]\nn_paths = 3\ntf = 30.0\n[mpc]\ncost_file = {:?}\n", s(&matched.join("stage_cost.toml"))),
    );
    let cmp = tmp.path().join("cmp");
    ok(&["compare", "--config", s(&cfg), "--seed", "11", "--out", s(&cmp)]);
    let r = CompareReport::from_json(&std::fs::read_to_string(cmp.join("report.json")).unwrap()).unwrap();
    assert_eq!((r.n_paths, r.seed_base), (3, 11));
    assert_eq!(r.pi.paths.len(), 3);
    assert_eq!(r.mpc.paths.iter().map(|p| p.seed).collect::<Vec<_>>(), r.pi.paths.iter().map(|p| p.seed).collect::<Vec<_>>());
    assert_manifest_matches(&cmp, "compare");
}
