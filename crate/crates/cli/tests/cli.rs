//! End-to-end runs of the driver binary: exit codes, determinism and manifest replay.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgo-biharmonic")).args(args).output().expect("binary runs")
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .flatten()
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_is_deterministic_across_thread_counts() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    let ra = run(&["solve", "--resolution", "64", "--jobs", "1", "--out", arg(&a)]);
    let rb = run(&["solve", "--resolution", "64", "--jobs", "4", "--out", arg(&b)]);
    assert_eq!(ra.status.code(), Some(0), "{}", String::from_utf8_lossy(&ra.stderr));
    assert_eq!(rb.status.code(), Some(0));
    let (ca, cb) = (csvs(&a), csvs(&b));
    assert!(ca.iter().any(|(n, _)| n == "convergence.csv"));
    assert_eq!(ca, cb);
    assert!(a.join("plot_convergence.py").exists());
    let m = fs::read_to_string(a.join("manifest.toml")).unwrap();
    for key in ["code_hash", "subcommand = \"solve\"", "started_unix", "[config]", "resolution = 64"] {
        assert!(m.contains(key), "manifest lacks {key}");
    }
}

#[test]
fn manifest_replays_the_run() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    assert_eq!(run(&["solve", "--resolution", "48", "--seed", "7", "--out", arg(&a)]).status.code(), Some(0));
    let r = run(&["solve", "--config", arg(&a.join("manifest.toml")), "--out", arg(&b)]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(csvs(&a), csvs(&b));
    let m = fs::read_to_string(b.join("manifest.toml")).unwrap();
    assert!(m.contains("resolution = 48") && m.contains("seed = 7"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("bad.toml");
    fs::write(&cfg, "[domain]\nshape = \"disk\"\nradiu = 1.0\n").unwrap();
    let out = t.path().join("out");
    let r = run(&["solve", "--config", arg(&cfg), "--out", arg(&out)]);
    assert_eq!(r.status.code(), Some(2));
    let report: toml::Table = toml::from_str(&fs::read_to_string(out.join("error.toml")).unwrap()).unwrap();
    assert_eq!(report["kind"].as_str(), Some("config"));
    assert_eq!(report["exit_code"].as_integer(), Some(2));
    assert!(report["messages"].as_array().unwrap()[0].as_str().unwrap().contains("radiu"));
}

#[test]
fn invalid_values_are_all_reported() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("bad.toml");
    fs::write(&cfg, "[domain]\nshape = \"triangle\"\n[ladder]\ntransform = [0.01, 0.02, 0.005]\n").unwrap();
    let out = t.path().join("out");
    let r = run(&["transform", "--config", arg(&cfg), "--resolution", "8", "--out", arg(&out)]);
    assert_eq!(r.status.code(), Some(2));
    let report: toml::Table = toml::from_str(&fs::read_to_string(out.join("error.toml")).unwrap()).unwrap();
    let msgs: Vec<&str> = report["messages"].as_array().unwrap().iter().map(|m| m.as_str().unwrap()).collect();
    assert!(msgs.iter().any(|m| m.contains("triangle")));
    assert!(msgs.iter().any(|m| m.contains("resolution")));
    assert!(msgs.iter().any(|m| m.contains("ladder.transform")));
}

#[test]
fn under_resolved_ladder_is_a_config_error() {
    let t = tempfile::tempdir().unwrap();
    let r = run(&["transform", "--resolution", "64", "--out", arg(t.path())]);
    assert_eq!(r.status.code(), Some(2));
    assert!(fs::read_to_string(t.path().join("error.toml")).unwrap().contains("under-resolved"));
}

#[test]
fn tolerance_failure_exits_with_diff_table() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("coarse.toml");
    // Far from the asymptotic regime the inversion error does not halve with h.
    fs::write(&cfg, "[ladder]\ntransform = [0.8, 0.6, 0.4]\n").unwrap();
    let out = t.path().join("out");
    let r = run(&["transform", "--config", arg(&cfg), "--resolution", "64", "--out", arg(&out)]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("tolerance failures") && err.contains("inversion_order"));
    let checks = fs::read_to_string(out.join("checks.csv")).unwrap();
    assert!(checks.starts_with("check,measured,lower,upper,excess,passed") && checks.contains(",false"));
    assert!(fs::read_to_string(out.join("manifest.toml")).unwrap().contains("tolerance_failure"));
}

#[test]
fn zero_preset_recovers_below_noise_floor() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("zero.toml");
    fs::write(&cfg, "[coefficients]\npreset = \"zero\"\n[ladder]\nstrip = [0.008]\n").unwrap();
    let r = run(&["recover", "--config", arg(&cfg), "--resolution", "64", "--out", arg(t.path())]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let checks = fs::read_to_string(t.path().join("checks.csv")).unwrap();
    assert_eq!(checks.lines().filter(|l| l.starts_with("noise_floor[")).count(), 4);
    assert!(!checks.contains(",false"));
    assert!(t.path().join("strip_a2.csv").exists() && t.path().join("plot_strip_a2.py").exists());
}

#[test]
fn short_coefficient_file_is_rejected() {
    let t = tempfile::tempdir().unwrap();
    let q = t.path().join("q.csv");
    fs::write(&q, "a0,a1_1,a1_2,a2\n0,0,0,1\n").unwrap();
    let cfg = t.path().join("f.toml");
    fs::write(&cfg, format!("[coefficients]\nfile = {:?}\n", arg(&q))).unwrap();
    let r = run(&["recover", "--config", arg(&cfg), "--resolution", "48", "--out", arg(t.path())]);
    assert_eq!(r.status.code(), Some(2));
    assert!(fs::read_to_string(t.path().join("error.toml")).unwrap().contains("interior nodes"));
}

#[test]
fn seeded_sweep_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("s.toml");
    fs::write(&cfg, "[sweep]\npoints = 4\n").unwrap();
    let dirs: Vec<_> = ["a", "b", "c"].iter().map(|d| t.path().join(d)).collect();
    for (d, jobs, seed) in [(&dirs[0], "1", "5"), (&dirs[1], "3", "5"), (&dirs[2], "1", "6")] {
        let r = run(&["sweep", "--config", arg(&cfg), "--resolution", "64", "--jobs", jobs, "--seed", seed, "--out", arg(d)]);
        assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    }
    assert_eq!(csvs(&dirs[0]), csvs(&dirs[1]));
    let sweep = |d: &Path| fs::read(d.join("bound_sweep.csv")).unwrap();
    assert_ne!(sweep(&dirs[0]), sweep(&dirs[2]));
}
