use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bevloop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bevloop"))
        .args(args)
        .output()
        .expect("spawn bevloop")
}

fn ok(args: &[&str]) -> String {
    let out = bevloop(args);
    assert!(
        out.status.success(),
        "bevloop {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &[&str] = &["--length", "120", "--step", "1.0", "--range", "30", "--world-seed", "5"];
const CONFIG: &str = "# small world\ntau_c = 30\nmax_range = 30\n";

fn synth(dir: &Path, name: &str, extra: &[&str]) -> String {
    let out = dir.join(name);
    let mut args = vec!["synth", "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(&args);
    out.join("manifest.json").to_str().unwrap().to_string()
}

#[test]
fn run_then_eval_agree() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "s", &[]);
    let cfg = dir.path().join("c.txt");
    fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("out");
    let stdout = ok(&["run", "--manifest", &manifest, "--out", out.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert!(stdout.contains("closures"), "{stdout}");
    for f in ["closures.csv", "scan_closures.csv", "maps.csv", "metrics.json", "pr_curve.csv", "pr_curve_scan.csv", "config.txt"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!(run["closures"].as_u64().unwrap() > 0);

    let eval_out = dir.path().join("eval");
    ok(&[
        "eval",
        "--manifest",
        &manifest,
        "--closures",
        out.to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    let eval: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval_out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(run["map"], eval["map"]);
    assert_eq!(run["scan"], eval["scan"]);
    let (a, b) = (run["mean_fitness"].as_f64().unwrap(), eval["mean_fitness"].as_f64().unwrap());
    assert!((a - b).abs() < 0.02, "{a} vs {b}");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    fs::write(&cfg, CONFIG).unwrap();
    let text = ok(&["config", "--config", cfg.to_str().unwrap(), "--set", "tau_c=45", "--set", "prune=false"]);
    assert!(text.contains("tau_c = 45\n") && text.contains("max_range = 30\n") && text.contains("prune = false\n"));
    let bad = bevloop(&["config", "--set", "gamma=1"]);
    assert!(!bad.status.success());
    let unknown = bevloop(&["config", "--set", "no_such_key=1"]);
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("no_such_key"));
}

#[test]
fn multi_session_against_a_saved_database() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a", &[]);
    let b = synth(dir.path(), "b", &["--seed", "21", "--hfov", "180"]);
    let db = dir.path().join("a.hbst");
    let set = ["--set", "tau_c=30", "--set", "max_range=30"];
    let mut args = vec!["build-db", "--manifest", &a, "--db", db.to_str().unwrap()];
    args.extend_from_slice(&set);
    ok(&args);
    let before = fs::read(&db).unwrap();

    let out = dir.path().join("out");
    let mut args = vec!["run", "--manifest", &b, "--db", db.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(&set);
    ok(&args);
    assert_eq!(fs::read(&db).unwrap(), before);
    let closures = fs::read_to_string(out.join("closures.csv")).unwrap();
    assert!(closures.lines().count() > 1, "no cross-session closures");
    assert!(!out.join("metrics.json").exists());
}

#[test]
fn dump_bev_writes_one_pgm_per_map() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "s", &[]);
    let out = dir.path().join("bev");
    let stdout = ok(&["dump-bev", "--manifest", &manifest, "--out", out.to_str().unwrap(), "--set", "tau_c=30", "--set", "max_range=30"]);
    let n: usize = stdout.split_whitespace().next().unwrap().parse().unwrap();
    let pgms: Vec<_> = fs::read_dir(&out).unwrap().collect();
    assert_eq!(pgms.len(), n);
    let first = fs::read(out.join("map_0000.pgm")).unwrap();
    assert!(first.starts_with(b"P5\n"));
}

#[test]
fn stress_ground_prints_and_writes_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("stress.csv");
    let stdout = ok(&["stress-ground", "--magnitudes", "10,50", "--trials", "3", "--maps", "2", "--csv", csv.to_str().unwrap()]);
    assert_eq!(stdout.lines().count(), 3);
    let table = fs::read_to_string(csv).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "magnitude_deg,mean_error_deg,max_error_deg,solves,failures");
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[0], 10.0);
    assert!(row[1] < 0.1);
}

#[test]
fn empty_session_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("scans")).unwrap();
    fs::write(dir.path().join("poses.txt"), "").unwrap();
    fs::write(
        dir.path().join("manifest.json"),
        r#"{"session_id": "e", "scan_directory": "scans", "pose_file": "poses.txt"}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let r = bevloop(&["run", "--manifest", dir.path().join("manifest.json").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("no scans"));
    assert!(!out.exists());
}

#[test]
fn synth_spec_file_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"world": {"length": 40}, "trajectory": {"kind": "one_way", "start": 0, "length": 40, "step": 4, "lane": 1.5}, "sensor": {"max_range": 20}}"#,
    )
    .unwrap();
    let out = dir.path().join("s");
    let stdout = ok(&["synth", "--out", out.to_str().unwrap(), "--spec", spec.to_str().unwrap()]);
    assert!(stdout.starts_with("10 scans"), "{stdout}");
    assert_eq!(fs::read_dir(out.join("scans")).unwrap().count(), 10);

    let bad = bevloop(&["synth", "--out", dir.path().join("x").to_str().unwrap(), "--hfov", "400"]);
    assert!(!bad.status.success());
}
