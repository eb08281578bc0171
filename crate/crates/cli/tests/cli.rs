use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_trendwatch"));
    c.env_remove("TRENDWATCH_JOBS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> PathBuf {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    PathBuf::from(String::from_utf8(out.stdout).unwrap().trim())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small synthetic panel shared by the tests below.
fn simulate(root: &Path, name: &str) -> PathBuf {
    let dir = root.join(name);
    ok(&[
        "simulate", "--seed", "5", "--regions", "8", "--days", "300", "--run-dir", p(&dir),
    ]);
    dir
}

#[test]
fn simulate_then_detect_writes_outputs_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "sim");
    for f in ["panel.csv", "truth.csv", "null.csv", "regions.csv", "clusters.csv", "scenario.json", "manifest.json"] {
        assert!(sim.join(f).exists(), "missing {f}");
    }
    let det = ok(&[
        "detect",
        "--panel", p(&sim.join("panel.csv")),
        "--truth", p(&sim.join("truth.csv")),
        "--null", p(&sim.join("null.csv")),
        "--streams", "s1",
        "--out-dir", p(&tmp.path().join("runs")),
    ]);
    assert!(det.starts_with(tmp.path().join("runs")));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(det.join("report.json")).unwrap()).unwrap();
    let power = report["power"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&power));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(det.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "detect");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 3);
    let alarms = fs::read_to_string(det.join("alarms.csv")).unwrap();
    assert!(alarms.starts_with("region_id,date,statistic"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = simulate(tmp.path(), "a");
    let b = simulate(tmp.path(), "b");
    for f in ["panel.csv", "truth.csv", "null.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let detect = |dir: &str| {
        ok(&[
            "detect",
            "--panel", p(&a.join("panel.csv")),
            "--truth", p(&a.join("truth.csv")),
            "--null", p(&a.join("null.csv")),
            "--fuse",
            "--run-dir", p(&tmp.path().join(dir)),
        ])
    };
    let x = detect("d1");
    let y = detect("d2");
    assert_eq!(fs::read(x.join("alarms.csv")).unwrap(), fs::read(y.join("alarms.csv")).unwrap());
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "sim");

    let out = run(&["detect", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["detect", "--run-dir", p(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--panel"));

    let out = run(&[
        "detect",
        "--panel", p(&sim.join("panel.csv")),
        "--truth", p(&sim.join("truth.csv")),
        "--null", p(&sim.join("null.csv")),
        "--streams", "nope",
        "--run-dir", p(&tmp.path().join("y")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "data");
    assert!(err["error"]["message"].as_str().unwrap().contains("nope"));

    let out = run(&["ingest", "--input", p(&tmp.path().join("missing.csv")), "--run-dir", p(&tmp.path().join("z"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "sim");
    let cfg = tmp.path().join("tw.toml");
    fs::write(
        &cfg,
        format!(
            "[detect]\npanel = {:?}\ntruth = {:?}\nnull = {:?}\nstreams = [\"s1\"]\nwindow = 14\nfpr = 0.1\n",
            p(&sim.join("panel.csv")),
            p(&sim.join("truth.csv")),
            p(&sim.join("null.csv")),
        ),
    )
    .unwrap();
    let d = ok(&["--config", p(&cfg), "detect", "--window", "28", "--run-dir", p(&tmp.path().join("d"))]);
    let m: serde_json::Value = serde_json::from_slice(&fs::read(d.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["window"], 28);
    assert_eq!(m["config"]["fpr"], 0.1);

    fs::write(&cfg, "[detect]\nwindwo = 3\n").unwrap();
    let out = run(&["--config", p(&cfg), "detect", "--run-dir", p(&tmp.path().join("e"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn remaining_commands_run_on_the_synthetic_panel() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "sim");
    let panel = sim.join("panel.csv");
    let d = |n: &str| tmp.path().join(n);

    let ing = ok(&["ingest", "--input", p(&panel), "--strict", "--run-dir", p(&d("ingest"))]);
    assert_eq!(fs::read(ing.join("panel.csv")).unwrap(), fs::read(&panel).unwrap());

    let sm = ok(&["smooth", "--panel", p(&panel), "--region", "R001", "--lambda", "1000", "--run-dir", p(&d("smooth"))]);
    assert!(sm.join("smooth.csv").exists());

    let gt = ok(&[
        "groundtruth", "--panel", p(&panel), "--streams", "s1,s2", "--lambdas", "1000,10000", "--run-dir", p(&d("gt")),
    ]);
    assert!(fs::read_to_string(gt.join("truth.csv")).unwrap().starts_with("region_id,start,end"));

    let fu = ok(&["fuse", "--panel", p(&panel), "--weights", "s1=2", "--run-dir", p(&d("fuse"))]);
    assert!(fu.join("fused.csv").exists());

    let net = ok(&[
        "network", "--panel", p(&panel), "--stream", "s1", "--meta", p(&sim.join("regions.csv")), "--run-dir",
        p(&d("net")),
    ]);
    let graph = fs::read_to_string(net.join("graph.csv")).unwrap();
    assert_eq!(graph.lines().count(), 1 + 8 * 3);

    let cl = ok(&["cluster", "--matrix", p(&net.join("matrix.csv")), "--k", "2", "--dim", "2", "--run-dir", p(&d("cl"))]);
    assert_eq!(fs::read_to_string(cl.join("clusters.csv")).unwrap().lines().count(), 9);

    let agg = ok(&[
        "detect",
        "--panel", p(&panel),
        "--truth", p(&sim.join("truth.csv")),
        "--null", p(&sim.join("null.csv")),
        "--streams", "s3",
        "--graph", p(&net.join("graph.csv")),
        "--run-dir", p(&d("agg")),
    ]);
    assert!(agg.join("alarms.csv").exists());

    let ev = ok(&[
        "evaluate",
        "--panel", p(&panel),
        "--truth", p(&sim.join("truth.csv")),
        "--null", p(&sim.join("null.csv")),
        "--streams", "s1",
        "--windows", "7,21",
        "--run-dir", p(&d("eval")),
    ]);
    let sweep = fs::read_to_string(ev.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
}
