//! The `retarget` binary end to end.

use std::path::PathBuf;
use std::process::{Command, Output};

use retarget_core::{fixtures_dir, scenarios_dir};

fn retarget(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_retarget"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("retarget-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn validate_accepts_the_biped_and_rejects_a_cycle() {
    let ok = retarget(&["validate", fixtures_dir().join("biped.urdf").to_str().unwrap()]);
    assert!(ok.status.success());
    assert!(text(&ok.stdout).contains("21 dof"));

    let cyclic = scratch("cyclic.urdf");
    std::fs::write(
        &cyclic,
        r#"<robot name="c">
          <link name="a"><inertial><mass value="1"/></inertial></link>
          <link name="b"><inertial><mass value="1"/></inertial></link>
          <link name="root"><inertial><mass value="1"/></inertial></link>
          <joint name="j1" type="fixed"><parent link="a"/><child link="b"/></joint>
          <joint name="j2" type="fixed"><parent link="b"/><child link="a"/></joint>
        </robot>"#,
    )
    .unwrap();
    let bad = retarget(&["validate", cyclic.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(text(&bad.stderr).contains("cycle"), "{}", text(&bad.stderr));

    let missing = retarget(&["validate", "/nonexistent.urdf"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn run_writes_a_trace_and_a_passing_report() {
    let out = scratch("standing.jsonl");
    let report = scratch("standing_report.json");
    let r = retarget(&[
        "run",
        scenarios_dir().join("standing_biped.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}{}", text(&r.stdout), text(&r.stderr));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["passed"], true);
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 1001);

    let v = retarget(&["verify", out.to_str().unwrap()]);
    assert!(v.status.success());
}

#[test]
fn run_without_timing_is_byte_reproducible() {
    let scenario = scenarios_dir().join("push_dual_arm.json");
    let mut texts = Vec::new();
    for name in ["a.jsonl", "b.jsonl"] {
        let out = scratch(name);
        let r = retarget(&[
            "run",
            scenario.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--no-timing",
        ]);
        assert!(r.status.success());
        texts.push(std::fs::read(&out).unwrap());
    }
    assert!(texts[0] == texts[1]);
}

#[test]
fn bench_prints_percentiles() {
    let r = retarget(&[
        "bench",
        "--scenario",
        scenarios_dir().join("bench_biped.json").to_str().unwrap(),
        "--iters",
        "200",
    ]);
    assert!(r.status.success(), "{}", text(&r.stderr));
    let out = text(&r.stdout);
    assert!(out.contains("21 dof, 4 contacts, moving frame: torso"), "{out}");
    assert!(out.contains("build+solve"));
    let j = retarget(&[
        "bench",
        "--model",
        fixtures_dir().join("dual_arm.urdf").to_str().unwrap(),
        "--iters",
        "50",
        "--json",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&j.stdout).unwrap();
    assert!(v["total"]["p50_us"].as_f64().unwrap() > 0.0);
}

#[test]
fn bad_scenario_is_a_failure() {
    let bad = scratch("bad.json");
    std::fs::write(&bad, r#"{"model": "nowhere.urdf", "duration": 1}"#).unwrap();
    let r = retarget(&[
        "run",
        bad.to_str().unwrap(),
        "--out",
        scratch("x.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(1));
    assert!(text(&r.stderr).starts_with("error:"));
}

#[test]
fn serve_records_a_log_that_replays() {
    let log = scratch("serve_log.jsonl");
    let trace = scratch("serve_trace.jsonl");
    let r = retarget(&[
        "serve",
        "--scenario",
        scenarios_dir().join("reach_dual_arm.json").to_str().unwrap(),
        "--port",
        "0",
        "--duration",
        "0.5",
        "--record-log",
        log.to_str().unwrap(),
        "--record-trace",
        trace.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", text(&r.stderr));
    assert!(text(&r.stdout).contains("serving on ws://127.0.0.1:"));
    let replayed = scratch("replayed.jsonl");
    let p = retarget(&["replay", log.to_str().unwrap(), "--out", replayed.to_str().unwrap()]);
    assert!(p.status.success(), "{}", text(&p.stderr));
    let n = std::fs::read_to_string(&replayed).unwrap().lines().count();
    assert_eq!(n, std::fs::read_to_string(&trace).unwrap().lines().count());
}
