//! Shipped scenarios, trace files and trace verification.

use std::path::{Path, PathBuf};

use retarget_core::contacts::ContactPhase;
use retarget_core::geometry::Vec3;
use retarget_core::simulate::{run_scenario, verify_trace, Scenario, SessionEvent, Thresholds, Trace};
use retarget_core::{scenarios_dir, Error};

fn load(name: &str) -> Scenario {
    Scenario::load(&scenarios_dir().join(format!("{name}.json"))).unwrap()
}

fn run(name: &str) -> Trace {
    run_scenario(&load(name)).unwrap()
}

fn shipped() -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(scenarios_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    out.sort();
    out
}

#[test]
fn every_shipped_scenario_verifies() {
    let files = shipped();
    assert!(files.len() >= 10);
    for path in files {
        let s = Scenario::load(&path).unwrap();
        let trace = run_scenario(&s).unwrap();
        assert_eq!(trace.records.len(), s.ticks());
        let report = verify_trace(&trace, &Thresholds::default()).unwrap();
        assert!(report.passed, "{}: {:?}", path.display(), report.failures);
        assert_eq!(report.soft_failures, 0, "{}", path.display());
    }
}

#[test]
fn standing_holds_its_fixed_point() {
    let trace = run("standing_biped");
    let first = &trace.records[0];
    for r in &trace.records {
        assert!(r.residual_norm <= 1e-6);
        let dq = r
            .joint_positions
            .iter()
            .zip(&first.joint_positions)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dq <= 1e-9, "t={}: joints moved by {dq:e}", r.t);
        let (dp, dr) = r.base_pose.distance(&first.base_pose);
        assert!(dp <= 1e-9 && dr <= 1e-9);
    }
    let report = verify_trace(&trace, &Thresholds::default()).unwrap();
    assert!(report.min_margin.unwrap().value > 0.0);
    assert!(report.max_residual.value <= 1e-6);
}

#[test]
fn reach_ends_on_target() {
    let s = load("reach_dual_arm");
    let session = s.session().unwrap();
    let target = session
        .state()
        .frame_pose(session.model(), "left_hand")
        .unwrap()
        .position
        + Vec3::new(0.3, 0.0, 0.0);
    let trace = run_scenario(&s).unwrap();
    let last = trace.records.last().unwrap();
    let err = (last.effectors["left_hand"].position - target).norm();
    assert!(err <= 1e-3, "final hand error {err}");
}

#[test]
fn hand_removal_ramps_smoothly() {
    let trace = run("hand_removal");
    let report = verify_trace(&trace, &Thresholds::default()).unwrap();
    let ramp = report
        .ramps
        .iter()
        .find(|r| r.frame == "right_hand")
        .expect("ramp recorded");
    assert!(ramp.max_fz_increase <= 1e-3);
    assert!(ramp.fz_at_release.unwrap() <= 1.0);
    assert!(ramp.min_other_margin.unwrap() >= -1e-6);
    let ticks = ramp.last_record - ramp.first_record + 1;
    assert!((395..=405).contains(&ticks), "ramp lasted {ticks} ticks");
    let events: Vec<&SessionEvent> = trace.records.iter().flat_map(|r| &r.events).collect();
    assert!(events
        .iter()
        .any(|e| matches!(e, SessionEvent::SwitchStarted { frame, .. } if frame == "right_hand")));
    assert!(events
        .iter()
        .any(|e| matches!(e, SessionEvent::SwitchCompleted { frame, .. } if frame == "right_hand")));
    let hand = trace
        .header
        .contact_frames
        .iter()
        .position(|f| f == "right_hand")
        .unwrap();
    assert_eq!(
        trace.records.last().unwrap().contacts[hand].phase,
        ContactPhase::Disabled
    );
}

#[test]
fn unsafe_foot_removal_is_rejected() {
    let trace = run("foot_removal_rejected");
    let rejected = trace
        .records
        .iter()
        .flat_map(|r| &r.events)
        .any(|e| matches!(e, SessionEvent::SwitchRejected { frame, .. } if frame == "left_foot"));
    assert!(rejected);
    assert!(trace
        .records
        .iter()
        .all(|r| r.contacts.iter().all(|c| c.phase == ContactPhase::Enabled)));
}

#[test]
fn push_displaces_the_hand_through_the_admittance() {
    let trace = run("push_dual_arm");
    let z = |t: f64| {
        let r = trace.records.iter().find(|r| r.t >= t - 1e-9).unwrap();
        r.effectors["left_hand"].position.z
    };
    let before = z(0.5);
    assert!(z(1.5) - before > 5e-3, "hand rose only {}", z(1.5) - before);
    // The offset leaks away once the push ends.
    assert!(z(4.0) < z(1.5));
}

#[test]
fn boundary_run_stays_bounded_with_an_active_inequality() {
    let trace = run("boundary_10m");
    let report = verify_trace(&trace, &Thresholds::default()).unwrap();
    assert!(report.passed, "{:?}", report.failures);
    let last = trace.records.last().unwrap();
    let tightest = last
        .margins
        .iter()
        .chain(&last.limit_margins)
        .map(|m| m.value)
        .fold(f64::INFINITY, f64::min);
    assert!(tightest <= 1e-3, "no active inequality at the end ({tightest})");
    assert!(last.base_pose.position.norm() < 1.0);
}

#[test]
fn runs_are_bit_reproducible() {
    for name in ["hand_removal", "velocity_saturation", "push_dual_arm"] {
        let a = run(name).without_timing().to_jsonl();
        let b = run(name).without_timing().to_jsonl();
        assert!(a == b, "{name}: traces differ");
    }
}

#[test]
fn jsonl_round_trips() {
    let trace = run("hand_removal");
    let text = trace.to_jsonl();
    assert_eq!(text.lines().count(), trace.records.len() + 1);
    let back = Trace::read_jsonl(text.as_bytes()).unwrap();
    assert_eq!(back.header, trace.header);
    assert_eq!(back.records.len(), trace.records.len());
    // Poses are written with a canonical quaternion sign, so compare the text.
    assert!(back.to_jsonl() == text);
    for (a, b) in back.records.iter().zip(&trace.records) {
        assert_eq!(a.joint_positions, b.joint_positions);
        assert_eq!(a.lambda, b.lambda);
        assert_eq!(a.margins, b.margins);
    }
}

#[test]
fn negative_margin_is_reported_with_its_record() {
    let mut trace = run("standing_biped");
    trace.records[7].margins[3].value = -0.01;
    let report = verify_trace(&trace, &Thresholds::default()).unwrap();
    assert!(!report.passed);
    let f = report.failures.iter().find(|f| f.check == "margin").unwrap();
    assert_eq!(f.record, 7);
    assert_eq!(report.min_margin.unwrap().record, 7);
}

#[test]
fn rising_force_during_a_ramp_is_flagged() {
    let mut trace = run("hand_removal");
    let hand = trace
        .header
        .contact_frames
        .iter()
        .position(|f| f == "right_hand")
        .unwrap();
    let mid = trace
        .records
        .iter()
        .position(|r| r.contacts[hand].phase == ContactPhase::RampingOut)
        .unwrap()
        + 100;
    trace.records[mid].contacts[hand].wrench[2] += 0.5;
    let report = verify_trace(&trace, &Thresholds::default()).unwrap();
    assert!(report.failures.iter().any(|f| f.check == "ramp_monotone"));
}

#[test]
fn empty_trace_is_an_error() {
    let mut trace = run("oracle_box_plane");
    trace.records.clear();
    assert!(matches!(
        verify_trace(&trace, &Thresholds::default()),
        Err(Error::EmptyTrace)
    ));
}

fn from_text(text: &str) -> retarget_core::Result<()> {
    let s = Scenario::from_json(text, &scenarios_dir())?;
    let model = s.load_model()?;
    s.validate(&model)
}

#[test]
fn scenario_validation() {
    let base = r#""model": "../fixtures/dual_arm.urdf", "duration": 1.0"#;
    assert!(from_text(&format!("{{{base}}}")).is_ok());
    assert!(from_text(&format!(r#"{{{base}, "initial": {{"joints": {{"knee": 1}}}}}}"#)).is_err());
    assert!(from_text(&format!(r#"{{{base}, "record_frames": ["nose"]}}"#)).is_err());
    assert!(from_text(&format!(r#"{{{base}, "rate": 0}}"#)).is_err());
    assert!(from_text(&format!(r#"{{{base}, "initial": {{"ground_frame": "left_hand"}}}}"#)).is_err());
    let unsorted = r#"[
        {"t": 1.0, "event": {"type": "shift_target", "frame": "left_hand", "translation": [0, 0, 0.1]}},
        {"t": 0.5, "event": {"type": "shift_target", "frame": "left_hand", "translation": [0, 0, 0.1]}}
    ]"#;
    assert!(from_text(&format!(r#"{{{base}, "timeline": {unsorted}}}"#)).is_err());
    assert!(from_text(&format!(r#"{{{base}, "speed": 2}}"#)).is_err());
    assert!(Scenario::load(Path::new("/nonexistent/scenario.json")).is_err());
}
