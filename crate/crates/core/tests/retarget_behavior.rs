//! Loop behavior on the dual-arm and biped fixtures.

use proptest::prelude::*;
use retarget_core::geometry::{Pose, Vec3};
use retarget_core::retarget::{converge, limit_margins, step, EffectorCommand, RetargetConfig, RetargetState};
use retarget_core::simulate::{Scenario, Session};
use retarget_core::{scenarios_dir, Error};

fn session(name: &str) -> Session {
    Scenario::load(&scenarios_dir().join(format!("{name}.json")))
        .unwrap()
        .session()
        .unwrap()
}

fn weight(s: &Session) -> f64 {
    s.model().total_mass() * s.model().gravity.norm()
}

/// Joint, torque and contact margins all at or above `floor`.
fn feasible(s: &Session, state: &RetargetState, floor: f64) -> Result<(), String> {
    for m in state
        .margins
        .iter()
        .chain(limit_margins(s.model(), state, s.config()).iter())
    {
        if m.value < floor {
            return Err(format!("{} = {:e}", m.name, m.value));
        }
    }
    Ok(())
}

#[test]
fn reach_error_strictly_decreases() {
    let s = session("reach_dual_arm");
    let mut state = s.state().clone();
    let mut target = state.frame_pose(s.model(), "left_hand").unwrap();
    target.position += Vec3::new(0.0, 0.0, 0.05);
    let cmd = [EffectorCommand::new("left_hand", target)];
    let mut last = f64::INFINITY;
    for k in 0..50 {
        state = step(s.model(), &state, &cmd, s.config()).unwrap().state;
        let e = (state.frame_pose(s.model(), "left_hand").unwrap().position - target.position).norm();
        assert!(e < last, "error rose at step {k}: {e} after {last}");
        last = e;
    }
    assert!(last < 0.05);
}

#[test]
fn far_target_keeps_the_biped_bounded_and_feasible() {
    let s = session("standing_biped");
    let mut state = s.state().clone();
    let start = state.cfg.base_pose;
    let mut target = state.frame_pose(s.model(), "left_hand").unwrap();
    target.position += Vec3::new(10.0, 0.0, 0.0);
    let cmd = [EffectorCommand::new("left_hand", target)];
    for k in 0..2000 {
        let out = step(s.model(), &state, &cmd, s.config()).unwrap();
        assert!(!out.soft_failure, "soft failure at step {k}");
        state = out.state;
        feasible(&s, &state, -1e-6).unwrap_or_else(|e| panic!("step {k}: {e}"));
    }
    assert!((state.cfg.base_pose.position - start.position).norm() < 0.5);
    assert!(state.base_residual.norm() <= 1e-6 * (1.0 + weight(&s)));
}

#[test]
fn commanding_current_poses_is_a_fixed_point() {
    let s = session("standing_biped");
    let state = s.state();
    let cmd: Vec<EffectorCommand> = ["left_hand", "right_hand"]
        .iter()
        .map(|f| EffectorCommand::new(*f, state.frame_pose(s.model(), f).unwrap()))
        .collect();
    let out = step(s.model(), state, &cmd, s.config()).unwrap();
    assert!(out.rate.amax() <= 1e-9, "‖ẋ‖∞ = {:e}", out.rate.amax());
}

#[test]
fn standing_biped_converges_within_300_iterations() {
    let sc = Scenario::load(&scenarios_dir().join("standing_biped.json")).unwrap();
    let model = sc.load_model().unwrap();
    let cfg = sc.initial_configuration(&model).unwrap();
    let contacts = retarget_core::contacts::ContactSet::new(
        &model,
        sc.contacts.iter().map(|c| (c.spec.clone(), c.enabled)).collect(),
    )
    .unwrap();
    let state = RetargetState::new(&model, cfg, contacts).unwrap();
    let config = sc.retarget_config();
    let out = converge(&model, &state, &[], &config, 1e-4, 300).unwrap();
    assert!(out.converged, "stopped after {} iterations", out.iterations);
    let w = model.total_mass() * model.gravity.norm();
    assert!(out.state.base_residual.norm() <= 1e-6 * (1.0 + w));
    assert!(out.state.min_margin().unwrap() > 0.0);

    // Already converged: one more call stops at once.
    let again = converge(&model, &out.state, &[], &config, 1e-4, 300).unwrap();
    assert!(again.converged);
    assert_eq!(again.iterations, 1);
}

/// Converged `‖τ‖²` of the biped leaning on both hands.
fn converged_torque(w_torque: f64) -> f64 {
    let sc = Scenario::load(&scenarios_dir().join("hand_removal.json")).unwrap();
    let model = sc.load_model().unwrap();
    let cfg = sc.initial_configuration(&model).unwrap();
    let contacts = retarget_core::contacts::ContactSet::new(
        &model,
        sc.contacts.iter().map(|c| (c.spec.clone(), c.enabled)).collect(),
    )
    .unwrap();
    let state = RetargetState::new(&model, cfg, contacts).unwrap();
    let config = RetargetConfig {
        w_torque,
        ..sc.retarget_config()
    };
    let out = converge(&model, &state, &[], &config, 1e-9, 5000).unwrap();
    assert!(out.converged, "w_torque={w_torque}: not converged");
    out.state.tau.norm_squared()
}

#[test]
fn torque_minimization_lowers_converged_torque() {
    let with = converged_torque(RetargetConfig::default().w_torque);
    let without = converged_torque(0.0);
    assert!(
        with <= 0.99 * without,
        "‖τ‖² {with} vs {without} without the torque term"
    );
}

#[test]
fn switch_on_a_frame_without_contact_is_an_error() {
    let mut s = session("standing_biped");
    let err = s
        .switch("left_hand", retarget_core::contacts::SwitchAction::Add, None)
        .unwrap_err();
    assert!(matches!(err, Error::InvalidContact { .. }));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    /// Every step from a feasible state lands feasible, wherever the hands
    /// are pulled.
    #[test]
    fn steps_stay_feasible(
        dl in prop::array::uniform3(-0.6f64..0.6),
        dr in prop::array::uniform3(-0.6f64..0.6),
        yaw in -1.0f64..1.0,
    ) {
        let s = session("standing_biped");
        let mut state = s.state().clone();
        let mut cmd = Vec::new();
        for (frame, d) in [("left_hand", dl), ("right_hand", dr)] {
            let p = state.frame_pose(s.model(), frame).unwrap();
            let target = Pose::new(p.position + Vec3::from(d), p.orientation * Pose::rot_z(yaw).orientation);
            cmd.push(EffectorCommand::new(frame, target));
        }
        for k in 0..40 {
            let out = step(s.model(), &state, &cmd, s.config()).unwrap();
            prop_assert!(!out.soft_failure, "soft failure at step {}", k);
            state = out.state;
            let check = feasible(&s, &state, -1e-6);
            prop_assert!(check.is_ok(), "step {}: {:?}", k, check);
            prop_assert!(state.base_residual.norm() <= 1e-6 * (1.0 + weight(&s)));
        }
    }
}
