//! Operator command conditioning and the admittance offset.
//!
//! A raw teleoperation target passes through a first-order low-pass, a
//! velocity clamp and an acceleration clamp, in that order. The velocity
//! clamp also keeps the speed low enough to brake at the acceleration cap
//! before the target, so a step command does not overshoot. Measured
//! external wrenches are turned into an effector-local velocity and
//! integrated into a bounded relative offset, which is composed on top of
//! the filtered command.

use serde::{Deserialize, Serialize};

use crate::geometry::{pose_error_log, pose_integrate, quat_exp, quat_log, Pose, Twist, Vec3, Wrench};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    /// Low-pass cutoff in Hz.
    pub cutoff: f64,
    pub v_max_linear: f64,
    pub v_max_angular: f64,
    pub a_max_linear: f64,
    pub a_max_angular: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            cutoff: 2.0,
            v_max_linear: 0.3,
            v_max_angular: 1.0,
            a_max_linear: 1.0,
            a_max_angular: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    pub filtered: Pose,
    pub velocity: Twist,
    pub params: FilterParams,
}

impl FilterState {
    pub fn new(start: Pose, params: FilterParams) -> Self {
        Self {
            filtered: start,
            velocity: Twist::zero(),
            params,
        }
    }
}

fn clamp_norm(v: Vec3, max: f64) -> Vec3 {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// One tick of low-pass, velocity clamp and acceleration clamp.
pub fn filter_tick(fs: &FilterState, raw_target: &Pose, dt: f64) -> FilterState {
    assert!(dt > 0.0, "filter_tick needs a positive time step");
    let p = &fs.params;
    let alpha = dt / (1.0 / (2.0 * std::f64::consts::PI * p.cutoff) + dt);
    let full = pose_error_log(&fs.filtered, raw_target);
    let wanted = Twist::from_vector(&(full * (alpha / dt)));
    let remaining = Twist::from_vector(&full);
    // Largest speed v whose braking distance at the acceleration cap,
    // v²/2a + v·dt/2 in steps of a·dt, still fits in the remaining d.
    let braking = |d: f64, a_max: f64| a_max * ((0.25 * dt * dt + 2.0 * d / a_max).sqrt() - 0.5 * dt);
    let capped = Twist::new(
        clamp_norm(
            wanted.linear,
            p.v_max_linear.min(braking(remaining.linear.norm(), p.a_max_linear)),
        ),
        clamp_norm(
            wanted.angular,
            p.v_max_angular.min(braking(remaining.angular.norm(), p.a_max_angular)),
        ),
    );
    let prev = fs.velocity;
    let velocity = Twist::new(
        prev.linear + clamp_norm(capped.linear - prev.linear, p.a_max_linear * dt),
        prev.angular + clamp_norm(capped.angular - prev.angular, p.a_max_angular * dt),
    );
    FilterState {
        filtered: pose_integrate(&fs.filtered, &velocity, dt),
        velocity,
        params: fs.params,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmittanceParams {
    /// m/s per N.
    pub gain_linear: f64,
    /// rad/s per N·m.
    pub gain_angular: f64,
    pub deadband_force: f64,
    pub deadband_torque: f64,
    pub v_max_linear: f64,
    pub v_max_angular: f64,
    /// 1/s.
    pub leak: f64,
    pub radius_linear: f64,
    pub radius_angular: f64,
}

impl Default for AdmittanceParams {
    fn default() -> Self {
        Self {
            gain_linear: 1e-3,
            gain_angular: 5e-3,
            deadband_force: 5.0,
            deadband_torque: 0.5,
            v_max_linear: 0.3,
            v_max_angular: 1.0,
            leak: 0.1,
            radius_linear: 0.5,
            radius_angular: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmittanceState {
    /// Relative reference, expressed in the command frame.
    pub offset: Pose,
    /// Last commanded offset velocity, command-local.
    pub velocity: Twist,
    pub params: AdmittanceParams,
}

impl AdmittanceState {
    pub fn new(params: AdmittanceParams) -> Self {
        Self {
            offset: Pose::identity(),
            velocity: Twist::zero(),
            params,
        }
    }
}

/// `v · max(0, 1 − deadband/|v|)`: zero inside the band, continuous at its edge.
fn deadband_shrink(v: Vec3, band: f64) -> Vec3 {
    let n = v.norm();
    if n <= band {
        Vec3::zeros()
    } else {
        v * (1.0 - band / n)
    }
}

pub fn admittance_tick(adm: &AdmittanceState, measured: &Wrench, dt: f64) -> AdmittanceState {
    assert!(dt > 0.0, "admittance_tick needs a positive time step");
    let p = &adm.params;
    let lin = clamp_norm(
        deadband_shrink(measured.force, p.deadband_force) * p.gain_linear,
        p.v_max_linear,
    );
    let ang = clamp_norm(
        deadband_shrink(measured.torque, p.deadband_torque) * p.gain_angular,
        p.v_max_angular,
    );
    // Local increment: offset ∘ (v dt, exp(ω dt)).
    let step = Pose::new(lin * dt, quat_exp(&(ang * dt)));
    let mut offset = adm.offset.compose(&step);

    let decay = (1.0 - p.leak * dt).max(0.0);
    if measured.force.norm() <= p.deadband_force {
        offset.position *= decay;
    }
    let rv0 = quat_log(&offset.orientation);
    let mut rv = rv0;
    if measured.torque.norm() <= p.deadband_torque {
        rv *= decay;
    }
    offset.position = clamp_norm(offset.position, p.radius_linear);
    rv = clamp_norm(rv, p.radius_angular);
    if rv != rv0 {
        offset.orientation = quat_exp(&rv);
    }
    AdmittanceState {
        offset,
        velocity: Twist::new(lin, ang),
        params: adm.params,
    }
}

/// `teleop ∘ offset`: the offset acts in the teleop target's frame.
pub fn compose_command(teleop: &Pose, adm: &AdmittanceState) -> Pose {
    teleop.compose(&adm.offset)
}
