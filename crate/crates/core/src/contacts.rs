//! Contact stability: no pulling, no slipping, no tilting.
//!
//! Wrenches are contact-local with z along the outward surface normal.
//! Plane contacts carry `(fx, fy, fz, τx, τy, τz)`, point contacts
//! `(fx, fy, fz)`. Each stability condition is a signed margin, positive
//! when satisfied, and every margin is linear (or an absolute value of a
//! linear form) in the wrench.

use std::f64::consts::SQRT_2;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::model::RobotModel;

/// Default switching ramp length, seconds.
pub const DEFAULT_RAMP_DURATION: f64 = 2.0;
/// Position gate for adding a contact, meters.
pub const ADD_GATE_POSITION: f64 = 0.01;
/// Orientation gate for adding a plane contact, radians.
pub const ADD_GATE_ANGLE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactKind {
    Plane,
    Point,
}

impl ContactKind {
    pub fn wrench_dim(self) -> usize {
        match self {
            ContactKind::Plane => 6,
            ContactKind::Point => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactSpec {
    pub frame: String,
    pub kind: ContactKind,
    pub mu: f64,
    /// Half sizes `(X, Y)` of the support rectangle, plane contacts only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cop_half_extents: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_torsion: Option<f64>,
    #[serde(default)]
    pub f_min: f64,
    pub f_max: f64,
    /// World pose of the surface the effector must reach before the
    /// contact can be added. Without it the current effector pose is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<Pose>,
}

impl ContactSpec {
    pub fn point(frame: &str, mu: f64, f_max: f64) -> Self {
        Self {
            frame: frame.into(),
            kind: ContactKind::Point,
            mu,
            cop_half_extents: None,
            mu_torsion: None,
            f_min: 0.0,
            f_max,
            surface: None,
        }
    }

    pub fn plane(frame: &str, mu: f64, half_x: f64, half_y: f64, mu_torsion: f64, f_max: f64) -> Self {
        Self {
            frame: frame.into(),
            kind: ContactKind::Plane,
            mu,
            cop_half_extents: Some([half_x, half_y]),
            mu_torsion: Some(mu_torsion),
            f_min: 0.0,
            f_max,
            surface: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Error::InvalidContact {
            frame: self.frame.clone(),
            msg,
        };
        if !(self.mu > 0.0) {
            return Err(bad(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max) {
            return Err(bad(format!(
                "need 0 <= f_min < f_max, got f_min={} f_max={}",
                self.f_min, self.f_max
            )));
        }
        if self.kind == ContactKind::Plane {
            match self.cop_half_extents {
                Some([x, y]) if x > 0.0 && y > 0.0 => {}
                _ => return Err(bad("plane contact needs positive cop_half_extents".into())),
            }
            match self.mu_torsion {
                Some(m) if m >= 0.0 => {}
                _ => return Err(bad("plane contact needs a non-negative mu_torsion".into())),
            }
        }
        Ok(())
    }

    /// Linear forms `(coefficients, constant)` of every margin row, with
    /// absolute values split into two rows. `f_min`/`cap` are the effective
    /// normal-force bounds.
    fn margin_forms(&self, f_min: f64, cap: f64) -> Vec<(&'static str, [f64; 6], f64)> {
        let k = self.mu / SQRT_2;
        let mut rows = vec![
            ("unilateral", [0.0, 0.0, 1.0, 0.0, 0.0, 0.0], -f_min),
            ("pyramid_x", [-1.0, 0.0, k, 0.0, 0.0, 0.0], 0.0),
            ("pyramid_x", [1.0, 0.0, k, 0.0, 0.0, 0.0], 0.0),
            ("pyramid_y", [0.0, -1.0, k, 0.0, 0.0, 0.0], 0.0),
            ("pyramid_y", [0.0, 1.0, k, 0.0, 0.0, 0.0], 0.0),
        ];
        if self.kind == ContactKind::Plane {
            let [hx, hy] = self.cop_half_extents.unwrap_or([0.0, 0.0]);
            let mt = self.mu_torsion.unwrap_or(0.0);
            rows.extend([
                ("cop_x", [0.0, 0.0, hy, -1.0, 0.0, 0.0], 0.0),
                ("cop_x", [0.0, 0.0, hy, 1.0, 0.0, 0.0], 0.0),
                ("cop_y", [0.0, 0.0, hx, 0.0, -1.0, 0.0], 0.0),
                ("cop_y", [0.0, 0.0, hx, 0.0, 1.0, 0.0], 0.0),
                ("torsion", [0.0, 0.0, mt, 0.0, 0.0, -1.0], 0.0),
                ("torsion", [0.0, 0.0, mt, 0.0, 0.0, 1.0], 0.0),
            ]);
        }
        rows.push(("cap", [0.0, 0.0, -1.0, 0.0, 0.0, 0.0], cap));
        rows
    }
}

/// Named signed margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub name: String,
    pub value: f64,
}

/// Stability margins against the spec's own `f_min`/`f_max`.
pub fn contact_margins(spec: &ContactSpec, w: &[f64]) -> Result<Vec<(&'static str, f64)>> {
    margins_with_bounds(spec, w, spec.f_min, spec.f_max)
}

/// Margins with explicit normal-force bounds, as used during ramps.
pub fn margins_with_bounds(spec: &ContactSpec, w: &[f64], f_min: f64, cap: f64) -> Result<Vec<(&'static str, f64)>> {
    let dim = spec.kind.wrench_dim();
    if w.len() != dim {
        return Err(Error::Dimension {
            what: "contact wrench",
            expected: dim,
            got: w.len(),
        });
    }
    let forms = spec.margin_forms(f_min, cap);
    let mut out: Vec<(&'static str, f64)> = Vec::new();
    for (name, a, b) in forms {
        let v = a.iter().zip(w).map(|(ai, wi)| ai * wi).sum::<f64>() + b;
        // Split rows of the same name are the two sides of |·|.
        match out.last_mut() {
            Some(last) if last.0 == name => last.1 = last.1.min(v),
            _ => out.push((name, v)),
        }
    }
    Ok(out)
}

/// Linear inequality rows `coeffs · ẇ + constants ≥ 0` over one contact's
/// wrench-rate entries.
#[derive(Debug, Clone)]
pub struct InequalityRows {
    pub names: Vec<&'static str>,
    pub coeffs: DMatrix<f64>,
    pub constants: DVector<f64>,
}

/// Rows enforcing every margin on the post-integration wrench `w + ẇ·dt`.
/// The normal-force cap comes from the switching state.
pub fn contact_inequality_rows(spec: &ContactSpec, state: &ContactState, w: &[f64], dt: f64) -> InequalityRows {
    let (f_min, cap) = state.force_bounds(spec);
    let dim = spec.kind.wrench_dim();
    let forms = spec.margin_forms(f_min, cap);
    let mut coeffs = DMatrix::zeros(forms.len(), dim);
    let mut constants = DVector::zeros(forms.len());
    let mut names = Vec::with_capacity(forms.len());
    for (r, (name, a, b)) in forms.into_iter().enumerate() {
        let mut c = b;
        for i in 0..dim {
            coeffs[(r, i)] = a[i] * dt;
            c += a[i] * w[i];
        }
        constants[r] = c;
        names.push(name);
    }
    InequalityRows {
        names,
        coeffs,
        constants,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactPhase {
    Disabled,
    RampingIn,
    Enabled,
    RampingOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchAction {
    Add,
    Remove,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactState {
    pub phase: ContactPhase,
    pub ramp_elapsed: f64,
    pub ramp_duration: f64,
    /// Normal-force bound at ramp start.
    pub captured_bound: f64,
    /// Bound reached at ramp end.
    pub ramp_target: f64,
}

impl ContactState {
    pub fn enabled() -> Self {
        Self {
            phase: ContactPhase::Enabled,
            ramp_elapsed: 0.0,
            ramp_duration: DEFAULT_RAMP_DURATION,
            captured_bound: 0.0,
            ramp_target: 0.0,
        }
    }

    pub fn disabled() -> Self {
        Self {
            phase: ContactPhase::Disabled,
            ..Self::enabled()
        }
    }

    pub fn is_active(&self) -> bool {
        self.phase != ContactPhase::Disabled
    }

    /// Current upper bound on the normal force.
    pub fn current_bound(&self, spec: &ContactSpec) -> f64 {
        match self.phase {
            ContactPhase::Disabled => 0.0,
            ContactPhase::Enabled => spec.f_max,
            ContactPhase::RampingIn | ContactPhase::RampingOut => {
                let s = if self.ramp_duration > 0.0 {
                    (self.ramp_elapsed / self.ramp_duration).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                self.captured_bound + (self.ramp_target - self.captured_bound) * s
            }
        }
    }

    /// Effective `(f_min, cap)`. While ramping, `f_min` never exceeds the cap.
    pub fn force_bounds(&self, spec: &ContactSpec) -> (f64, f64) {
        let cap = self.current_bound(spec);
        match self.phase {
            ContactPhase::Enabled => (spec.f_min, cap),
            _ => (spec.f_min.min(cap), cap),
        }
    }
}

pub fn switch_begin(
    spec: &ContactSpec,
    state: &ContactState,
    action: SwitchAction,
    duration: f64,
    current_fz: f64,
) -> Result<ContactState> {
    if !(duration >= 0.0) {
        return Err(Error::IllegalTransition(format!("negative ramp duration {duration}")));
    }
    match (action, state.phase) {
        (SwitchAction::Add, ContactPhase::Disabled) => Ok(ContactState {
            phase: ContactPhase::RampingIn,
            ramp_elapsed: 0.0,
            ramp_duration: duration,
            captured_bound: 0.0,
            ramp_target: spec.f_max,
        }),
        (SwitchAction::Remove, ContactPhase::Enabled) => Ok(ContactState {
            phase: ContactPhase::RampingOut,
            ramp_elapsed: 0.0,
            ramp_duration: duration,
            captured_bound: current_fz.max(0.0),
            ramp_target: 0.0,
        }),
        (a, p) => Err(Error::IllegalTransition(format!(
            "cannot {} contact `{}` in phase {:?}",
            match a {
                SwitchAction::Add => "add",
                SwitchAction::Remove => "remove",
            },
            spec.frame,
            p
        ))),
    }
}

/// Advances a ramp; returns the new state and the normal-force bound at
/// the new elapsed time. Non-ramping states pass through unchanged.
pub fn switch_tick(spec: &ContactSpec, state: &ContactState, dt: f64) -> (ContactState, f64) {
    let mut s = *state;
    match s.phase {
        ContactPhase::RampingIn | ContactPhase::RampingOut => {
            s.ramp_elapsed = (s.ramp_elapsed + dt).min(s.ramp_duration);
            // Snap the last partial tick.
            if s.ramp_duration - s.ramp_elapsed <= 1e-9 * s.ramp_duration.max(1.0) {
                s.ramp_elapsed = s.ramp_duration;
                s.phase = if s.phase == ContactPhase::RampingIn {
                    ContactPhase::Enabled
                } else {
                    ContactPhase::Disabled
                };
                let bound = s.ramp_target;
                return (s, bound);
            }
            let bound = s.current_bound(spec);
            (s, bound)
        }
        _ => (s, s.current_bound(spec)),
    }
}

/// Add gate: the effector must sit on the surface.
pub fn check_add_alignment(kind: ContactKind, current: &Pose, surface: &Pose) -> Result<()> {
    let (dp, dr) = current.distance(surface);
    let ok = dp < ADD_GATE_POSITION && (kind == ContactKind::Point || dr < ADD_GATE_ANGLE);
    if ok {
        Ok(())
    } else {
        Err(Error::IllegalTransition(format!(
            "effector is {:.4} m / {:.4} rad from the contact surface",
            dp, dr
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactEntry {
    pub spec: ContactSpec,
    pub state: ContactState,
    pub frame_id: usize,
    /// World pose the contact frame is held at while active.
    pub anchor: Option<Pose>,
}

/// Placement of one active contact inside the wrench vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveContact {
    pub index: usize,
    pub frame_id: usize,
    pub kind: ContactKind,
    pub offset: usize,
}

impl ActiveContact {
    pub fn dim(&self) -> usize {
        self.kind.wrench_dim()
    }
}

/// Ordered contacts. Only non-disabled entries occupy wrench entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSet {
    pub entries: Vec<ContactEntry>,
}

impl ContactSet {
    pub fn new(model: &RobotModel, specs: Vec<(ContactSpec, bool)>) -> Result<Self> {
        let mut entries = Vec::with_capacity(specs.len());
        for (spec, enabled) in specs {
            spec.validate()?;
            let frame_id = model.frame_id(&spec.frame)?;
            if entries.iter().any(|e: &ContactEntry| e.spec.frame == spec.frame) {
                return Err(Error::InvalidContact {
                    frame: spec.frame.clone(),
                    msg: "declared twice".into(),
                });
            }
            entries.push(ContactEntry {
                spec,
                state: if enabled {
                    ContactState::enabled()
                } else {
                    ContactState::disabled()
                },
                frame_id,
                anchor: None,
            });
        }
        Ok(Self { entries })
    }

    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn layout(&self) -> Vec<ActiveContact> {
        let mut offset = 0;
        let mut out = Vec::new();
        for (index, e) in self.entries.iter().enumerate() {
            if e.state.is_active() {
                out.push(ActiveContact {
                    index,
                    frame_id: e.frame_id,
                    kind: e.spec.kind,
                    offset,
                });
                offset += e.spec.kind.wrench_dim();
            }
        }
        out
    }

    pub fn wrench_dim(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.state.is_active())
            .map(|e| e.spec.kind.wrench_dim())
            .sum()
    }

    pub fn index_of(&self, frame: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.spec.frame == frame)
    }

    /// Wrench of contact `index` inside `lambda`, if active.
    pub fn wrench_of<'a>(&self, lambda: &'a DVector<f64>, index: usize) -> Option<&'a [f64]> {
        self.layout()
            .into_iter()
            .find(|a| a.index == index)
            .map(|a| &lambda.as_slice()[a.offset..a.offset + a.dim()])
    }

    /// Named margins of every active contact, in set order, against the
    /// current ramp bounds.
    pub fn margins(&self, lambda: &DVector<f64>) -> Vec<Margin> {
        let mut out = Vec::new();
        for a in self.layout() {
            let e = &self.entries[a.index];
            let (f_min, cap) = e.state.force_bounds(&e.spec);
            let w = &lambda.as_slice()[a.offset..a.offset + a.dim()];
            if let Ok(ms) = margins_with_bounds(&e.spec, w, f_min, cap) {
                out.extend(ms.into_iter().map(|(n, v)| Margin {
                    name: format!("{}/{}", e.spec.frame, n),
                    value: v,
                }));
            }
        }
        out
    }
}

/// Carries wrench entries of contacts present in both layouts over to the
/// new layout; new contacts start at zero.
pub fn remap_wrenches(old: &[ActiveContact], new: &[ActiveContact], lambda: &DVector<f64>) -> DVector<f64> {
    let dim: usize = new.iter().map(|a| a.dim()).sum();
    let mut out = DVector::zeros(dim);
    for n in new {
        if let Some(o) = old.iter().find(|o| o.index == n.index) {
            for i in 0..n.dim() {
                out[n.offset + i] = lambda[o.offset + i];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn margin(ms: &[(&str, f64)], name: &str) -> f64 {
        ms.iter().find(|m| m.0 == name).unwrap().1
    }

    #[test]
    fn margin_examples() {
        let spec = ContactSpec::point("p", 0.5, 1000.0);
        let ms = contact_margins(&spec, &[10.0, 0.0, 100.0]).unwrap();
        assert_relative_eq!(margin(&ms, "pyramid_x"), 0.5 / SQRT_2 * 100.0 - 10.0, epsilon = 1e-12);
        assert_relative_eq!(margin(&ms, "pyramid_x"), 25.355339059327378, epsilon = 1e-12);

        let mut spec = ContactSpec::point("p", 0.5, 1000.0);
        spec.f_min = 5.0;
        let ms = contact_margins(&spec, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(margin(&ms, "unilateral"), -5.0);

        let spec = ContactSpec::plane("f", 0.5, 0.1, 0.05, 0.1, 1000.0);
        let ms = contact_margins(&spec, &[0.0, 0.0, 100.0, 6.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(margin(&ms, "cop_x"), -1.0, epsilon = 1e-12);
        assert!(contact_margins(&spec, &[0.0; 3]).is_err());
    }

    #[test]
    fn unilateral_row_layout() {
        let mut spec = ContactSpec::point("p", 0.5, 1000.0);
        spec.f_min = 2.0;
        let rows = contact_inequality_rows(&spec, &ContactState::enabled(), &[1.0, 2.0, 30.0], 0.01);
        assert_eq!(rows.names[0], "unilateral");
        assert_eq!(
            rows.coeffs.row(0).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 0.0, 0.01]
        );
        assert_eq!(rows.constants[0], 28.0);
    }

    #[test]
    fn interior_wrench_admits_zero_rate() {
        let spec = ContactSpec::plane("f", 0.7, 0.1, 0.05, 0.1, 1000.0);
        let w = [1.0, -2.0, 200.0, 0.5, -0.3, 0.1];
        let rows = contact_inequality_rows(&spec, &ContactState::enabled(), &w, 0.005);
        assert!(rows.constants.iter().all(|&c| c > 0.0));
    }

    #[test]
    fn min_norm_rate_recovers_unilateral_violation() {
        // One point contact, min ‖ẇ‖² s.t. rows·ẇ + c ≥ 0. From f_z below
        // f_min only the unilateral row is violated; the KKT solution puts
        // the rate on f_z alone: ẇ_z = (f_min − f_z)/dt.
        let mut spec = ContactSpec::point("p", 0.5, 1000.0);
        spec.f_min = 10.0;
        let dt = 0.01;
        let w = [0.0, 0.0, 4.0];
        let rows = contact_inequality_rows(&spec, &ContactState::enabled(), &w, dt);
        let p = crate::qp::QpProblem::new(
            DMatrix::identity(3, 3),
            DVector::zeros(3),
            DMatrix::zeros(0, 3),
            DVector::zeros(0),
            rows.coeffs.clone(),
            rows.constants.clone(),
        );
        let sol = crate::qp::solve_qp(&p);
        assert_eq!(sol.status, crate::qp::QpStatus::Optimal);
        assert_relative_eq!(sol.x[2], (10.0 - 4.0) / dt, epsilon = 1e-6);
        assert!(sol.x[0].abs() < 1e-9 && sol.x[1].abs() < 1e-9);
        let fz_next = w[2] + sol.x[2] * dt;
        assert!(fz_next > w[2] && (fz_next - spec.f_min).abs() < 1e-9);
    }

    #[test]
    fn switch_transitions() {
        let spec = ContactSpec::plane("f", 0.5, 0.1, 0.05, 0.1, 200.0);
        let s = switch_begin(&spec, &ContactState::enabled(), SwitchAction::Remove, 2.0, 80.0).unwrap();
        assert_eq!(s.phase, ContactPhase::RampingOut);
        assert_eq!((s.captured_bound, s.ramp_elapsed), (80.0, 0.0));

        assert!(matches!(
            switch_begin(&spec, &ContactState::disabled(), SwitchAction::Remove, 2.0, 0.0),
            Err(Error::IllegalTransition(_))
        ));

        let s_in = switch_begin(&spec, &ContactState::disabled(), SwitchAction::Add, 2.0, 0.0).unwrap();
        assert_eq!(s_in.phase, ContactPhase::RampingIn);
        assert_eq!(s_in.current_bound(&spec), 0.0);

        let (s1, b) = switch_tick(&spec, &s, 0.5);
        assert_relative_eq!(b, 60.0);
        assert_eq!(s1.phase, ContactPhase::RampingOut);
        let (s2, b) = switch_tick(&spec, &s1, 1.5);
        assert_eq!((s2.phase, b), (ContactPhase::Disabled, 0.0));

        let (s3, b) = switch_tick(&spec, &s_in, 1.0);
        assert_relative_eq!(b, 100.0);
        let (s4, _) = switch_tick(&spec, &s3, 1.0);
        assert_eq!(s4.phase, ContactPhase::Enabled);
    }

    #[test]
    fn alignment_gate() {
        let surface = Pose::from_translation(0.5, 0.0, 0.0);
        let near = Pose::from_translation(0.505, 0.0, 0.0);
        let far = Pose::from_translation(0.6, 0.0, 0.0);
        assert!(check_add_alignment(ContactKind::Plane, &near, &surface).is_ok());
        assert!(check_add_alignment(ContactKind::Plane, &far, &surface).is_err());
        let tilted = near.compose(&Pose::rot_z(0.1));
        assert!(check_add_alignment(ContactKind::Plane, &tilted, &surface).is_err());
        assert!(check_add_alignment(ContactKind::Point, &tilted, &surface).is_ok());
    }

    proptest! {
        #[test]
        fn cone_margins_are_homogeneous(
            w in prop::array::uniform6(-50.0..50.0f64),
            alpha in 0.01..10.0f64,
        ) {
            let spec = ContactSpec::plane("f", 0.6, 0.1, 0.05, 0.2, 1e3);
            let scaled: Vec<f64> = w.iter().map(|v| v * alpha).collect();
            let a = margins_with_bounds(&spec, &w, 0.0, 1e3).unwrap();
            let b = margins_with_bounds(&spec, &scaled, 0.0, 1e3).unwrap();
            for (ma, mb) in a.iter().zip(&b) {
                if ma.0 == "cap" { continue; }
                prop_assert!((mb.1 - alpha * ma.1).abs() <= 1e-9 * (1.0 + mb.1.abs()));
            }
        }

        #[test]
        fn ramp_bounds_are_monotone(captured in 0.0..500.0f64, dur in 0.1..5.0f64, dt in 0.001..0.1f64) {
            let spec = ContactSpec::point("p", 0.5, 300.0);
            for action in [SwitchAction::Remove, SwitchAction::Add] {
                let start = if action == SwitchAction::Add { ContactState::disabled() } else { ContactState::enabled() };
                let mut s = switch_begin(&spec, &start, action, dur, captured).unwrap();
                let mut prev = s.current_bound(&spec);
                while matches!(s.phase, ContactPhase::RampingIn | ContactPhase::RampingOut) {
                    let (ns, b) = switch_tick(&spec, &s, dt);
                    match action {
                        SwitchAction::Remove => prop_assert!(b <= prev + 1e-12),
                        SwitchAction::Add => prop_assert!(b >= prev - 1e-12),
                    }
                    prev = b;
                    s = ns;
                }
            }
        }
    }
}
