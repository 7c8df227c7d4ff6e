//! The retargeting loop: one dense QP per tick over configuration and
//! wrench rates, then integration.
//!
//! Decision vector `ẋ = (base twist (6, floating only); q̇ (n); λ̇ (m))`.
//! Effector tracking rows are velocity-level: `J ẋ` toward the clamped
//! pose error over `dt`. Every other term acts on per-tick quantities in
//! physical units: posture on `q + q̇·dt`, torque on `τ + τ̇·dt`, wrench on
//! `λ + λ̇·dt`, damping on the increments `ẋ·dt`. Tracking therefore
//! dominates by `1/dt²` while the remaining terms settle the null spaces
//! at Newton speed. Constraints are imposed on the post-integration state
//! `x + ẋ·dt`.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::contacts::{
    check_add_alignment, contact_inequality_rows, remap_wrenches, switch_begin, switch_tick, ContactKind, ContactPhase,
    ContactSet, ContactState, Margin, SwitchAction,
};
use crate::error::{Error, Result};
use crate::geometry::{pose_error_log, Pose, Vec3};
use crate::model::{Configuration, Kinematics, RobotModel};
use crate::qp::{QpProblem, QpSolution, QpSolver, QpStatus};
use crate::statics::Statics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetargetConfig {
    pub dt: f64,
    pub w_position: f64,
    pub w_orientation: f64,
    pub w_posture: f64,
    pub w_torque: f64,
    pub w_wrench: f64,
    pub w_wrench_rate: f64,
    pub w_joint_velocity: f64,
    /// Extra velocity damping per unit of remaining tracking cost.
    pub w_tracking_damping: f64,
    /// Fraction of the base residual removed per tick, in (0, 1].
    pub k_eq: f64,
    /// Rad (or m) kept clear of each joint limit.
    pub joint_margin: f64,
    /// Fraction of the effort limit usable by the static torque.
    pub torque_safety: f64,
    /// Effector tracking error is clamped to these speeds times `dt`.
    pub v_max_linear: f64,
    pub v_max_angular: f64,
    /// Defaults to the zero configuration.
    pub default_posture: Option<Vec<f64>>,
}

impl Default for RetargetConfig {
    fn default() -> Self {
        Self {
            dt: 0.005,
            w_position: 10.0,
            w_orientation: 1.0,
            w_posture: 1e-2,
            w_torque: 1e-4,
            w_wrench: 1e-6,
            w_wrench_rate: 1e-5,
            w_joint_velocity: 1e-3,
            w_tracking_damping: 1e-3,
            k_eq: 1.0,
            joint_margin: 0.01,
            torque_safety: 0.9,
            v_max_linear: 0.3,
            v_max_angular: 1.0,
            default_posture: None,
        }
    }
}

impl RetargetConfig {
    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        let weights = [
            self.w_position,
            self.w_orientation,
            self.w_posture,
            self.w_torque,
            self.w_wrench,
            self.w_wrench_rate,
            self.w_joint_velocity,
            self.w_tracking_damping,
        ];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Scenario("weights must be finite and non-negative".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Scenario(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.k_eq > 0.0 && self.k_eq <= 1.0) {
            return Err(Error::Scenario(format!("k_eq must lie in (0, 1], got {}", self.k_eq)));
        }
        if !(self.torque_safety > 0.0 && self.torque_safety <= 1.0) || self.joint_margin < 0.0 {
            return Err(Error::Scenario("invalid limit margins".into()));
        }
        if !(self.v_max_linear > 0.0 && self.v_max_angular > 0.0) {
            return Err(Error::Scenario("velocity caps must be positive".into()));
        }
        if let Some(p) = &self.default_posture {
            if p.len() != model.dof() {
                return Err(Error::Dimension {
                    what: "default posture",
                    expected: model.dof(),
                    got: p.len(),
                });
            }
        }
        Ok(())
    }

    fn posture(&self, model: &RobotModel) -> DVector<f64> {
        match &self.default_posture {
            Some(p) => DVector::from_column_slice(p),
            None => DVector::zeros(model.dof()),
        }
    }
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectorCommand {
    pub frame: String,
    pub target: Pose,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

impl EffectorCommand {
    pub fn new(frame: impl Into<String>, target: Pose) -> Self {
        Self {
            frame: frame.into(),
            target,
            weight: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RetargetState {
    pub cfg: Configuration,
    /// Contact-local wrenches of the active contacts, in layout order.
    pub lambda: DVector<f64>,
    pub contacts: ContactSet,
    pub time: f64,
    pub tau: DVector<f64>,
    /// Unactuated rows of `G − Jᵀλ`; empty for fixed-base models.
    pub base_residual: DVector<f64>,
    pub margins: Vec<Margin>,
    /// Poses held by effectors released from contact, until commanded.
    pub holds: BTreeMap<String, Pose>,
    /// Last solved `ẋ`, used to warm start the next solve.
    pub rate: DVector<f64>,
}

impl RetargetState {
    /// Anchors every active contact at its current pose, zero wrenches.
    pub fn new(model: &RobotModel, cfg: Configuration, mut contacts: ContactSet) -> Result<Self> {
        cfg.check(model)?;
        let kin = Kinematics::compute(model, &cfg)?;
        for e in contacts.entries.iter_mut() {
            e.anchor = e.state.is_active().then(|| kin.frame_pose(model, e.frame_id));
        }
        let lambda = DVector::zeros(contacts.wrench_dim());
        let mut s = Self {
            cfg,
            lambda,
            contacts,
            time: 0.0,
            tau: DVector::zeros(model.dof()),
            base_residual: DVector::zeros(model.base_dim()),
            margins: Vec::new(),
            holds: BTreeMap::new(),
            rate: DVector::zeros(0),
        };
        s.refresh(model)?;
        Ok(s)
    }

    /// Recomputes torques, base residual and margins from `cfg` and `lambda`.
    pub fn refresh(&mut self, model: &RobotModel) -> Result<()> {
        let kin = Kinematics::compute(model, &self.cfg)?;
        let st = Statics::compute(model, &kin, &self.contacts.layout(), &self.lambda, false)?.split(model);
        self.tau = st.joint_torques;
        self.base_residual = st.base_residual;
        self.margins = self.contacts.margins(&self.lambda);
        Ok(())
    }

    pub fn min_margin(&self) -> Option<f64> {
        self.margins.iter().map(|m| m.value).reduce(f64::min)
    }

    pub fn frame_pose(&self, model: &RobotModel, frame: &str) -> Result<Pose> {
        let id = model.frame_id(frame)?;
        Ok(Kinematics::compute(model, &self.cfg)?.frame_pose(model, id))
    }

    /// Starts adding or removing a contact. Adding checks the alignment
    /// gate against the contact surface, anchors the frame where it is and
    /// appends zero wrench entries; removing captures the current normal
    /// force as the ramp start.
    pub fn begin_switch(&mut self, model: &RobotModel, frame: &str, action: SwitchAction, duration: f64) -> Result<()> {
        let idx = self.contacts.index_of(frame).ok_or_else(|| Error::InvalidContact {
            frame: frame.to_string(),
            msg: "no contact declared on this frame".into(),
        })?;
        let old_layout = self.contacts.layout();
        let entry = &self.contacts.entries[idx];
        match action {
            SwitchAction::Add => {
                let current = Kinematics::compute(model, &self.cfg)?.frame_pose(model, entry.frame_id);
                if let Some(surface) = &entry.spec.surface {
                    check_add_alignment(entry.spec.kind, &current, surface)?;
                }
                let state = switch_begin(&entry.spec, &entry.state, action, duration, 0.0)?;
                let e = &mut self.contacts.entries[idx];
                e.state = state;
                e.anchor = Some(current);
                self.holds.remove(frame);
                self.lambda = remap_wrenches(&old_layout, &self.contacts.layout(), &self.lambda);
            }
            SwitchAction::Remove => {
                let fz = self.contacts.wrench_of(&self.lambda, idx).map_or(0.0, |w| w[2]);
                let state = switch_begin(&entry.spec, &entry.state, action, duration, fz)?;
                self.contacts.entries[idx].state = state;
            }
        }
        self.rate = DVector::zeros(0);
        self.refresh(model)
    }
}

/// Named actuation margins, positive when satisfied: `{joint}/joint` is the
/// distance to the nearer position limit minus the configured margin,
/// `{joint}/torque` the headroom `safety·effort − |τ|`.
pub fn limit_margins(model: &RobotModel, state: &RetargetState, config: &RetargetConfig) -> Vec<Margin> {
    let q = &state.cfg.joint_positions;
    let mut out = Vec::with_capacity(2 * model.dof());
    for (d, lim) in model.dof_limits().iter().enumerate() {
        let name = &model.dof_joint(d).name;
        out.push(Margin {
            name: format!("{name}/joint"),
            value: (q[d] - lim.lower).min(lim.upper - q[d]) - config.joint_margin,
        });
        out.push(Margin {
            name: format!("{name}/torque"),
            value: config.torque_safety * lim.effort - state.tau[d].abs(),
        });
    }
    out
}

/// Timing and solver report of one tick.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: RetargetState,
    /// Solved `ẋ` (zero-length on soft failure).
    pub rate: DVector<f64>,
    pub status: QpStatus,
    /// The QP failed and `state` is the unchanged input state.
    pub soft_failure: bool,
    pub iterations: usize,
    pub build_time: Duration,
    pub solve_time: Duration,
    /// Contacts that finished ramping out during this tick.
    pub released: Vec<ReleasedContact>,
}

/// A contact dropped from the active set, with its wrench at the instant
/// of release.
#[derive(Debug, Clone, PartialEq)]
pub struct ReleasedContact {
    pub frame: String,
    pub wrench: Vec<f64>,
}

/// Accumulates `Σ w ‖A ẋ − c‖²` as `½ ẋᵀHẋ + gᵀẋ` (up to a factor 2).
struct CostBuilder {
    h: DMatrix<f64>,
    g: DVector<f64>,
}

impl CostBuilder {
    fn add_rows(&mut self, col: usize, a: &DMatrix<f64>, c: &DVector<f64>, w: &[f64]) {
        if w.iter().all(|w| *w == 0.0) {
            return;
        }
        let mut wa = a.clone();
        for (r, wr) in w.iter().enumerate() {
            wa.row_mut(r).scale_mut(*wr);
        }
        let k = a.ncols();
        let hh = a.transpose() * &wa;
        let mut hv = self.h.view_mut((col, col), (k, k));
        hv += &hh;
        let mut gv = self.g.rows_mut(col, k);
        gv -= wa.transpose() * c;
    }

    fn add_diagonal(&mut self, col: usize, k: usize, w: f64) {
        for i in col..col + k {
            self.h[(i, i)] += w;
        }
    }
}

/// Checks command frames: they must exist and may not be active contacts.
pub fn check_commands(model: &RobotModel, state: &RetargetState, commands: &[EffectorCommand]) -> Result<()> {
    for c in commands {
        model.frame_id(&c.frame)?;
        if let Some(i) = state.contacts.index_of(&c.frame) {
            if state.contacts.entries[i].state.is_active() {
                return Err(Error::InvalidContact {
                    frame: c.frame.clone(),
                    msg: "frame is an active contact and cannot be commanded".into(),
                });
            }
        }
        if !(c.weight >= 0.0 && c.weight.is_finite()) {
            return Err(Error::Scenario(format!(
                "command weight for `{}` must be non-negative",
                c.frame
            )));
        }
    }
    Ok(())
}

fn clamp_norm(v: Vec3, max: f64) -> Vec3 {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// Desired effector twist of one tracking row block.
#[derive(Debug, Clone)]
pub struct TrackingTarget {
    pub frame: String,
    pub frame_id: usize,
    /// Clamped pose error over `dt`, `(linear; angular)`.
    pub velocity: DVector<f64>,
    pub weight: f64,
    /// The raw error exceeded the per-tick velocity bound.
    pub clamped: bool,
}

/// Tracking targets of the commands plus the holds of released effectors
/// that are not commanded.
pub fn tracking_targets(
    model: &RobotModel,
    kin: &Kinematics,
    state: &RetargetState,
    commands: &[EffectorCommand],
    config: &RetargetConfig,
) -> Result<Vec<TrackingTarget>> {
    let dt = config.dt;
    let holds = state
        .holds
        .iter()
        .filter(|(f, _)| !commands.iter().any(|c| &c.frame == *f))
        .map(|(f, p)| EffectorCommand::new(f.clone(), *p));
    let mut out = Vec::new();
    for c in commands.iter().cloned().chain(holds) {
        let id = model.frame_id(&c.frame)?;
        let e = pose_error_log(&kin.frame_pose(model, id), &c.target);
        let raw_lin = e.fixed_rows::<3>(0).into_owned();
        let raw_ang = e.fixed_rows::<3>(3).into_owned();
        let lin = clamp_norm(raw_lin, config.v_max_linear * dt);
        let ang = clamp_norm(raw_ang, config.v_max_angular * dt);
        out.push(TrackingTarget {
            frame_id: id,
            velocity: DVector::from_iterator(6, lin.iter().chain(ang.iter()).map(|v| v / dt)),
            weight: c.weight,
            clamped: lin != raw_lin || ang != raw_ang,
            frame: c.frame,
        });
    }
    Ok(out)
}

/// Assembles the tick QP. Commands are assumed valid (see [`check_commands`]).
type Rows = Vec<(DVector<f64>, f64)>;

/// Constraint rows over a rate `ẋ` held for `h` seconds, with the contact
/// rows at the switching state `ramp_ahead` seconds on: Newton rows on the
/// base residual with gain `k_eq`, contact anchoring, joint position,
/// velocity and torque limits, contact stability.
#[allow(clippy::too_many_arguments)]
fn constraint_rows(
    model: &RobotModel,
    state: &RetargetState,
    kin: &Kinematics,
    st: &Statics,
    config: &RetargetConfig,
    h: f64,
    k_eq: f64,
    ramp_ahead: f64,
) -> (Rows, Rows) {
    let d_dq = st.d_dq.as_ref().expect("derivatives requested");
    let layout = state.contacts.layout();
    let nv = model.nv();
    let nb = model.base_dim();
    let m = state.lambda.len();
    let dim = nv + m;
    // Equalities.
    let mut eq_rows: Vec<(DVector<f64>, f64)> = Vec::new();
    if nb > 0 {
        for r in 0..nb {
            let mut a = DVector::zeros(dim);
            a.rows_mut(0, nv).copy_from(&d_dq.row(r).transpose());
            a.rows_mut(nv, m).copy_from(&st.d_dlambda.row(r).transpose());
            // ∂r·ẋ h = −k r
            eq_rows.push((a * h, k_eq * st.residual[r]));
        }
    }
    for ac in &layout {
        let entry = &state.contacts.entries[ac.index];
        let current = kin.frame_pose(model, ac.frame_id);
        let anchor = entry.anchor.unwrap_or(current);
        let drift = pose_error_log(&current, &anchor);
        let rt = current.orientation.inverse();
        let lin = rt * drift.fixed_rows::<3>(0).into_owned();
        let ang = rt * drift.fixed_rows::<3>(3).into_owned();
        let rows = if ac.kind == ContactKind::Plane { 6 } else { 3 };
        for i in 0..rows {
            let mut a = DVector::zeros(dim);
            a.rows_mut(0, nv)
                .copy_from(&st.contact_jacobian.row(ac.offset + i).transpose());
            let corr = if i < 3 { lin[i] } else { ang[i - 3] };
            // J_c ẋ h = correction
            eq_rows.push((a * h, -corr));
        }
    }

    // Inequalities, all as `a·ẋ + b ≥ 0`.
    let mut in_rows: Vec<(DVector<f64>, f64)> = Vec::new();
    let q = &state.cfg.joint_positions;
    for (d, lim) in model.dof_limits().iter().enumerate() {
        let col = nb + d;
        let step = lim.velocity * h;
        let lower = (lim.lower + config.joint_margin - q[d]).min(step);
        let upper = (lim.upper - config.joint_margin - q[d]).max(-step);
        let mut a = DVector::zeros(dim);
        a[col] = h;
        in_rows.push((a.clone(), -lower));
        in_rows.push((-&a, upper));
        let mut v = DVector::zeros(dim);
        v[col] = 1.0;
        in_rows.push((v.clone(), lim.velocity));
        in_rows.push((-v, lim.velocity));

        let mut t = DVector::zeros(dim);
        t.rows_mut(0, nv).copy_from(&d_dq.row(nb + d).transpose());
        t.rows_mut(nv, m).copy_from(&st.d_dlambda.row(nb + d).transpose());
        t *= h;
        let cap = config.torque_safety * lim.effort;
        in_rows.push((-&t, cap - st.residual[nb + d]));
        in_rows.push((t, cap + st.residual[nb + d]));
    }
    for ac in &layout {
        let entry = &state.contacts.entries[ac.index];
        let (next, _) = switch_tick(&entry.spec, &entry.state, ramp_ahead);
        let w = &state.lambda.as_slice()[ac.offset..ac.offset + ac.dim()];
        let rows = contact_inequality_rows(&entry.spec, &next, w, h);
        for r in 0..rows.coeffs.nrows() {
            let mut a = DVector::zeros(dim);
            for i in 0..ac.dim() {
                a[nv + ac.offset + i] = rows.coeffs[(r, i)];
            }
            in_rows.push((a, rows.constants[r]));
        }
    }

    (eq_rows, in_rows)
}

fn stack(rows: Rows, dim: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(rows.len(), dim);
    let mut b = DVector::zeros(rows.len());
    for (i, (r, c)) in rows.into_iter().enumerate() {
        a.set_row(i, &r.transpose());
        b[i] = c;
    }
    (a, b)
}

pub fn build_qp(
    model: &RobotModel,
    state: &RetargetState,
    commands: &[EffectorCommand],
    config: &RetargetConfig,
) -> Result<QpProblem> {
    let kin = Kinematics::compute(model, &state.cfg)?;
    let layout = state.contacts.layout();
    let st = Statics::compute(model, &kin, &layout, &state.lambda, true)?;
    let d_dq = st.d_dq.as_ref().expect("derivatives requested");
    let dt = config.dt;
    let nv = model.nv();
    let nb = model.base_dim();
    let n = model.dof();
    let m = state.lambda.len();
    let dim = nv + m;

    let mut cost = CostBuilder {
        h: DMatrix::zeros(dim, dim),
        g: DVector::zeros(dim),
    };

    let mut tracking_cost = 0.0;
    for t in tracking_targets(model, &kin, state, commands, config)? {
        let wp = config.w_position * t.weight;
        let wo = config.w_orientation * t.weight;
        tracking_cost += wp * t.velocity.rows(0, 3).norm_squared() + wo * t.velocity.rows(3, 3).norm_squared();
        cost.add_rows(
            0,
            &kin.frame_jacobian(model, t.frame_id),
            &t.velocity,
            &[wp, wp, wp, wo, wo, wo],
        );
    }

    // Default-posture pull ‖q + q̇ dt − q0‖².
    if n > 0 {
        let a = DMatrix::identity(n, n) * dt;
        let pull = config.posture(model) - &state.cfg.joint_positions;
        cost.add_rows(nb, &a, &pull, &vec![config.w_posture; n]);
    }

    // Torque minimization ‖τ + τ̇ dt‖² and wrench magnitude ‖λ + λ̇ dt‖²,
    // both in physical units.
    let tau = st.residual.rows(nb, n).into_owned();
    if n > 0 {
        let mut a = DMatrix::zeros(n, dim);
        a.view_mut((0, 0), (n, nv)).copy_from(&(d_dq.rows(nb, n) * dt));
        a.view_mut((0, nv), (n, m)).copy_from(&(st.d_dlambda.rows(nb, n) * dt));
        cost.add_rows(0, &a, &(-&tau), &vec![config.w_torque; n]);
    }
    if m > 0 {
        let a = DMatrix::identity(m, m) * dt;
        cost.add_rows(nv, &a, &(-&state.lambda), &vec![config.w_wrench; m]);
        cost.add_diagonal(nv, m, config.w_wrench_rate * dt * dt);
    }
    // Damping grows with the unresolved tracking cost and vanishes at a
    // fixed point.
    cost.add_diagonal(
        0,
        nv,
        config.w_joint_velocity * dt * dt + config.w_tracking_damping * tracking_cost,
    );

    let (eq_rows, in_rows) = constraint_rows(model, state, &kin, &st, config, dt, config.k_eq, dt);
    let (a_eq, b_eq) = stack(eq_rows, dim);
    let (a_in, b_in) = stack(in_rows, dim);
    let mut p = QpProblem::new(cost.h, cost.g, a_eq, b_eq, a_in, b_in);
    if state.rate.len() == dim {
        p.warm_start = Some(state.rate.clone());
    }
    Ok(p)
}

/// Applies a solved rate: integration, ramp ticks, releases and refresh.
fn advance(
    model: &RobotModel,
    state: &RetargetState,
    rate: &DVector<f64>,
    config: &RetargetConfig,
) -> Result<(RetargetState, Vec<ReleasedContact>)> {
    let dt = config.dt;
    let nv = model.nv();
    let mut next = state.clone();
    next.cfg = state.cfg.integrate(model, &rate.rows(0, nv).into_owned(), dt);
    next.lambda = &state.lambda + rate.rows(nv, state.lambda.len()) * dt;
    next.rate = rate.clone();
    next.time = state.time + dt;

    let old_layout = next.contacts.layout();
    let mut released = Vec::new();
    for (i, e) in next.contacts.entries.iter_mut().enumerate() {
        let (s, _) = switch_tick(&e.spec, &e.state, dt);
        if e.state.phase == ContactPhase::RampingOut && s.phase == ContactPhase::Disabled {
            let at = old_layout
                .iter()
                .find(|a| a.index == i)
                .expect("ramping contact is active");
            released.push(ReleasedContact {
                frame: e.spec.frame.clone(),
                wrench: next.lambda.as_slice()[at.offset..at.offset + at.dim()].to_vec(),
            });
            e.anchor = None;
        }
        e.state = s;
    }
    if !released.is_empty() {
        next.lambda = remap_wrenches(&old_layout, &next.contacts.layout(), &next.lambda);
        next.rate = DVector::zeros(0);
        let kin = Kinematics::compute(model, &next.cfg)?;
        for r in &released {
            let id = model.frame_id(&r.frame)?;
            next.holds.insert(r.frame.clone(), kin.frame_pose(model, id));
        }
    }
    next.refresh(model)?;
    restore_equilibrium(model, &mut next, config)?;
    Ok((next, released))
}

/// Base residual below which no restoration is attempted.
const RESTORE_TOL: f64 = 1e-10;
const RESTORE_ITERS: usize = 3;

/// Removes the second-order base residual left by integrating a step.
/// Each pass solves the smallest correction of configuration and wrenches
/// that zeroes the linearized residual while keeping every constraint row;
/// wrench changes are strongly preferred, so a configuration change only
/// happens when no wrench distribution balances the robot. If no
/// correction is feasible the state stays as integrated and the next
/// tick's Newton row takes over.
fn restore_equilibrium(model: &RobotModel, state: &mut RetargetState, config: &RetargetConfig) -> Result<()> {
    let m = state.lambda.len();
    if model.base_dim() == 0 || m == 0 {
        return Ok(());
    }
    let nv = model.nv();
    let dim = nv + m;
    // One radian or meter weighs as much as a wrench change of the total weight.
    let w = (1.0 + model.total_mass() * model.gravity.norm()).powi(2);
    for _ in 0..RESTORE_ITERS {
        if state.base_residual.norm() <= RESTORE_TOL {
            break;
        }
        let kin = Kinematics::compute(model, &state.cfg)?;
        let st = Statics::compute(model, &kin, &state.contacts.layout(), &state.lambda, true)?;
        let (eq_rows, in_rows) = constraint_rows(model, state, &kin, &st, config, 1.0, 1.0, 0.0);
        let (a_eq, b_eq) = stack(eq_rows, dim);
        let (a_in, b_in) = stack(in_rows, dim);
        let mut hess = DMatrix::identity(dim, dim);
        for i in 0..nv {
            hess[(i, i)] = w;
        }
        let sol = QpSolver::default().solve(&QpProblem::new(hess, DVector::zeros(dim), a_eq, b_eq, a_in, b_in));
        if sol.status != QpStatus::Optimal {
            log::debug!("t={:.3}: equilibrium not restorable this tick", state.time);
            break;
        }
        state.cfg = state.cfg.integrate(model, &sol.x.rows(0, nv).into_owned(), 1.0);
        state.lambda += sol.x.rows(nv, m);
        state.refresh(model)?;
    }
    Ok(())
}

/// One tick. Solver failure leaves the state untouched and sets
/// `soft_failure`; only invalid inputs are errors.
pub fn step(
    model: &RobotModel,
    state: &RetargetState,
    commands: &[EffectorCommand],
    config: &RetargetConfig,
) -> Result<StepOutcome> {
    step_with(model, state, commands, config, &QpSolver::default())
}

pub fn step_with(
    model: &RobotModel,
    state: &RetargetState,
    commands: &[EffectorCommand],
    config: &RetargetConfig,
    solver: &QpSolver,
) -> Result<StepOutcome> {
    check_commands(model, state, commands)?;
    let t0 = Instant::now();
    let p = build_qp(model, state, commands, config)?;
    let build_time = t0.elapsed();
    let sol: QpSolution = solver.solve(&p);
    if sol.status != QpStatus::Optimal {
        log::debug!("tick at t={:.3}: QP {:?}, state held", state.time, sol.status);
        return Ok(StepOutcome {
            state: state.clone(),
            rate: DVector::zeros(0),
            status: sol.status,
            soft_failure: true,
            iterations: sol.iterations,
            build_time,
            solve_time: sol.solve_time,
            released: Vec::new(),
        });
    }
    let (next, released) = advance(model, state, &sol.x, config)?;
    Ok(StepOutcome {
        state: next,
        rate: sol.x,
        status: sol.status,
        soft_failure: false,
        iterations: sol.iterations,
        build_time,
        solve_time: sol.solve_time,
        released,
    })
}

/// Trial solve used to vet a contact switch before it starts: the switch
/// is applied to a copy, jumped to its end state, and one tick is solved.
pub fn switch_is_feasible(
    model: &RobotModel,
    state: &RetargetState,
    frame: &str,
    action: SwitchAction,
    commands: &[EffectorCommand],
    config: &RetargetConfig,
) -> Result<bool> {
    let mut trial = state.clone();
    trial.begin_switch(model, frame, action, 0.0)?;
    let old = trial.contacts.layout();
    for e in trial.contacts.entries.iter_mut() {
        if e.spec.frame == frame {
            e.state = match action {
                SwitchAction::Add => ContactState::enabled(),
                SwitchAction::Remove => ContactState::disabled(),
            };
        }
    }
    trial.lambda = remap_wrenches(&old, &trial.contacts.layout(), &trial.lambda);
    trial.rate = DVector::zeros(0);
    let cmds: Vec<EffectorCommand> = commands.iter().filter(|c| c.frame != frame).cloned().collect();
    let p = build_qp(model, &trial, &cmds, config)?;
    Ok(QpSolver::default().solve(&p).status == QpStatus::Optimal)
}

#[derive(Debug, Clone)]
pub struct ConvergeOutcome {
    pub state: RetargetState,
    pub converged: bool,
    pub iterations: usize,
    /// `‖ẋ‖∞` of the last successful tick.
    pub last_rate_norm: f64,
}

/// Steps until `‖ẋ‖∞ < tol` or `max_iters` ticks. A solver failure stops
/// the loop and reports non-convergence with the last valid state.
pub fn converge(
    model: &RobotModel,
    state: &RetargetState,
    commands: &[EffectorCommand],
    config: &RetargetConfig,
    tol: f64,
    max_iters: usize,
) -> Result<ConvergeOutcome> {
    let mut cur = state.clone();
    let mut last = f64::INFINITY;
    for it in 1..=max_iters {
        let out = step(model, &cur, commands, config)?;
        if out.soft_failure {
            return Ok(ConvergeOutcome {
                state: cur,
                converged: false,
                iterations: it,
                last_rate_norm: last,
            });
        }
        last = out.rate.amax();
        cur = out.state;
        if last < tol {
            return Ok(ConvergeOutcome {
                state: cur,
                converged: true,
                iterations: it,
                last_rate_norm: last,
            });
        }
    }
    Ok(ConvergeOutcome {
        state: cur,
        converged: false,
        iterations: max_iters,
        last_rate_norm: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contacts::ContactSpec;
    use crate::load_fixture;

    fn box_state(specs: Vec<ContactSpec>) -> (RobotModel, RetargetState) {
        let model = load_fixture("box").unwrap();
        let set = ContactSet::new(&model, specs.into_iter().map(|s| (s, true)).collect()).unwrap();
        let cfg = Configuration::new(Pose::from_translation(0.0, 0.0, 0.1), DVector::zeros(0));
        let st = RetargetState::new(&model, cfg, set).unwrap();
        (model, st)
    }

    fn box_on_ground() -> (RobotModel, RetargetState) {
        box_state(vec![ContactSpec::plane("bottom", 0.8, 0.2, 0.2, 0.05, 1e3)])
    }

    #[test]
    fn box_weight_is_picked_up_in_one_solve() {
        let (model, st) = box_on_ground();
        let cfg = RetargetConfig::default();
        let out = step(&model, &st, &[], &cfg).unwrap();
        assert!(!out.soft_failure);
        let fz_rate = out.rate[6 + 2];
        let weight = model.total_mass() * 9.81;
        assert!((fz_rate * cfg.dt - weight).abs() < 1e-6, "λ̇z·dt = {}", fz_rate * cfg.dt);
        assert!(out.state.base_residual.norm() < 1e-9);
    }

    #[test]
    fn tracking_row_is_the_error_over_dt() {
        let model = load_fixture("two_link_arm").unwrap();
        let cfg0 = Configuration::new(Pose::identity(), DVector::from_vec(vec![0.3, 0.5]));
        let st = RetargetState::new(&model, cfg0, ContactSet::empty()).unwrap();
        let here = st.frame_pose(&model, "hand").unwrap();
        let target = Pose::new(here.position + Vec3::new(0.0, 0.0, 0.05), here.orientation);
        let mut config = RetargetConfig::default();
        config.v_max_linear = 100.0;
        let kin = Kinematics::compute(&model, &st.cfg).unwrap();
        let rows = tracking_targets(&model, &kin, &st, &[EffectorCommand::new("hand", target)], &config).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].velocity.norm() - 0.05 / config.dt).abs() < 1e-9);
        assert!(!rows[0].clamped);

        config.v_max_linear = 0.3;
        let rows = tracking_targets(&model, &kin, &st, &[EffectorCommand::new("hand", target)], &config).unwrap();
        assert!((rows[0].velocity.norm() - 0.3).abs() < 1e-9);
        assert!(rows[0].clamped);
    }

    #[test]
    fn converged_state_is_a_fixed_point() {
        let (model, st) = box_on_ground();
        let cfg = RetargetConfig::default();
        let out = converge(&model, &st, &[], &cfg, 1e-10, 50).unwrap();
        assert!(out.converged);
        let again = converge(&model, &out.state, &[], &cfg, 1e-9, 50).unwrap();
        assert_eq!(again.iterations, 1);
        let next = step(&model, &out.state, &[], &cfg).unwrap();
        assert!(next.rate.amax() <= 1e-9);
        assert!((&next.state.lambda - &out.state.lambda).amax() <= 1e-9);
    }

    #[test]
    fn residual_decays_after_a_wrench_kick() {
        let (model, st) = box_on_ground();
        let cfg = RetargetConfig::default();
        let mut s = converge(&model, &st, &[], &cfg, 1e-10, 50).unwrap().state;
        s.lambda[0] += 1.0;
        s.refresh(&model).unwrap();
        assert!(s.base_residual.norm() > 0.5);
        let mut steps = 0;
        while s.base_residual.norm() >= 1e-6 {
            s = step(&model, &s, &[], &cfg).unwrap().state;
            steps += 1;
            assert!(steps <= 5, "residual {} after 5 steps", s.base_residual.norm());
        }
    }

    #[test]
    fn overloaded_contacts_fail_with_named_margins() {
        let mut a = ContactSpec::point("corner_fl", 0.8, 1e3);
        let mut b = ContactSpec::point("corner_br", 0.8, 1e3);
        a.f_min = 100.0;
        b.f_min = 100.0;
        let (model, st) = box_state(vec![a, b]);
        let out = converge(&model, &st, &[], &RetargetConfig::default(), 1e-6, 50).unwrap();
        assert!(!out.converged);
        let violated: Vec<&str> = out
            .state
            .margins
            .iter()
            .filter(|m| m.value < 0.0)
            .map(|m| m.name.as_str())
            .collect();
        assert!(violated.contains(&"corner_fl/unilateral"), "{violated:?}");
        assert!(violated.contains(&"corner_br/unilateral"), "{violated:?}");
    }

    #[test]
    fn commanding_a_contact_frame_is_rejected() {
        let (model, st) = box_on_ground();
        let cmd = EffectorCommand::new("bottom", Pose::identity());
        assert!(matches!(
            step(&model, &st, &[cmd], &RetargetConfig::default()),
            Err(Error::InvalidContact { .. })
        ));
        let cmd = EffectorCommand::new("nowhere", Pose::identity());
        assert!(matches!(
            step(&model, &st, &[cmd], &RetargetConfig::default()),
            Err(Error::UnknownFrame(_))
        ));
    }

    #[test]
    fn config_validation() {
        let model = load_fixture("pendulum").unwrap();
        let mut c = RetargetConfig::default();
        assert!(c.validate(&model).is_ok());
        c.w_torque = -1.0;
        assert!(c.validate(&model).is_err());
        let mut c = RetargetConfig::default();
        c.k_eq = 1.5;
        assert!(c.validate(&model).is_err());
        let mut c = RetargetConfig::default();
        c.default_posture = Some(vec![0.0, 0.0]);
        assert!(c.validate(&model).is_err());
    }
}
