//! Independent fixed-point oracle.
//!
//! Solves the stationarity problem that the retargeting loop converges to,
//!
//! ```text
//! min  ½ Σ (w_c/dt²) ‖e_c(x)‖² + ½ (w_post ‖q − q0‖² + w_τ ‖τ(x, λ)‖² + w_λ ‖λ‖²)
//! s.t. r_fb(x, λ) = 0,  active contact frames at their anchors,
//! ```
//!
//! by damped Gauss-Newton on the equality-constrained least squares, with
//! every Jacobian taken by central differences of the value functions and
//! each step solved through an SVD of the KKT matrix. Neither the analytic
//! derivatives nor the QP solver are involved. Inequalities are ignored,
//! so the oracle is meaningful where none is active at the solution.

use nalgebra::{DMatrix, DVector};

use crate::contacts::{ContactKind, ContactSet};
use crate::error::Result;
use crate::geometry::{pose_error_log, Pose};
use crate::model::{Configuration, Kinematics, RobotModel};
use crate::retarget::{EffectorCommand, RetargetConfig};
use crate::statics::Statics;

const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub cfg: Configuration,
    /// Wrenches of the active contacts in layout order.
    pub lambda: DVector<f64>,
    /// Stationary point found and every effector within `reach_tol`.
    pub converged: bool,
    pub stationary: bool,
    pub iterations: usize,
    /// Largest effector position error at the solution, meters.
    pub effector_error: f64,
    pub constraint_residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    pub max_iters: usize,
    /// Step size below which the iteration is stationary.
    pub step_tol: f64,
    pub constraint_tol: f64,
    /// Effector position error above which a target counts as unreached.
    pub reach_tol: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            step_tol: 1e-11,
            constraint_tol: 1e-8,
            reach_tol: 1e-3,
        }
    }
}

struct Problem<'a> {
    model: &'a RobotModel,
    contacts: &'a ContactSet,
    anchors: Vec<(usize, ContactKind, Pose)>,
    commands: &'a [EffectorCommand],
    config: &'a RetargetConfig,
    posture: DVector<f64>,
}

impl Problem<'_> {
    /// Objective residuals and equality residuals.
    fn eval(&self, cfg: &Configuration, lambda: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let m = self.model;
        let c = self.config;
        let kin = Kinematics::compute(m, cfg)?;
        let st = Statics::compute(m, &kin, &self.contacts.layout(), lambda, false)?.split(m);
        // The objective divided by dt², which keeps its terms O(1).
        let mut r: Vec<f64> = Vec::new();
        for cmd in self.commands {
            let e = pose_error_log(&kin.frame_pose(m, m.frame_id(&cmd.frame)?), &cmd.target);
            let wp = (c.w_position * cmd.weight).sqrt() / c.dt;
            let wo = (c.w_orientation * cmd.weight).sqrt() / c.dt;
            r.extend((0..3).map(|i| wp * e[i]));
            r.extend((3..6).map(|i| wo * e[i]));
        }
        r.extend(
            (&cfg.joint_positions - &self.posture)
                .iter()
                .map(|v| c.w_posture.sqrt() * v),
        );
        r.extend(st.joint_torques.iter().map(|v| c.w_torque.sqrt() * v));
        r.extend(lambda.iter().map(|v| c.w_wrench.sqrt() * v));

        let mut eq: Vec<f64> = st.base_residual.iter().copied().collect();
        for (frame, kind, anchor) in &self.anchors {
            let d = pose_error_log(anchor, &kin.frame_pose(m, *frame));
            let rows = if *kind == ContactKind::Plane { 6 } else { 3 };
            eq.extend(d.iter().take(rows));
        }
        Ok((DVector::from_vec(r), DVector::from_vec(eq)))
    }

    fn effector_error(&self, cfg: &Configuration) -> Result<f64> {
        let kin = Kinematics::compute(self.model, cfg)?;
        let mut worst: f64 = 0.0;
        for cmd in self.commands {
            let p = kin.frame_pose(self.model, self.model.frame_id(&cmd.frame)?);
            worst = worst.max((p.position - cmd.target.position).norm());
        }
        Ok(worst)
    }

    fn apply(&self, cfg: &Configuration, lambda: &DVector<f64>, dz: &DVector<f64>) -> (Configuration, DVector<f64>) {
        let nv = self.model.nv();
        let cfg = cfg.integrate(self.model, &dz.rows(0, nv).into_owned(), 1.0);
        let lambda = lambda + dz.rows(nv, lambda.len());
        (cfg, lambda)
    }

    /// Central-difference Jacobians of both residual vectors.
    fn jacobians(&self, cfg: &Configuration, lambda: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let dim = self.model.nv() + lambda.len();
        let (r0, c0) = self.eval(cfg, lambda)?;
        let mut jr = DMatrix::zeros(r0.len(), dim);
        let mut jc = DMatrix::zeros(c0.len(), dim);
        for k in 0..dim {
            let mut e = DVector::zeros(dim);
            e[k] = FD_STEP;
            let (cp, lp) = self.apply(cfg, lambda, &e);
            let (cm, lm) = self.apply(cfg, lambda, &(-e));
            let (rp, qp) = self.eval(&cp, &lp)?;
            let (rm, qm) = self.eval(&cm, &lm)?;
            jr.set_column(k, &((rp - rm) / (2.0 * FD_STEP)));
            jc.set_column(k, &((qp - qm) / (2.0 * FD_STEP)));
        }
        Ok((jr, jc))
    }
}

/// Fixed point of the retargeting loop for `commands`, starting from
/// `initial` with zero wrenches. Active contacts are held at their anchors
/// (the frame pose at `initial` when no anchor is set).
pub fn oracle_solve(
    model: &RobotModel,
    contacts: &ContactSet,
    commands: &[EffectorCommand],
    initial: &Configuration,
    config: &RetargetConfig,
) -> Result<OracleOutcome> {
    oracle_solve_with(model, contacts, commands, initial, config, &OracleOptions::default())
}

pub fn oracle_solve_with(
    model: &RobotModel,
    contacts: &ContactSet,
    commands: &[EffectorCommand],
    initial: &Configuration,
    config: &RetargetConfig,
    opts: &OracleOptions,
) -> Result<OracleOutcome> {
    initial.check(model)?;
    let kin = Kinematics::compute(model, initial)?;
    let anchors = contacts
        .layout()
        .iter()
        .map(|a| {
            let e = &contacts.entries[a.index];
            (
                a.frame_id,
                a.kind,
                e.anchor.unwrap_or_else(|| kin.frame_pose(model, a.frame_id)),
            )
        })
        .collect();
    let posture = match &config.default_posture {
        Some(p) => DVector::from_column_slice(p),
        None => DVector::zeros(model.dof()),
    };
    let pb = Problem {
        model,
        contacts,
        anchors,
        commands,
        config,
        posture,
    };

    let mut cfg = initial.clone();
    let mut lambda = DVector::zeros(contacts.wrench_dim());
    let dim = model.nv() + lambda.len();
    let (mut r, mut c) = pb.eval(&cfg, &lambda)?;
    let mut mu = 1e-8;
    let mut stationary = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let (jr, jc) = pb.jacobians(&cfg, &lambda)?;
        let ne = c.len();
        let jtj = jr.transpose() * &jr;
        let scale = jtj.diagonal().amax().max(1e-300);
        let grad = jr.transpose() * &r;
        let mut accepted = None;
        for _ in 0..30 {
            let mut kkt = DMatrix::zeros(dim + ne, dim + ne);
            let mut damped = jtj.clone();
            for i in 0..dim {
                damped[(i, i)] += mu * (jtj[(i, i)] + 1e-12 * scale);
            }
            kkt.view_mut((0, 0), (dim, dim)).copy_from(&damped);
            kkt.view_mut((0, dim), (dim, ne)).copy_from(&jc.transpose());
            kkt.view_mut((dim, 0), (ne, dim)).copy_from(&jc);
            let mut rhs = DVector::zeros(dim + ne);
            rhs.rows_mut(0, dim).copy_from(&(-&grad));
            rhs.rows_mut(dim, ne).copy_from(&(-&c));
            let sol = kkt.svd(true, true).solve(&rhs, 1e-14).expect("SVD with both factors");
            let dz = sol.rows(0, dim).into_owned();
            let (nc, nl) = pb.apply(&cfg, &lambda, &dz);
            let (nr, ncv) = pb.eval(&nc, &nl)?;
            // l1 merit with a penalty above the multiplier size.
            let rho = 2.0 * sol.rows(dim, ne).amax().max(1.0);
            let merit = |r: &DVector<f64>, c: &DVector<f64>| 0.5 * r.norm_squared() + rho * c.lp_norm(1);
            if merit(&nr, &ncv) <= merit(&r, &c) + 1e-15 * merit(&r, &c).abs() {
                accepted = Some((nc, nl, nr, ncv, dz.amax()));
                mu = (mu * 0.1).max(1e-12);
                break;
            }
            mu *= 10.0;
        }
        let Some((nc, nl, nr, ncv, step)) = accepted else {
            // No decreasing step left: stationary up to the merit resolution.
            stationary = c.amax() <= opts.constraint_tol;
            break;
        };
        cfg = nc;
        lambda = nl;
        r = nr;
        c = ncv;
        if step < opts.step_tol && c.amax() <= opts.constraint_tol {
            stationary = true;
            break;
        }
    }
    let effector_error = pb.effector_error(&cfg)?;
    Ok(OracleOutcome {
        converged: stationary && effector_error <= opts.reach_tol,
        stationary,
        iterations,
        effector_error,
        constraint_residual: c.amax(),
        cfg,
        lambda,
    })
}
