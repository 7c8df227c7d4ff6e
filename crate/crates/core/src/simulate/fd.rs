//! Central finite-difference oracles for the analytical derivatives.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::contacts::ContactSet;
use crate::error::Result;
use crate::geometry::{quat_log, Pose, Vec3};
use crate::model::{Configuration, Kinematics, RobotModel};
use crate::statics::{statics_derivatives, statics_evaluate};

pub const DEFAULT_STEP: f64 = 1e-6;

/// `max|analytic − numeric| / max(max|numeric|, 1)`.
pub fn relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    if analytic.is_empty() {
        return 0.0;
    }
    (analytic - numeric).amax() / numeric.amax().max(1.0)
}

fn tangent(model: &RobotModel, k: usize) -> DVector<f64> {
    let mut e = DVector::zeros(model.nv());
    e[k] = 1.0;
    e
}

/// Numeric LWA Jacobians of every named frame, in frame order.
pub fn numeric_frame_jacobians(model: &RobotModel, cfg: &Configuration, h: f64) -> Result<Vec<DMatrix<f64>>> {
    let nv = model.nv();
    let mut out = vec![DMatrix::zeros(6, nv); model.frames.len()];
    for k in 0..nv {
        let e = tangent(model, k);
        let plus = Kinematics::compute(model, &cfg.integrate(model, &e, h))?;
        let minus = Kinematics::compute(model, &cfg.integrate(model, &(-&e), h))?;
        for (f, jac) in out.iter_mut().enumerate() {
            let (pp, pm): (Pose, Pose) = (plus.frame_pose(model, f), minus.frame_pose(model, f));
            let lin = (pp.position - pm.position) / (2.0 * h);
            let ang: Vec3 = quat_log(&(pp.orientation * pm.orientation.inverse())) / (2.0 * h);
            jac.fixed_view_mut::<3, 1>(0, k).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, k).copy_from(&ang);
        }
    }
    Ok(out)
}

/// Worst relative error over every named frame's Jacobian at `cfg`.
pub fn check_frame_jacobians(model: &RobotModel, cfg: &Configuration, h: f64) -> Result<f64> {
    let kin = Kinematics::compute(model, cfg)?;
    let numeric = numeric_frame_jacobians(model, cfg, h)?;
    Ok(numeric
        .iter()
        .enumerate()
        .map(|(f, n)| relative_error(&kin.frame_jacobian(model, f), n))
        .fold(0.0, f64::max))
}

/// Per-block relative errors `[dres_dq, dres_dlambda, dtau_dq, dtau_dlambda]`.
pub fn check_statics_derivatives(
    model: &RobotModel,
    contacts: &ContactSet,
    cfg: &Configuration,
    lambda: &DVector<f64>,
    h: f64,
) -> Result<[f64; 4]> {
    let d = statics_derivatives(model, contacts, cfg, lambda)?;
    let nv = model.nv();
    let m = lambda.len();
    let (nb, n) = (model.base_dim(), model.dof());
    let mut res_q = DMatrix::zeros(nb, nv);
    let mut tau_q = DMatrix::zeros(n, nv);
    for k in 0..nv {
        let e = tangent(model, k);
        let p = statics_evaluate(model, contacts, &cfg.integrate(model, &e, h), lambda)?;
        let q = statics_evaluate(model, contacts, &cfg.integrate(model, &(-&e), h), lambda)?;
        res_q.set_column(k, &((p.base_residual - q.base_residual) / (2.0 * h)));
        tau_q.set_column(k, &((p.joint_torques - q.joint_torques) / (2.0 * h)));
    }
    let mut res_l = DMatrix::zeros(nb, m);
    let mut tau_l = DMatrix::zeros(n, m);
    for i in 0..m {
        let mut lp = lambda.clone();
        lp[i] += h;
        let mut lm = lambda.clone();
        lm[i] -= h;
        let p = statics_evaluate(model, contacts, cfg, &lp)?;
        let q = statics_evaluate(model, contacts, cfg, &lm)?;
        res_l.set_column(i, &((p.base_residual - q.base_residual) / (2.0 * h)));
        tau_l.set_column(i, &((p.joint_torques - q.joint_torques) / (2.0 * h)));
    }
    Ok([
        relative_error(&d.dres_dq, &res_q),
        relative_error(&d.dres_dlambda, &res_l),
        relative_error(&d.dtau_dq, &tau_q),
        relative_error(&d.dtau_dlambda, &tau_l),
    ])
}

/// Uniform configuration inside the joint limits, base pose in a unit box
/// with arbitrary orientation.
pub fn random_configuration<R: Rng>(model: &RobotModel, rng: &mut R) -> Configuration {
    let q = DVector::from_iterator(
        model.dof(),
        model
            .dof_limits()
            .iter()
            .map(|l| rng.gen_range(l.lower.max(-3.0)..=l.upper.min(3.0))),
    );
    let base = if model.floating_base {
        Pose::from_xyz_rpy(
            Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.0..1.5),
            ),
            Vec3::new(
                rng.gen_range(-3.1..3.1),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-3.1..3.1),
            ),
        )
    } else {
        Pose::identity()
    };
    Configuration::new(base, q)
}

/// Every named frame as a contact candidate: plane contacts on feet and
/// bottoms, points elsewhere, all enabled.
pub fn all_frame_contacts(model: &RobotModel, names: &[&str]) -> Result<ContactSet> {
    use crate::contacts::ContactSpec;
    let specs = names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let spec = if i % 2 == 0 {
                ContactSpec::plane(n, 0.8, 0.1, 0.05, 0.05, 1e3)
            } else {
                ContactSpec::point(n, 0.8, 1e3)
            };
            (spec, true)
        })
        .collect();
    ContactSet::new(model, specs)
}
