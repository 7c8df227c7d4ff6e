//! Static equation of motion `G(q) = S τ + J(q)ᵀ λ`.
//!
//! Row order is `[base (6); actuated (n)]` for floating-base models. The
//! residual `r = G − Jᵀλ` is split into the unactuated base rows `r_fb`
//! and the joint torques `τ` (the actuated rows).
//!
//! Everything is computed from subtree aggregates. For a tangent column
//! with motion `S` (spatial velocity at the world origin) the generalized
//! external force is `S · W`, where `W = (N; F)` is the total external
//! wrench about the world origin on the subtree that column moves. Gravity
//! forces keep their world direction when the subtree moves; contact
//! wrenches are contact-local and rotate with their link.

use nalgebra::{DMatrix, DVector};

use crate::contacts::{ActiveContact, ContactKind, ContactSet};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::model::{gravity_from_kinematics, Configuration, Kinematics, Motion, RobotModel};

#[derive(Debug, Clone, PartialEq)]
pub struct StaticsResult {
    /// Empty for fixed-base models.
    pub base_residual: DVector<f64>,
    pub joint_torques: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticsDerivatives {
    pub dres_dq: DMatrix<f64>,
    pub dres_dlambda: DMatrix<f64>,
    pub dtau_dq: DMatrix<f64>,
    pub dtau_dlambda: DMatrix<f64>,
}

/// Full-length residual `G − Jᵀλ` and, optionally, its derivatives.
#[derive(Debug, Clone)]
pub struct Statics {
    pub residual: DVector<f64>,
    pub d_dq: Option<DMatrix<f64>>,
    pub d_dlambda: DMatrix<f64>,
    /// Stacked contact-local Jacobian, one block per active contact.
    pub contact_jacobian: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Aggregate {
    contact_moment: Vec3,
    contact_force: Vec3,
    mass: f64,
    /// `Σ m c`, world.
    mass_moment: Vec3,
}

impl Aggregate {
    fn add(&mut self, o: &Aggregate) {
        self.contact_moment += o.contact_moment;
        self.contact_force += o.contact_force;
        self.mass += o.mass;
        self.mass_moment += o.mass_moment;
    }

    /// Total external wrench `(N; F)` about the world origin.
    fn wrench(&self, g: &Vec3) -> (Vec3, Vec3) {
        (
            self.contact_moment + self.mass_moment.cross(g),
            self.contact_force + self.mass * g,
        )
    }

    /// Rate of the external wrench when the whole aggregate moves with `m`.
    fn wrench_rate(&self, m: &Motion, g: &Vec3) -> (Vec3, Vec3) {
        let w = &m.angular;
        let v = &m.linear;
        let dn = w.cross(&self.contact_moment)
            + v.cross(&self.contact_force)
            + (w.cross(&self.mass_moment) + v * self.mass).cross(g);
        let df = w.cross(&self.contact_force);
        (dn, df)
    }
}

fn power(m: &Motion, w: &(Vec3, Vec3)) -> f64 {
    m.angular.dot(&w.0) + m.linear.dot(&w.1)
}

/// Contact-local Jacobian rows of every active contact, stacked in set order.
pub fn stacked_contact_jacobian(model: &RobotModel, kin: &Kinematics, layout: &[ActiveContact]) -> DMatrix<f64> {
    let m: usize = layout.iter().map(|a| a.dim()).sum();
    let mut out = DMatrix::zeros(m, model.nv());
    for a in layout {
        let jac = kin.frame_jacobian(model, a.frame_id);
        let rt = kin
            .frame_pose(model, a.frame_id)
            .orientation
            .inverse()
            .to_rotation_matrix();
        let rt = rt.matrix();
        let lin = rt * jac.rows(0, 3);
        out.view_mut((a.offset, 0), (3, model.nv())).copy_from(&lin);
        if a.kind == ContactKind::Plane {
            let ang = rt * jac.rows(3, 3);
            out.view_mut((a.offset + 3, 0), (3, model.nv())).copy_from(&ang);
        }
    }
    out
}

impl Statics {
    pub fn compute(
        model: &RobotModel,
        kin: &Kinematics,
        layout: &[ActiveContact],
        lambda: &DVector<f64>,
        with_derivatives: bool,
    ) -> Result<Self> {
        let m: usize = layout.iter().map(|a| a.dim()).sum();
        if lambda.len() != m {
            return Err(Error::Dimension {
                what: "contact wrench vector",
                expected: m,
                got: lambda.len(),
            });
        }
        let nl = model.links.len();
        let g = model.gravity;
        let mut agg = vec![Aggregate::default(); nl];
        for (l, link) in model.links.iter().enumerate() {
            agg[l].mass = link.mass;
            agg[l].mass_moment = link.mass * kin.link_poses[l].transform_point(&link.com);
        }
        for a in layout {
            let pose = kin.frame_pose(model, a.frame_id);
            let f_local = Vec3::new(lambda[a.offset], lambda[a.offset + 1], lambda[a.offset + 2]);
            let t_local = if a.kind == ContactKind::Plane {
                Vec3::new(lambda[a.offset + 3], lambda[a.offset + 4], lambda[a.offset + 5])
            } else {
                Vec3::zeros()
            };
            let f = pose.orientation * f_local;
            let t = pose.orientation * t_local;
            let link = model.frames[a.frame_id].link;
            agg[link].contact_force += f;
            agg[link].contact_moment += t + pose.position.cross(&f);
        }
        for &l in model.topo().iter().rev() {
            if let Some(ji) = model.parent_joint(l) {
                let p = model.joints[ji].parent;
                let child = agg[l];
                agg[p].add(&child);
            }
        }

        let nv = model.nv();
        let off = model.base_dim();
        let root = model.root();
        // Aggregate moved by each tangent column.
        let col_agg = |c: usize| -> &Aggregate {
            if c < off {
                &agg[root]
            } else {
                &agg[model.dof_joint(c - off).child]
            }
        };

        // Gravity through the shared routine so that the contact-free case
        // reproduces `gravity_vector` bit for bit.
        let mut residual = gravity_from_kinematics(model, kin);
        for c in 0..nv {
            let a = col_agg(c);
            residual[c] -= power(&kin.motions[c], &(a.contact_moment, a.contact_force));
        }

        let contact_jacobian = stacked_contact_jacobian(model, kin, layout);
        let d_dlambda = -contact_jacobian.transpose();

        let d_dq = with_derivatives.then(|| {
            let mut d = DMatrix::zeros(nv, nv);
            let whole = agg[root].wrench(&g);
            for j in 0..nv {
                let sj = &kin.motions[j];
                let aj = col_agg(j);
                let wj = aj.wrench(&g);
                for k in 0..nv {
                    let xk = &kin.motions[k];
                    let value = if j < off {
                        // Base rows: the whole tree is the subtree.
                        let mut v = if k < off {
                            power(sj, &agg[root].wrench_rate(xk, &g))
                        } else {
                            power(sj, &col_agg(k).wrench_rate(xk, &g))
                        };
                        if j >= 3 && k < 3 {
                            // Base rotation axes pass through the base origin.
                            let dv0 = Vec3::ith(k, 1.0).cross(&Vec3::ith(j - 3, 1.0));
                            v += dv0.dot(&whole.1);
                        }
                        v
                    } else {
                        let dj = j - off;
                        let moves_j = k < off || model.dof_is_ancestor(k - off, dj);
                        if moves_j {
                            power(&xk.cross_motion(sj), &wj) + power(sj, &aj.wrench_rate(xk, &g))
                        } else if model.dof_is_ancestor(dj, k - off) {
                            power(sj, &col_agg(k).wrench_rate(xk, &g))
                        } else {
                            0.0
                        }
                    };
                    d[(j, k)] = -value;
                }
            }
            d
        });
        Ok(Self {
            residual,
            d_dq,
            d_dlambda,
            contact_jacobian,
        })
    }

    pub fn split(&self, model: &RobotModel) -> StaticsResult {
        let off = model.base_dim();
        StaticsResult {
            base_residual: self.residual.rows(0, off).into_owned(),
            joint_torques: self.residual.rows(off, model.dof()).into_owned(),
        }
    }

    pub fn split_derivatives(&self, model: &RobotModel) -> Option<StaticsDerivatives> {
        let off = model.base_dim();
        let n = model.dof();
        let dq = self.d_dq.as_ref()?;
        Some(StaticsDerivatives {
            dres_dq: dq.rows(0, off).into_owned(),
            dres_dlambda: self.d_dlambda.rows(0, off).into_owned(),
            dtau_dq: dq.rows(off, n).into_owned(),
            dtau_dlambda: self.d_dlambda.rows(off, n).into_owned(),
        })
    }
}

pub fn statics_evaluate(
    model: &RobotModel,
    contacts: &ContactSet,
    cfg: &Configuration,
    lambda: &DVector<f64>,
) -> Result<StaticsResult> {
    let kin = Kinematics::compute(model, cfg)?;
    Ok(Statics::compute(model, &kin, &contacts.layout(), lambda, false)?.split(model))
}

pub fn statics_derivatives(
    model: &RobotModel,
    contacts: &ContactSet,
    cfg: &Configuration,
    lambda: &DVector<f64>,
) -> Result<StaticsDerivatives> {
    let kin = Kinematics::compute(model, cfg)?;
    Ok(Statics::compute(model, &kin, &contacts.layout(), lambda, true)?
        .split_derivatives(model)
        .expect("derivatives requested"))
}
