use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Translation3, Unit, UnitQuaternion};

use super::{Configuration, JointKind, RobotModel};
use crate::error::Result;
use crate::geometry::{Pose, Vec3};

/// Instantaneous motion of one tangent column, as a spatial velocity
/// referenced at the world origin: a point `p` rigidly attached to the
/// moved bodies has velocity `linear + angular × p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Motion {
    pub angular: Vec3,
    pub linear: Vec3,
}

impl Motion {
    pub fn point_velocity(&self, p: &Vec3) -> Vec3 {
        self.linear + self.angular.cross(p)
    }

    /// Spatial cross product `self ×ₘ other`.
    pub fn cross_motion(&self, other: &Motion) -> Motion {
        Motion {
            angular: self.angular.cross(&other.angular),
            linear: self.angular.cross(&other.linear) + self.linear.cross(&other.angular),
        }
    }
}

/// Forward kinematics evaluated once per configuration, with the joint
/// motion axes needed for Jacobians and statics derivatives.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub link_poses: Vec<Pose>,
    /// One entry per tangent column.
    pub motions: Vec<Motion>,
    pub base_position: Vec3,
}

impl Kinematics {
    pub fn compute(model: &RobotModel, cfg: &Configuration) -> Result<Self> {
        cfg.check(model)?;
        let nl = model.links.len();
        let mut link_poses = vec![Pose::identity(); nl];
        let off = model.base_dim();
        let mut motions = vec![
            Motion {
                angular: Vec3::zeros(),
                linear: Vec3::zeros()
            };
            model.nv()
        ];
        let base = cfg.base_pose;
        link_poses[model.root()] = base;
        if model.floating_base {
            for k in 0..3 {
                let e = Vec3::ith(k, 1.0);
                motions[k] = Motion {
                    angular: Vec3::zeros(),
                    linear: e,
                };
                motions[3 + k] = Motion {
                    angular: e,
                    linear: base.position.cross(&e),
                };
            }
        }
        for &l in model.topo() {
            let Some(ji) = model.parent_joint(l) else { continue };
            let joint = &model.joints[ji];
            let joint_frame = link_poses[joint.parent].compose(&joint.origin);
            let motion = match (joint.kind, joint.dof) {
                (JointKind::Revolute, Some(d)) => {
                    let q = cfg.joint_positions[d];
                    let rot = UnitQuaternion::from_axis_angle(&Unit::new_unchecked(joint.axis), q);
                    link_poses[l] = joint_frame.compose(&Pose::from_rotation(rot));
                    let a = joint_frame.orientation * joint.axis;
                    let o = joint_frame.position;
                    Some((
                        d,
                        Motion {
                            angular: a,
                            linear: o.cross(&a),
                        },
                    ))
                }
                (JointKind::Prismatic, Some(d)) => {
                    let q = cfg.joint_positions[d];
                    let t = Translation3::from(joint.axis * q);
                    link_poses[l] = joint_frame.compose(&Pose::new(t.vector, UnitQuaternion::identity()));
                    let a = joint_frame.orientation * joint.axis;
                    Some((
                        d,
                        Motion {
                            angular: Vec3::zeros(),
                            linear: a,
                        },
                    ))
                }
                _ => {
                    link_poses[l] = joint_frame;
                    None
                }
            };
            if let Some((d, m)) = motion {
                motions[off + d] = m;
            }
        }
        Ok(Self {
            link_poses,
            motions,
            base_position: base.position,
        })
    }

    pub fn frame_pose(&self, model: &RobotModel, frame: usize) -> Pose {
        let f = &model.frames[frame];
        self.link_poses[f.link].compose(&f.origin)
    }

    /// Tangent columns that move `link`.
    pub fn columns(&self, model: &RobotModel, link: usize) -> impl Iterator<Item = usize> + '_ {
        let off = model.base_dim();
        let base = 0..off;
        let support: Vec<usize> = model.support(link).iter().map(|d| off + d).collect();
        base.chain(support)
    }

    /// Local-world-aligned 6×nv Jacobian, rows `(linear; angular)`.
    pub fn frame_jacobian(&self, model: &RobotModel, frame: usize) -> DMatrix<f64> {
        let p = self.frame_pose(model, frame).position;
        let link = model.frames[frame].link;
        let mut jac = DMatrix::zeros(6, model.nv());
        for c in self.columns(model, link) {
            let m = &self.motions[c];
            let v = m.point_velocity(&p);
            jac.fixed_view_mut::<3, 1>(0, c).copy_from(&v);
            jac.fixed_view_mut::<3, 1>(3, c).copy_from(&m.angular);
        }
        jac
    }

    /// Subtree masses and first mass moments `Σ m c` (world), per link.
    pub fn subtree_mass_moments(&self, model: &RobotModel) -> (Vec<f64>, Vec<Vec3>) {
        let nl = model.links.len();
        let mut mass = vec![0.0; nl];
        let mut moment = vec![Vec3::zeros(); nl];
        for (l, link) in model.links.iter().enumerate() {
            mass[l] = link.mass;
            moment[l] = link.mass * self.link_poses[l].transform_point(&link.com);
        }
        for &l in model.topo().iter().rev() {
            if let Some(ji) = model.parent_joint(l) {
                let p = model.joints[ji].parent;
                mass[p] += mass[l];
                let m = moment[l];
                moment[p] += m;
            }
        }
        (mass, moment)
    }

    /// World center of mass of the whole robot.
    pub fn com(&self, model: &RobotModel) -> Vec3 {
        let (mass, moment) = self.subtree_mass_moments(model);
        moment[model.root()] / mass[model.root()]
    }
}

/// World pose of every link and named frame, keyed by name.
pub fn forward_kinematics(model: &RobotModel, cfg: &Configuration) -> Result<BTreeMap<String, Pose>> {
    let kin = Kinematics::compute(model, cfg)?;
    Ok(model
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| (f.name.clone(), kin.frame_pose(model, i)))
        .collect())
}

pub fn frame_jacobian(model: &RobotModel, cfg: &Configuration, frame: &str) -> Result<DMatrix<f64>> {
    let id = model.frame_id(frame)?;
    let kin = Kinematics::compute(model, cfg)?;
    Ok(kin.frame_jacobian(model, id))
}

/// `G(q) = ∂U/∂q` with `U = −Σ mᵢ g·p_com,i`, in the tangent layout.
pub fn gravity_vector(model: &RobotModel, cfg: &Configuration) -> Result<DVector<f64>> {
    let kin = Kinematics::compute(model, cfg)?;
    Ok(gravity_from_kinematics(model, &kin))
}

pub(crate) fn gravity_from_kinematics(model: &RobotModel, kin: &Kinematics) -> DVector<f64> {
    let (mass, moment) = kin.subtree_mass_moments(model);
    let g = model.gravity;
    let off = model.base_dim();
    let mut out = DVector::zeros(model.nv());
    let root = model.root();
    for c in 0..off {
        out[c] = -gravity_power(&kin.motions[c], mass[root], &moment[root], &g);
    }
    for d in 0..model.dof() {
        let child = model.dof_joint(d).child;
        out[off + d] = -gravity_power(&kin.motions[off + d], mass[child], &moment[child], &g);
    }
    out
}

/// Power of the gravity forces on a subtree moving with `m`.
fn gravity_power(m: &Motion, mass: f64, moment: &Vec3, g: &Vec3) -> f64 {
    // Σ mᵢ g·(v + ω×cᵢ) = M g·v + g·(ω × Σ mᵢ cᵢ)
    mass * g.dot(&m.linear) + g.dot(&m.angular.cross(moment))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Joint, JointLimits, Link};
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn single_revolute(axis: Vec3, com: Vec3, mass: f64, floating: bool) -> RobotModel {
        let links = vec![
            Link {
                name: "base".into(),
                mass: 1.0,
                com: Vec3::zeros(),
            },
            Link {
                name: "arm".into(),
                mass,
                com,
            },
        ];
        let joints = vec![Joint {
            name: "j".into(),
            kind: JointKind::Revolute,
            parent: 0,
            child: 1,
            origin: Pose::identity(),
            axis,
            limits: Some(JointLimits {
                lower: -3.0,
                upper: 3.0,
                velocity: 1.0,
                effort: 100.0,
            }),
            dof: None,
        }];
        let frames = vec![crate::model::Frame {
            name: "tip".into(),
            link: 1,
            origin: Pose::from_translation(1.0, 0.0, 0.0),
        }];
        RobotModel::new("t", links, joints, frames, floating).unwrap()
    }

    fn cfg(q: &[f64]) -> Configuration {
        Configuration::new(Pose::identity(), DVector::from_row_slice(q))
    }

    #[test]
    fn zero_configuration_chains_origins() {
        let m = single_revolute(Vec3::z(), Vec3::zeros(), 1.0, false);
        let fk = forward_kinematics(&m, &cfg(&[0.0])).unwrap();
        assert_relative_eq!(fk["tip"].position, Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn revolute_rotates_child_frame() {
        let m = single_revolute(Vec3::z(), Vec3::zeros(), 1.0, false);
        let fk = forward_kinematics(&m, &cfg(&[FRAC_PI_2])).unwrap();
        assert_relative_eq!(fk["tip"].position, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn base_translation_moves_every_frame() {
        let m = single_revolute(Vec3::z(), Vec3::zeros(), 1.0, true);
        let c0 = cfg(&[0.4]);
        let mut c1 = c0.clone();
        c1.base_pose = Pose::from_translation(0.0, 0.0, 0.5);
        let a = forward_kinematics(&m, &c0).unwrap();
        let b = forward_kinematics(&m, &c1).unwrap();
        for (k, p) in &a {
            assert_relative_eq!(b[k].position - p.position, Vec3::new(0.0, 0.0, 0.5), epsilon = 1e-12);
        }
    }

    #[test]
    fn jacobian_columns() {
        let m = single_revolute(Vec3::z(), Vec3::zeros(), 1.0, false);
        let j = frame_jacobian(&m, &cfg(&[0.0]), "tip").unwrap();
        assert_eq!(j.shape(), (6, 1));
        assert_relative_eq!(
            j.column(0).into_owned(),
            DVector::from_row_slice(&[0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
        );

        let m = single_revolute(Vec3::z(), Vec3::zeros(), 1.0, true);
        let c = Configuration::new(
            Pose::from_xyz_rpy(Vec3::new(0.3, -0.2, 1.0), Vec3::new(0.2, 0.1, -0.4)),
            DVector::from_row_slice(&[0.7]),
        );
        let j = frame_jacobian(&m, &c, "tip").unwrap();
        assert_eq!(j.shape(), (6, 7));
        assert_relative_eq!(j.view((0, 0), (3, 3)).into_owned(), nalgebra::DMatrix::identity(3, 3));
        assert!(matches!(
            frame_jacobian(&m, &c, "nope"),
            Err(crate::Error::UnknownFrame(_))
        ));
    }

    #[test]
    fn pendulum_gravity() {
        // Axis -y lifts the +x COM toward +z as q grows.
        let m = single_revolute(-Vec3::y(), Vec3::new(0.5, 0.0, 0.0), 2.0, false);
        let g = gravity_vector(&m, &cfg(&[0.0])).unwrap();
        assert_relative_eq!(g[0], 9.81, epsilon = 1e-12);
        let g = gravity_vector(&m, &cfg(&[FRAC_PI_2])).unwrap();
        assert!(g[0].abs() < 1e-9);
    }

    #[test]
    fn floating_gravity_linear_rows_balance_weight() {
        let m = single_revolute(Vec3::z(), Vec3::new(0.5, 0.1, 0.0), 2.0, true);
        let g = gravity_vector(&m, &cfg(&[0.3])).unwrap();
        assert_relative_eq!(g[2], 3.0 * 9.81, epsilon = 1e-12);
        assert_eq!((g[0], g[1]), (0.0, 0.0));
    }
}
