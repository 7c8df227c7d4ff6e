//! Robot description: kinematic tree, masses, limits and named frames.
//!
//! Tangent layout used by every Jacobian and derivative in the crate:
//! `[base linear (3); base angular (3); joints (n)]` for floating-base
//! models, `[joints (n)]` otherwise. Base twists are local-world-aligned.

mod kinematics;
mod urdf;

use std::collections::HashMap;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

pub(crate) use kinematics::gravity_from_kinematics;
pub use kinematics::{forward_kinematics, frame_jacobian, gravity_vector, Kinematics, Motion};
pub use urdf::parse_robot_description;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Revolute,
    Prismatic,
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    pub mass: f64,
    /// Center of mass in the link frame.
    pub com: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimits {
    pub lower: f64,
    pub upper: f64,
    pub velocity: f64,
    pub effort: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    pub parent: usize,
    pub child: usize,
    pub origin: Pose,
    pub axis: Vec3,
    /// Present for every actuated joint.
    pub limits: Option<JointLimits>,
    /// Index into the joint position vector, `None` for fixed joints.
    pub dof: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub name: String,
    pub link: usize,
    pub origin: Pose,
}

/// Immutable kinematic tree. Build it with [`parse_robot_description`] or
/// [`RobotModel::new`], both of which validate the tree invariants.
#[derive(Debug, Clone)]
pub struct RobotModel {
    pub name: String,
    pub links: Vec<Link>,
    pub joints: Vec<Joint>,
    pub frames: Vec<Frame>,
    pub floating_base: bool,
    pub gravity: Vec3,
    /// Non-fatal notes collected while parsing (ignored elements).
    pub warnings: Vec<String>,
    root: usize,
    frame_index: HashMap<String, usize>,
    /// Links in parent-before-child order.
    topo: Vec<usize>,
    parent_joint: Vec<Option<usize>>,
    /// Joint index of each dof.
    dof_joints: Vec<usize>,
    /// `support[l]` lists the dofs on the root-to-link path.
    support: Vec<Vec<usize>>,
    /// `ancestor[k][j]`: dof `k` lies on the root path of dof `j` (or is `j`).
    dof_ancestor: Vec<Vec<bool>>,
}

impl RobotModel {
    /// Validates and indexes a tree. Every link also becomes a frame with
    /// its own name and identity origin; `extra_frames` are appended.
    pub fn new(
        name: impl Into<String>,
        links: Vec<Link>,
        mut joints: Vec<Joint>,
        extra_frames: Vec<Frame>,
        floating_base: bool,
    ) -> Result<Self> {
        for l in &links {
            if !(l.mass > 0.0 && l.mass.is_finite()) {
                return Err(Error::InvalidElement {
                    path: format!("robot/link[{}]/inertial/mass", l.name),
                    msg: format!("mass must be positive, got {}", l.mass),
                });
            }
        }
        let nl = links.len();
        if nl == 0 {
            return Err(Error::NotATree("no links".into()));
        }
        let mut parent_joint: Vec<Option<usize>> = vec![None; nl];
        for (ji, j) in joints.iter().enumerate() {
            if j.parent >= nl || j.child >= nl {
                return Err(Error::NotATree(format!("joint `{}` references a missing link", j.name)));
            }
            if let Some(prev) = parent_joint[j.child] {
                return Err(Error::NotATree(format!(
                    "link `{}` has two parent joints (`{}`, `{}`)",
                    links[j.child].name, joints[prev].name, j.name
                )));
            }
            parent_joint[j.child] = Some(ji);
            validate_joint(j)?;
        }
        // Cycle detection by walking parent pointers.
        for start in 0..nl {
            let mut seen = vec![false; nl];
            let mut cur = start;
            while let Some(ji) = parent_joint[cur] {
                if seen[cur] {
                    return Err(Error::Cycle {
                        link: links[cur].name.clone(),
                    });
                }
                seen[cur] = true;
                cur = joints[ji].parent;
            }
        }
        let roots: Vec<usize> = (0..nl).filter(|&l| parent_joint[l].is_none()).collect();
        if roots.len() != 1 {
            let names: Vec<&str> = roots.iter().map(|&r| links[r].name.as_str()).collect();
            return Err(Error::NotATree(format!("expected one root link, found {:?}", names)));
        }
        let root = roots[0];

        let mut children: Vec<Vec<usize>> = vec![Vec::new(); nl];
        for (ji, j) in joints.iter().enumerate() {
            children[j.parent].push(ji);
        }
        let mut topo = Vec::with_capacity(nl);
        let mut stack = vec![root];
        while let Some(l) = stack.pop() {
            topo.push(l);
            for &ji in children[l].iter().rev() {
                stack.push(joints[ji].child);
            }
        }

        // Dofs numbered in depth-first order.
        let mut dof_joints = Vec::new();
        for &l in &topo {
            if let Some(ji) = parent_joint[l] {
                if joints[ji].kind != JointKind::Fixed {
                    joints[ji].dof = Some(dof_joints.len());
                    dof_joints.push(ji);
                } else {
                    joints[ji].dof = None;
                }
            }
        }
        let mut support: Vec<Vec<usize>> = vec![Vec::new(); nl];
        for &l in &topo {
            if let Some(ji) = parent_joint[l] {
                let mut s = support[joints[ji].parent].clone();
                if let Some(d) = joints[ji].dof {
                    s.push(d);
                }
                support[l] = s;
            }
        }
        let n = dof_joints.len();
        let mut dof_ancestor = vec![vec![false; n]; n];
        for (j, &ji) in dof_joints.iter().enumerate() {
            for &k in &support[joints[ji].child] {
                dof_ancestor[k][j] = true;
            }
        }

        let mut frames: Vec<Frame> = links
            .iter()
            .enumerate()
            .map(|(i, l)| Frame {
                name: l.name.clone(),
                link: i,
                origin: Pose::identity(),
            })
            .collect();
        frames.extend(extra_frames);
        let mut frame_index = HashMap::new();
        for (i, f) in frames.iter().enumerate() {
            if f.link >= nl {
                return Err(Error::InvalidElement {
                    path: format!("robot/frame[{}]", f.name),
                    msg: "parent link out of range".into(),
                });
            }
            if frame_index.insert(f.name.clone(), i).is_some() {
                return Err(Error::InvalidElement {
                    path: format!("robot/frame[{}]", f.name),
                    msg: "duplicate frame or link name".into(),
                });
            }
        }

        Ok(Self {
            name: name.into(),
            links,
            joints,
            frames,
            floating_base,
            gravity: Vec3::new(0.0, 0.0, -9.81),
            warnings: Vec::new(),
            root,
            frame_index,
            topo,
            parent_joint,
            dof_joints,
            support,
            dof_ancestor,
        })
    }

    /// Actuated joint count.
    pub fn dof(&self) -> usize {
        self.dof_joints.len()
    }

    /// Offset of the first joint column in tangent vectors.
    pub fn base_dim(&self) -> usize {
        if self.floating_base {
            6
        } else {
            0
        }
    }

    /// Tangent dimension `6 + n` (floating) or `n`.
    pub fn nv(&self) -> usize {
        self.base_dim() + self.dof()
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn frame_id(&self, name: &str) -> Result<usize> {
        self.frame_index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownFrame(name.to_string()))
    }

    pub fn has_frame(&self, name: &str) -> bool {
        self.frame_index.contains_key(name)
    }

    pub fn dof_joint(&self, dof: usize) -> &Joint {
        &self.joints[self.dof_joints[dof]]
    }

    /// Limits of every actuated joint in dof order.
    pub fn dof_limits(&self) -> Vec<JointLimits> {
        (0..self.dof())
            .map(|d| self.dof_joint(d).limits.expect("actuated joints carry limits"))
            .collect()
    }

    pub fn dof_names(&self) -> Vec<String> {
        (0..self.dof()).map(|d| self.dof_joint(d).name.clone()).collect()
    }

    /// Dofs supporting `link`, root first.
    pub fn support(&self, link: usize) -> &[usize] {
        &self.support[link]
    }

    /// True when dof `k` moves dof `j`'s child link (including `k == j`).
    pub fn dof_is_ancestor(&self, k: usize, j: usize) -> bool {
        self.dof_ancestor[k][j]
    }

    pub(crate) fn topo(&self) -> &[usize] {
        &self.topo
    }

    pub(crate) fn parent_joint(&self, link: usize) -> Option<usize> {
        self.parent_joint[link]
    }

    /// Longest root-to-leaf chain, counted in joints.
    pub fn tree_depth(&self) -> usize {
        let mut depth = vec![0usize; self.links.len()];
        for &l in &self.topo {
            if let Some(ji) = self.parent_joint[l] {
                depth[l] = depth[self.joints[ji].parent] + 1;
            }
        }
        depth.into_iter().max().unwrap_or(0)
    }
}

fn validate_joint(j: &Joint) -> Result<()> {
    let path = format!("robot/joint[{}]", j.name);
    let n = j.axis.norm();
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidElement {
            path: format!("{path}/axis"),
            msg: format!("axis must be unit norm, got norm {n}"),
        });
    }
    match (j.kind, j.limits) {
        (JointKind::Fixed, _) => Ok(()),
        (kind, None) => Err(Error::MissingLimit {
            path,
            kind: format!("{kind:?}").to_lowercase(),
        }),
        (_, Some(l)) => {
            if !(l.lower <= l.upper) {
                return Err(Error::InvalidElement {
                    path: format!("{path}/limit"),
                    msg: format!("lower {} > upper {}", l.lower, l.upper),
                });
            }
            if !(l.velocity > 0.0 && l.effort > 0.0) {
                return Err(Error::InvalidElement {
                    path: format!("{path}/limit"),
                    msg: "velocity and effort limits must be positive".into(),
                });
            }
            Ok(())
        }
    }
}

/// Floating-base pose plus actuated joint positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    /// World placement of the root link. Constant for fixed-base models.
    pub base_pose: Pose,
    pub joint_positions: DVector<f64>,
}

impl Configuration {
    pub fn new(base_pose: Pose, joint_positions: DVector<f64>) -> Self {
        Self {
            base_pose,
            joint_positions,
        }
    }

    pub fn zero(model: &RobotModel) -> Self {
        Self::new(Pose::identity(), DVector::zeros(model.dof()))
    }

    pub fn check(&self, model: &RobotModel) -> Result<()> {
        if self.joint_positions.len() != model.dof() {
            return Err(Error::Dimension {
                what: "joint positions",
                expected: model.dof(),
                got: self.joint_positions.len(),
            });
        }
        Ok(())
    }

    /// Moves along a tangent direction: base part through
    /// [`crate::geometry::pose_integrate`], joints additively.
    pub fn integrate(&self, model: &RobotModel, v: &DVector<f64>, dt: f64) -> Configuration {
        let off = model.base_dim();
        let base_pose = if model.floating_base {
            let t = crate::geometry::Twist::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]));
            crate::geometry::pose_integrate(&self.base_pose, &t, dt)
        } else {
            self.base_pose
        };
        let q = &self.joint_positions + v.rows(off, model.dof()) * dt;
        Configuration::new(base_pose, q)
    }
}
