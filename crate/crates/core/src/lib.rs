//! Quasi-static multi-contact whole-body retargeting.
//!
//! The crate turns live effector pose commands into feasible robot postures
//! and contact wrench distributions. Every tick a dense convex QP over the
//! configuration and wrench rates is assembled from the linearized static
//! equilibrium `G(q) = S tau + J(q)^T lambda`, contact stability inequalities
//! (unilaterality, friction pyramid, center of pressure, torsion) and
//! actuation limits, then solved and integrated.
//!
//! Module map:
//! - [`geometry`]: poses, twists, wrenches.
//! - [`model`]: robot description ingestion, forward kinematics, Jacobians, gravity.
//! - [`statics`]: equilibrium residual, joint torques and their analytical derivatives.
//! - [`contacts`]: contact specs, margins, inequality rows and switching ramps.
//! - [`qp`]: dense Goldfarb-Idnani QP solver.
//! - [`retarget`]: QP assembly, stepping and convergence.
//! - [`pipeline`]: command filters and admittance.
//! - [`simulate`]: scenarios, traces, the independent oracle and trace verification.

pub mod contacts;
pub mod error;
pub mod geometry;
pub mod model;
pub mod pipeline;
pub mod qp;
pub mod retarget;
pub mod simulate;
pub mod statics;

pub use error::{Error, Result};

/// Directory holding the shipped robot descriptions.
pub fn fixtures_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Directory holding the shipped scenario files.
pub fn scenarios_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

/// Names of the shipped robot descriptions, without extension.
pub const FIXTURE_MODELS: [&str; 5] = ["pendulum", "two_link_arm", "box", "dual_arm", "biped"];

/// Parses a robot description file.
pub fn load_model(path: &std::path::Path) -> Result<model::RobotModel> {
    model::parse_robot_description(&error::read_file(path)?)
}

/// Loads one of [`FIXTURE_MODELS`] by name.
pub fn load_fixture(name: &str) -> Result<model::RobotModel> {
    load_model(&fixtures_dir().join(format!("{name}.urdf")))
}
