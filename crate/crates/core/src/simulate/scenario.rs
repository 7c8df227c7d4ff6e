//! Scenario files and the deterministic runner.
//!
//! A scenario is a JSON document:
//!
//! ```json
//! {
//!   "name": "reach",
//!   "model": "../fixtures/dual_arm.urdf",
//!   "initial": { "joints": { "left_elbow": -0.8 }, "ground_frame": null, "base_pose": null },
//!   "contacts": [ { "spec": { "frame": "left_foot", "kind": "plane", ... }, "enabled": true } ],
//!   "retarget": { "w_torque": 1e-4 },
//!   "filter": { "v_max_linear": 0.3 },
//!   "admittance": {},
//!   "settle": { "tol": 1e-10, "max_iters": 2000 },
//!   "record_frames": ["left_hand"],
//!   "timeline": [ { "t": 0.5, "event": { "type": "shift_target", "frame": "left_hand", "translation": [0.3, 0, 0] } } ],
//!   "duration": 3.0,
//!   "rate": 200
//! }
//! ```
//!
//! `model` is resolved against the scenario file's directory. Joints not
//! listed in `initial.joints` start at zero. `ground_frame` lifts a
//! floating base so that frame sits at height zero. `retarget.dt` is
//! always replaced by `1/rate`. With `settle`, the loop first converges
//! without commands and the trace starts from the settled state.
//!
//! Timeline events (`type`): `set_target {frame, pose}`,
//! `shift_target {frame, translation}` (current pose moved in world
//! axes), `switch {frame, action: add|remove, duration?}`,
//! `external_wrench {frame, wrench, duration}`. An event with time `t`
//! applies before the first tick starting at or after `t`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::contacts::{ContactSet, ContactSpec, SwitchAction};
use crate::error::{read_file, Error, Result};
use crate::geometry::{Pose, Vec3, Wrench};
use crate::model::{forward_kinematics, Configuration, RobotModel};
use crate::pipeline::{AdmittanceParams, FilterParams};
use crate::retarget::{converge, RetargetConfig, RetargetState};

use super::session::{Session, SessionEvent};
use super::trace::{TickRecord, Trace, TraceHeader};

fn default_rate() -> f64 {
    200.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub model: PathBuf,
    #[serde(default)]
    pub initial: InitialConfiguration,
    #[serde(default)]
    pub contacts: Vec<ScenarioContact>,
    #[serde(default)]
    pub retarget: RetargetConfig,
    #[serde(default)]
    pub filter: FilterParams,
    #[serde(default)]
    pub admittance: AdmittanceParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settle: Option<Settle>,
    /// Frames whose poses are recorded besides targets and contacts.
    #[serde(default)]
    pub record_frames: Vec<String>,
    #[serde(default)]
    pub timeline: Vec<TimedEvent>,
    pub duration: f64,
    #[serde(default = "default_rate")]
    pub rate: f64,
    /// Directory the model path is relative to; set by [`Scenario::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfiguration {
    #[serde(default)]
    pub base_pose: Option<Pose>,
    #[serde(default)]
    pub joints: BTreeMap<String, f64>,
    #[serde(default)]
    pub ground_frame: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioContact {
    pub spec: ContactSpec,
    #[serde(default = "default_true")]
    pub enabled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settle {
    pub tol: f64,
    pub max_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedEvent {
    pub t: f64,
    pub event: ScenarioEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioEvent {
    SetTarget {
        frame: String,
        pose: Pose,
    },
    ShiftTarget {
        frame: String,
        translation: [f64; 3],
    },
    Switch {
        frame: String,
        action: SwitchAction,
        #[serde(default)]
        duration: Option<f64>,
    },
    ExternalWrench {
        frame: String,
        wrench: Wrench,
        duration: f64,
    },
}

impl ScenarioEvent {
    pub fn frame(&self) -> &str {
        match self {
            ScenarioEvent::SetTarget { frame, .. }
            | ScenarioEvent::ShiftTarget { frame, .. }
            | ScenarioEvent::Switch { frame, .. }
            | ScenarioEvent::ExternalWrench { frame, .. } => frame,
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut s: Scenario = serde_json::from_str(text)?;
        s.base_dir = base_dir.to_path_buf();
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&read_file(path)?, dir)
    }

    pub fn model_path(&self) -> PathBuf {
        self.base_dir.join(&self.model)
    }

    pub fn load_model(&self) -> Result<RobotModel> {
        crate::load_model(&self.model_path())
    }

    /// Number of ticks in the run.
    pub fn ticks(&self) -> usize {
        (self.duration * self.rate).round() as usize
    }

    pub fn retarget_config(&self) -> RetargetConfig {
        RetargetConfig {
            dt: 1.0 / self.rate,
            ..self.retarget.clone()
        }
    }

    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::Scenario(format!("rate must be positive, got {}", self.rate)));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Scenario(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        self.retarget_config().validate(model)?;
        let mut last = f64::NEG_INFINITY;
        for e in &self.timeline {
            if !(e.t >= last) {
                return Err(Error::Scenario(format!("timeline not sorted at t={}", e.t)));
            }
            last = e.t;
            model.frame_id(e.event.frame())?;
        }
        for f in &self.record_frames {
            model.frame_id(f)?;
        }
        let dof_names = model.dof_names();
        for name in self.initial.joints.keys() {
            if !dof_names.contains(name) {
                return Err(Error::Scenario(format!(
                    "unknown joint `{name}` in initial configuration"
                )));
            }
        }
        if let Some(g) = &self.initial.ground_frame {
            model.frame_id(g)?;
            if !model.floating_base {
                return Err(Error::Scenario("ground_frame needs a floating base".into()));
            }
        }
        for c in &self.contacts {
            c.spec.validate()?;
        }
        Ok(())
    }

    pub fn initial_configuration(&self, model: &RobotModel) -> Result<Configuration> {
        let names = model.dof_names();
        let q = DVector::from_iterator(
            model.dof(),
            names.iter().map(|n| self.initial.joints.get(n).copied().unwrap_or(0.0)),
        );
        let mut cfg = Configuration::new(self.initial.base_pose.unwrap_or_default(), q);
        if let Some(g) = &self.initial.ground_frame {
            let z = forward_kinematics(model, &cfg)?[g.as_str()].position.z;
            cfg.base_pose.position -= Vec3::new(0.0, 0.0, z);
        }
        Ok(cfg)
    }

    /// Validates the scenario and builds the session at time zero,
    /// settled if requested.
    pub fn session(&self) -> Result<Session> {
        let model = self.load_model()?;
        self.validate(&model)?;
        let config = self.retarget_config();
        let cfg = self.initial_configuration(&model)?;
        let contacts = ContactSet::new(
            &model,
            self.contacts.iter().map(|c| (c.spec.clone(), c.enabled)).collect(),
        )?;
        let mut state = RetargetState::new(&model, cfg, contacts)?;
        if let Some(s) = self.settle {
            let out = converge(&model, &state, &[], &config, s.tol, s.max_iters)?;
            if !out.converged {
                return Err(Error::Scenario(format!(
                    "settling did not converge in {} iterations (last rate {:e})",
                    out.iterations, out.last_rate_norm
                )));
            }
            state = out.state;
            state.time = 0.0;
            state.rate = DVector::zeros(0);
        }
        Session::new(model, state, config, self.filter, self.admittance)
    }
}

/// Applies one timeline event; rejections and illegal requests become
/// events in the record rather than aborting the run.
pub fn apply_event(session: &mut Session, event: &ScenarioEvent) -> Result<Option<SessionEvent>> {
    let outcome = match event {
        ScenarioEvent::SetTarget { frame, pose } => session.set_target(frame, *pose).map(|_| None),
        ScenarioEvent::ShiftTarget { frame, translation } => {
            let mut pose = session.state().frame_pose(session.model(), frame)?;
            pose.position += Vec3::from(*translation);
            session.set_target(frame, pose).map(|_| None)
        }
        ScenarioEvent::Switch {
            frame,
            action,
            duration,
        } => session.switch(frame, *action, *duration).map(Some),
        ScenarioEvent::ExternalWrench {
            frame,
            wrench,
            duration,
        } => session.apply_wrench(frame, *wrench, Some(*duration)).map(|_| None),
    };
    match outcome {
        Ok(e) => Ok(e),
        Err(e @ (Error::IllegalTransition(_) | Error::InvalidContact { .. })) => {
            log::warn!("event on `{}` rejected: {e}", event.frame());
            let frame = event.frame().to_string();
            let reason = e.to_string();
            Ok(Some(match event {
                ScenarioEvent::Switch { action, .. } => SessionEvent::SwitchRejected {
                    frame,
                    action: *action,
                    reason,
                },
                _ => SessionEvent::CommandRejected { frame, reason },
            }))
        }
        Err(e) => Err(e),
    }
}

/// Frames recorded in every trace record: contacts, timeline frames and
/// the scenario's extra frames, deduplicated in that order.
fn recorded_frames(s: &Scenario) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let all = s
        .contacts
        .iter()
        .map(|c| c.spec.frame.clone())
        .chain(s.timeline.iter().map(|e| e.event.frame().to_string()))
        .chain(s.record_frames.iter().cloned());
    for f in all {
        if !out.contains(&f) {
            out.push(f);
        }
    }
    out
}

/// Runs a scenario to completion.
pub fn run_scenario(s: &Scenario) -> Result<Trace> {
    let mut session = s.session()?;
    let frames = recorded_frames(s);
    let header = TraceHeader::new(&s.name, &session, &frames);
    let dt = session.config().dt;
    let mut records = Vec::with_capacity(s.ticks());
    let mut next_event = 0;
    for k in 0..s.ticks() {
        let start = k as f64 * dt;
        let mut events = Vec::new();
        while next_event < s.timeline.len() && s.timeline[next_event].t <= start + 1e-9 {
            if let Some(e) = apply_event(&mut session, &s.timeline[next_event].event)? {
                events.push(e);
            }
            next_event += 1;
        }
        let report = session.tick()?;
        events.extend(report.events.iter().cloned());
        records.push(TickRecord::capture(&session, &report, events, &frames)?);
    }
    Ok(Trace { header, records })
}
