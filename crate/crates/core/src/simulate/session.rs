//! The retargeting loop with its command conditioning: per-frame targets
//! pass through the filters and the admittance offset, then one retarget
//! tick runs. Scenario runs and the live service both drive this type, so
//! a recorded input sequence replays to the same trace.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::contacts::{check_add_alignment, switch_begin, ContactPhase, SwitchAction, DEFAULT_RAMP_DURATION};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Wrench};
use crate::model::{Kinematics, RobotModel};
use crate::pipeline::{
    admittance_tick, compose_command, filter_tick, AdmittanceParams, AdmittanceState, FilterParams, FilterState,
};
use crate::qp::QpStatus;
use crate::retarget::{
    step, switch_is_feasible, tracking_targets, EffectorCommand, ReleasedContact, RetargetConfig, RetargetState,
};

/// Notable things that happened while applying inputs or ticking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SessionEvent {
    SwitchStarted {
        frame: String,
        action: SwitchAction,
    },
    SwitchCompleted {
        frame: String,
        action: SwitchAction,
    },
    SwitchRejected {
        frame: String,
        action: SwitchAction,
        reason: String,
    },
    /// The tracking pull of this frame hit the velocity bound.
    CommandClamped {
        frame: String,
    },
    SolverSoftFail {
        status: String,
    },
    /// A target or wrench input that could not be applied.
    CommandRejected {
        frame: String,
        reason: String,
    },
}

#[derive(Debug, Clone)]
struct Target {
    raw: Pose,
    filter: FilterState,
    admittance: AdmittanceState,
    wrench: Wrench,
    wrench_until: Option<f64>,
}

/// Outcome of one [`Session::tick`].
#[derive(Debug, Clone)]
pub struct TickReport {
    pub events: Vec<SessionEvent>,
    pub status: QpStatus,
    pub soft_failure: bool,
    pub iterations: usize,
    pub build_time: Duration,
    pub solve_time: Duration,
    pub released: Vec<ReleasedContact>,
}

#[derive(Debug, Clone)]
pub struct Session {
    model: RobotModel,
    config: RetargetConfig,
    filter: FilterParams,
    admittance: AdmittanceParams,
    state: RetargetState,
    targets: BTreeMap<String, Target>,
    commands: Vec<EffectorCommand>,
    clamped: BTreeSet<String>,
}

impl Session {
    pub fn new(
        model: RobotModel,
        state: RetargetState,
        config: RetargetConfig,
        filter: FilterParams,
        admittance: AdmittanceParams,
    ) -> Result<Self> {
        config.validate(&model)?;
        Ok(Self {
            model,
            config,
            filter,
            admittance,
            state,
            targets: BTreeMap::new(),
            commands: Vec::new(),
            clamped: BTreeSet::new(),
        })
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn state(&self) -> &RetargetState {
        &self.state
    }

    pub fn config(&self) -> &RetargetConfig {
        &self.config
    }

    pub fn filter_params(&self) -> &FilterParams {
        &self.filter
    }

    pub fn admittance_params(&self) -> &AdmittanceParams {
        &self.admittance
    }

    pub fn time(&self) -> f64 {
        self.state.time
    }

    /// Commands sent to the last tick.
    pub fn commands(&self) -> &[EffectorCommand] {
        &self.commands
    }

    /// Raw operator targets by frame.
    pub fn targets(&self) -> impl Iterator<Item = (&str, &Pose)> {
        self.targets.iter().map(|(f, t)| (f.as_str(), &t.raw))
    }

    pub fn set_config(&mut self, config: RetargetConfig) -> Result<()> {
        config.validate(&self.model)?;
        self.config = config;
        Ok(())
    }

    pub fn set_filter_params(&mut self, params: FilterParams) {
        self.filter = params;
        for t in self.targets.values_mut() {
            t.filter.params = params;
        }
    }

    pub fn set_admittance_params(&mut self, params: AdmittanceParams) {
        self.admittance = params;
        for t in self.targets.values_mut() {
            t.admittance.params = params;
        }
    }

    fn check_free(&self, frame: &str) -> Result<()> {
        self.model.frame_id(frame)?;
        if let Some(i) = self.state.contacts.index_of(frame) {
            if self.state.contacts.entries[i].state.is_active() {
                return Err(Error::InvalidContact {
                    frame: frame.to_string(),
                    msg: "frame is an active contact and cannot be commanded".into(),
                });
            }
        }
        Ok(())
    }

    fn target_entry(&mut self, frame: &str) -> Result<&mut Target> {
        if !self.targets.contains_key(frame) {
            let start = match self.state.holds.get(frame) {
                Some(p) => *p,
                None => self.state.frame_pose(&self.model, frame)?,
            };
            self.targets.insert(
                frame.to_string(),
                Target {
                    raw: start,
                    filter: FilterState::new(start, self.filter),
                    admittance: AdmittanceState::new(self.admittance),
                    wrench: Wrench::zero(),
                    wrench_until: None,
                },
            );
        }
        Ok(self.targets.get_mut(frame).expect("inserted above"))
    }

    /// Sets the raw operator target of a free effector.
    pub fn set_target(&mut self, frame: &str, pose: Pose) -> Result<()> {
        self.check_free(frame)?;
        self.target_entry(frame)?.raw = pose;
        Ok(())
    }

    /// Feeds a measured wrench (effector command frame) to the admittance
    /// of a free effector, for `duration` seconds or until replaced.
    pub fn apply_wrench(&mut self, frame: &str, wrench: Wrench, duration: Option<f64>) -> Result<()> {
        self.check_free(frame)?;
        let now = self.state.time;
        let t = self.target_entry(frame)?;
        t.wrench = wrench;
        t.wrench_until = duration.map(|d| now + d);
        Ok(())
    }

    /// Starts a contact switch after the alignment gate and a one-tick
    /// feasibility trial. Gate or trial failures are reported as a
    /// rejection event; transitions the contact state machine forbids are
    /// errors.
    pub fn switch(&mut self, frame: &str, action: SwitchAction, duration: Option<f64>) -> Result<SessionEvent> {
        let duration = duration.unwrap_or(DEFAULT_RAMP_DURATION);
        let idx = self
            .state
            .contacts
            .index_of(frame)
            .ok_or_else(|| Error::InvalidContact {
                frame: frame.to_string(),
                msg: "no contact declared on this frame".into(),
            })?;
        let entry = &self.state.contacts.entries[idx];
        switch_begin(&entry.spec, &entry.state, action, duration, 0.0)?;
        let reject = |reason: String| SessionEvent::SwitchRejected {
            frame: frame.to_string(),
            action,
            reason,
        };
        if action == SwitchAction::Add {
            if let Some(surface) = &entry.spec.surface {
                let current = self.state.frame_pose(&self.model, frame)?;
                if let Err(e) = check_add_alignment(entry.spec.kind, &current, surface) {
                    return Ok(reject(e.to_string()));
                }
            }
        }
        let others: Vec<EffectorCommand> = self.commands.iter().filter(|c| c.frame != frame).cloned().collect();
        if !switch_is_feasible(&self.model, &self.state, frame, action, &others, &self.config)? {
            return Ok(reject("no feasible tick with the switch applied".into()));
        }
        self.state.begin_switch(&self.model, frame, action, duration)?;
        if action == SwitchAction::Add {
            self.targets.remove(frame);
            self.commands.retain(|c| c.frame != frame);
            self.clamped.remove(frame);
        }
        Ok(SessionEvent::SwitchStarted {
            frame: frame.to_string(),
            action,
        })
    }

    /// Conditions every target and runs one retarget tick.
    pub fn tick(&mut self) -> Result<TickReport> {
        let dt = self.config.dt;
        let now = self.state.time;
        let mut commands = Vec::with_capacity(self.targets.len());
        for (frame, t) in self.targets.iter_mut() {
            if t.wrench_until.is_some_and(|u| now >= u - 1e-12) {
                t.wrench = Wrench::zero();
                t.wrench_until = None;
            }
            t.filter = filter_tick(&t.filter, &t.raw, dt);
            t.admittance = admittance_tick(&t.admittance, &t.wrench, dt);
            commands.push(EffectorCommand::new(
                frame.clone(),
                compose_command(&t.filter.filtered, &t.admittance),
            ));
        }
        self.commands = commands;

        let mut events = Vec::new();
        let kin = Kinematics::compute(&self.model, &self.state.cfg)?;
        for t in tracking_targets(&self.model, &kin, &self.state, &self.commands, &self.config)? {
            if t.clamped {
                if self.clamped.insert(t.frame.clone()) {
                    events.push(SessionEvent::CommandClamped { frame: t.frame });
                }
            } else {
                self.clamped.remove(&t.frame);
            }
        }

        let before: Vec<ContactPhase> = self.state.contacts.entries.iter().map(|e| e.state.phase).collect();
        let out = step(&self.model, &self.state, &self.commands, &self.config)?;
        if out.soft_failure {
            events.push(SessionEvent::SolverSoftFail {
                status: format!("{:?}", out.status).to_lowercase(),
            });
        }
        self.state = out.state;
        if out.soft_failure {
            // The held state still occupies its tick on the clock.
            self.state.time = now + dt;
        }
        for (e, was) in self.state.contacts.entries.iter().zip(before) {
            let action = match (was, e.state.phase) {
                (ContactPhase::RampingIn, ContactPhase::Enabled) => SwitchAction::Add,
                (ContactPhase::RampingOut, ContactPhase::Disabled) => SwitchAction::Remove,
                _ => continue,
            };
            events.push(SessionEvent::SwitchCompleted {
                frame: e.spec.frame.clone(),
                action,
            });
        }
        Ok(TickReport {
            events,
            status: out.status,
            soft_failure: out.soft_failure,
            iterations: out.iterations,
            build_time: out.build_time,
            solve_time: out.solve_time,
            released: out.released,
        })
    }
}
