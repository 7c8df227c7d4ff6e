//! The loop state owned by the service thread: message handling at tick
//! boundaries, state snapshots, and the message log that replays a live
//! session into a trace.

use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{bail, Context};
use retarget_core::contacts::margins_with_bounds;
use retarget_core::model::{Kinematics, RobotModel};
use retarget_core::simulate::{Scenario, Session, SessionEvent, TickRecord, Trace, TraceHeader};
use serde::{Deserialize, Serialize};

use crate::protocol::{ClientMessage, ErrorCode, StateMessage, WireContact, WireError, PROTOCOL_VERSION};

/// Accepted range of a settable parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRange {
    pub lo: f64,
    pub hi: f64,
    /// The lower bound itself is excluded.
    pub lo_open: bool,
}

impl ParamRange {
    const fn closed(lo: f64, hi: f64) -> Self {
        Self { lo, hi, lo_open: false }
    }

    const fn positive(hi: f64) -> Self {
        Self {
            lo: 0.0,
            hi,
            lo_open: true,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v.is_finite() && (if self.lo_open { v > self.lo } else { v >= self.lo }) && v <= self.hi
    }
}

/// Whitelist of `set_param` paths.
pub const PARAMS: &[(&str, ParamRange)] = &[
    ("weights.position", ParamRange::closed(0.0, 1e6)),
    ("weights.orientation", ParamRange::closed(0.0, 1e6)),
    ("weights.posture", ParamRange::closed(0.0, 1e6)),
    ("weights.torque", ParamRange::closed(0.0, 1e6)),
    ("weights.wrench", ParamRange::closed(0.0, 1e6)),
    ("weights.wrench_rate", ParamRange::closed(0.0, 1e6)),
    ("weights.joint_velocity", ParamRange::closed(0.0, 1e6)),
    ("weights.tracking_damping", ParamRange::closed(0.0, 1e6)),
    ("retarget.k_eq", ParamRange::positive(1.0)),
    ("retarget.joint_margin", ParamRange::closed(0.0, 0.5)),
    ("retarget.torque_safety", ParamRange::positive(1.0)),
    ("retarget.v_max_linear", ParamRange::positive(10.0)),
    ("retarget.v_max_angular", ParamRange::positive(20.0)),
    ("filter.cutoff", ParamRange::positive(1e3)),
    ("filter.v_max_linear", ParamRange::positive(10.0)),
    ("filter.v_max_angular", ParamRange::positive(20.0)),
    ("filter.a_max_linear", ParamRange::positive(100.0)),
    ("filter.a_max_angular", ParamRange::positive(1e3)),
    ("admittance.gain_linear", ParamRange::closed(0.0, 1.0)),
    ("admittance.gain_angular", ParamRange::closed(0.0, 1.0)),
    ("admittance.deadband_force", ParamRange::closed(0.0, 1e4)),
    ("admittance.deadband_torque", ParamRange::closed(0.0, 1e3)),
    ("admittance.v_max_linear", ParamRange::positive(10.0)),
    ("admittance.v_max_angular", ParamRange::positive(20.0)),
    ("admittance.leak", ParamRange::closed(0.0, 100.0)),
    ("admittance.radius_linear", ParamRange::closed(0.0, 10.0)),
    ("admittance.radius_angular", ParamRange::closed(0.0, 10.0)),
];

pub fn param_range(path: &str) -> Option<ParamRange> {
    PARAMS.iter().find(|(p, _)| *p == path).map(|(_, r)| *r)
}

/// Setup for a model without a scenario: no contacts, default weights,
/// every non-link frame reported.
pub fn model_setup(model_path: &Path, rate: f64) -> anyhow::Result<Scenario> {
    let path = model_path
        .canonicalize()
        .with_context(|| format!("cannot open {}", model_path.display()))?;
    let model = retarget_core::load_model(&path)?;
    let frames: Vec<&str> = model.frames[model.links.len()..]
        .iter()
        .map(|f| f.name.as_str())
        .collect();
    let text = serde_json::json!({
        "name": model.name,
        "model": path,
        "record_frames": frames,
        "duration": 1.0,
        "rate": rate,
    });
    Ok(Scenario::from_json(&text.to_string(), Path::new("/"))?)
}

/// Frames reported in state messages: contacts, the setup's recorded
/// frames, then every non-link frame of the model.
fn reported_frames(setup: &Scenario, model: &RobotModel) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let all = setup
        .contacts
        .iter()
        .map(|c| c.spec.frame.clone())
        .chain(setup.record_frames.iter().cloned())
        .chain(model.frames[model.links.len()..].iter().map(|f| f.name.clone()));
    for f in all {
        if !out.contains(&f) {
            out.push(f);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    /// Index of the tick the message was applied before.
    pub tick: u64,
    pub message: ClientMessage,
}

/// Everything needed to reproduce a live session.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageLog {
    pub setup: Scenario,
    pub entries: Vec<LogEntry>,
    pub ticks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine {
    Header { v: u64, setup: Box<Scenario> },
    Message(LogEntry),
    End { ticks: u64 },
}

impl MessageLog {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> anyhow::Result<()> {
        let header = LogLine::Header {
            v: PROTOCOL_VERSION,
            setup: Box::new(self.setup.clone()),
        };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for e in &self.entries {
            writeln!(w, "{}", serde_json::to_string(&LogLine::Message(e.clone()))?)?;
        }
        writeln!(w, "{}", serde_json::to_string(&LogLine::End { ticks: self.ticks })?)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> anyhow::Result<Self> {
        let mut setup = None;
        let mut entries = Vec::new();
        let mut ticks = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine = serde_json::from_str(&line).with_context(|| format!("log line {}", i + 1))?;
            match parsed {
                LogLine::Header { v, setup: s } if i == 0 => {
                    if v != PROTOCOL_VERSION {
                        bail!("log version {v} is not supported");
                    }
                    setup = Some(*s);
                }
                LogLine::Header { .. } => bail!("log line {}: header after the first line", i + 1),
                LogLine::Message(e) => {
                    if entries.last().is_some_and(|l: &LogEntry| l.tick > e.tick) {
                        bail!("log line {}: ticks out of order", i + 1);
                    }
                    entries.push(e)
                }
                LogLine::End { ticks: n } => ticks = Some(n),
            }
        }
        let setup = setup.context("log has no header")?;
        let ticks = ticks.context("log has no end line")?;
        if entries.last().is_some_and(|e| e.tick > ticks) {
            bail!("log messages after its last tick");
        }
        Ok(Self { setup, entries, ticks })
    }
}

/// Mutable state of the live loop.
pub struct LoopState {
    setup: Scenario,
    session: Session,
    frames: Vec<String>,
    header: TraceHeader,
    tick: u64,
    log: Vec<LogEntry>,
    /// Events of messages applied since the last tick.
    pending: Vec<SessionEvent>,
    records: Option<Vec<TickRecord>>,
    last_solve_us: f64,
}

impl LoopState {
    /// Builds (and settles, if requested) the session. The timeline of a
    /// scenario used as a setup is ignored.
    pub fn new(mut setup: Scenario) -> anyhow::Result<Self> {
        let model_path = setup
            .model_path()
            .canonicalize()
            .with_context(|| format!("cannot open {}", setup.model_path().display()))?;
        setup.model = model_path;
        setup.base_dir = Default::default();
        setup.timeline.clear();
        let session = setup.session()?;
        let frames = reported_frames(&setup, session.model());
        let header = TraceHeader::new(&setup.name, &session, &frames);
        Ok(Self {
            setup,
            session,
            frames,
            header,
            tick: 0,
            log: Vec::new(),
            pending: Vec::new(),
            records: None,
            last_solve_us: 0.0,
        })
    }

    /// Keeps a trace record of every tick from now on.
    pub fn record_trace(&mut self) {
        self.records.get_or_insert_with(Vec::new);
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn setup(&self) -> &Scenario {
        &self.setup
    }

    pub fn frames(&self) -> &[String] {
        &self.frames
    }

    /// Number of ticks run so far.
    pub fn ticks(&self) -> u64 {
        self.tick
    }

    pub fn rate(&self) -> f64 {
        self.setup.rate
    }

    /// Applies one client message before the next tick. Errors leave the
    /// loop untouched. `subscribe` concerns the connection only and is
    /// neither applied nor logged here.
    pub fn handle(&mut self, msg: &ClientMessage) -> Result<Option<SessionEvent>, WireError> {
        if matches!(msg, ClientMessage::Subscribe { .. }) {
            return Ok(None);
        }
        self.log.push(LogEntry {
            tick: self.tick,
            message: msg.clone(),
        });
        let out = self.apply(msg);
        if let Ok(Some(e)) = &out {
            self.pending.push(e.clone());
        }
        out
    }

    fn apply(&mut self, msg: &ClientMessage) -> Result<Option<SessionEvent>, WireError> {
        match msg {
            ClientMessage::SetTarget { frame, pose } => {
                self.session.set_target(frame, *pose)?;
                Ok(None)
            }
            ClientMessage::SwitchContact { frame, action } => {
                self.session.model().frame_id(frame)?;
                Ok(Some(self.session.switch(frame, *action, None)?))
            }
            ClientMessage::ExternalWrench {
                frame,
                wrench,
                duration,
            } => {
                if let Some(d) = duration {
                    if !(*d > 0.0 && d.is_finite()) {
                        return Err(WireError::new(ErrorCode::OutOfRange, format!("duration {d}")));
                    }
                }
                let finite = wrench.force.iter().chain(wrench.torque.iter()).all(|v| v.is_finite());
                if !finite {
                    return Err(WireError::new(ErrorCode::OutOfRange, "wrench must be finite"));
                }
                self.session.apply_wrench(frame, *wrench, *duration)?;
                Ok(None)
            }
            ClientMessage::SetParam { path, value } => {
                self.set_param(path, *value)?;
                Ok(None)
            }
            ClientMessage::Subscribe { .. } => Ok(None),
        }
    }

    fn set_param(&mut self, path: &str, v: f64) -> Result<(), WireError> {
        let range = param_range(path).ok_or_else(|| WireError::new(ErrorCode::UnknownParam, path))?;
        if !range.contains(v) {
            return Err(WireError::new(
                ErrorCode::OutOfRange,
                format!("{path} = {v} outside [{}, {}]", range.lo, range.hi),
            ));
        }
        let (group, name) = path.split_once('.').expect("whitelisted paths are dotted");
        match group {
            "weights" | "retarget" => {
                let mut c = self.session.config().clone();
                let slot = match name {
                    "position" => &mut c.w_position,
                    "orientation" => &mut c.w_orientation,
                    "posture" => &mut c.w_posture,
                    "torque" => &mut c.w_torque,
                    "wrench" => &mut c.w_wrench,
                    "wrench_rate" => &mut c.w_wrench_rate,
                    "joint_velocity" => &mut c.w_joint_velocity,
                    "tracking_damping" => &mut c.w_tracking_damping,
                    "k_eq" => &mut c.k_eq,
                    "joint_margin" => &mut c.joint_margin,
                    "torque_safety" => &mut c.torque_safety,
                    "v_max_linear" => &mut c.v_max_linear,
                    "v_max_angular" => &mut c.v_max_angular,
                    _ => unreachable!("whitelist and setter disagree on {path}"),
                };
                *slot = v;
                self.session
                    .set_config(c)
                    .map_err(|e| WireError::new(ErrorCode::OutOfRange, e.to_string()))?;
            }
            "filter" => {
                let mut p = *self.session.filter_params();
                *match name {
                    "cutoff" => &mut p.cutoff,
                    "v_max_linear" => &mut p.v_max_linear,
                    "v_max_angular" => &mut p.v_max_angular,
                    "a_max_linear" => &mut p.a_max_linear,
                    "a_max_angular" => &mut p.a_max_angular,
                    _ => unreachable!("whitelist and setter disagree on {path}"),
                } = v;
                self.session.set_filter_params(p);
            }
            "admittance" => {
                let mut p = *self.session.admittance_params();
                *match name {
                    "gain_linear" => &mut p.gain_linear,
                    "gain_angular" => &mut p.gain_angular,
                    "deadband_force" => &mut p.deadband_force,
                    "deadband_torque" => &mut p.deadband_torque,
                    "v_max_linear" => &mut p.v_max_linear,
                    "v_max_angular" => &mut p.v_max_angular,
                    "leak" => &mut p.leak,
                    "radius_linear" => &mut p.radius_linear,
                    "radius_angular" => &mut p.radius_angular,
                    _ => unreachable!("whitelist and setter disagree on {path}"),
                } = v;
                self.session.set_admittance_params(p);
            }
            _ => unreachable!("whitelist and setter disagree on {path}"),
        }
        Ok(())
    }

    /// Runs one loop tick and returns the events it raised.
    pub fn tick(&mut self) -> anyhow::Result<Vec<SessionEvent>> {
        let report = self.session.tick()?;
        self.tick += 1;
        self.last_solve_us = report.solve_time.as_secs_f64() * 1e6;
        let mut events = std::mem::take(&mut self.pending);
        events.extend(report.events.iter().cloned());
        if let Some(records) = &mut self.records {
            records.push(TickRecord::capture(&self.session, &report, events, &self.frames)?);
        }
        Ok(report.events)
    }

    pub fn snapshot(&self) -> anyhow::Result<StateMessage> {
        let model = self.session.model();
        let st = self.session.state();
        let kin = Kinematics::compute(model, &st.cfg)?;
        let mut effectors = std::collections::BTreeMap::new();
        for f in &self.frames {
            effectors.insert(f.clone(), kin.frame_pose(model, model.frame_id(f)?));
        }
        let contacts = st
            .contacts
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let (f_min, f_max) = e.state.force_bounds(&e.spec);
                WireContact {
                    frame: e.spec.frame.clone(),
                    phase: e.state.phase,
                    wrench: st
                        .contacts
                        .wrench_of(&st.lambda, i)
                        .map(<[f64]>::to_vec)
                        .unwrap_or_default(),
                    f_min,
                    f_max,
                }
            })
            .collect();
        Ok(StateMessage {
            tick: self.tick,
            t: st.time,
            base_pose: st.cfg.base_pose,
            joint_positions: st.cfg.joint_positions.iter().copied().collect(),
            effectors,
            contacts,
            margins: st.margins.clone(),
            residual_norm: st.base_residual.norm(),
            solve_us: self.last_solve_us,
        })
    }

    pub fn message_log(&self) -> MessageLog {
        MessageLog {
            setup: self.setup.clone(),
            entries: self.log.clone(),
            ticks: self.tick,
        }
    }

    pub fn trace(&self) -> Option<Trace> {
        self.records.as_ref().map(|r| Trace {
            header: self.header.clone(),
            records: r.clone(),
        })
    }
}

/// Margins recomputed from a state message's own wrenches and bounds,
/// using the contact specs of `session`.
pub fn margins_from_wire(session: &Session, msg: &StateMessage) -> anyhow::Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for c in msg.contacts.iter().filter(|c| !c.wrench.is_empty()) {
        let i = session
            .state()
            .contacts
            .index_of(&c.frame)
            .with_context(|| format!("no contact on {}", c.frame))?;
        let spec = &session.state().contacts.entries[i].spec;
        for (name, v) in margins_with_bounds(spec, &c.wrench, c.f_min, c.f_max)? {
            out.push((format!("{}/{}", c.frame, name), v));
        }
    }
    Ok(out)
}

/// Re-runs a message log: messages are applied before the tick they were
/// logged at, in log order.
pub fn replay(log: &MessageLog) -> anyhow::Result<Trace> {
    let mut state = LoopState::new(log.setup.clone())?;
    state.record_trace();
    let mut next = 0;
    for k in 0..log.ticks {
        while next < log.entries.len() && log.entries[next].tick == k {
            // Rejections replay as the same rejections.
            let _ = state.handle(&log.entries[next].message);
            next += 1;
        }
        state.tick()?;
    }
    Ok(state.trace().expect("recording enabled"))
}
