//! Trace records and their JSONL form.
//!
//! The first line is the header (`"kind": "header"`), every following
//! line one tick (`"kind": "tick"`). Field names are part of the format.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::contacts::{ContactPhase, Margin};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::model::Kinematics;
use crate::retarget::limit_margins;

use super::session::{Session, SessionEvent, TickReport};

/// Run metadata needed to verify a trace on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub scenario: String,
    pub model: String,
    pub dt: f64,
    pub joint_names: Vec<String>,
    pub joint_lower: Vec<f64>,
    pub joint_upper: Vec<f64>,
    pub joint_effort: Vec<f64>,
    pub torque_safety: f64,
    /// `m_tot · g`, newtons.
    pub total_weight: f64,
    pub contact_frames: Vec<String>,
    pub recorded_frames: Vec<String>,
}

impl TraceHeader {
    pub fn new(scenario: &str, session: &Session, frames: &[String]) -> Self {
        let model = session.model();
        let limits = model.dof_limits();
        Self {
            scenario: scenario.to_string(),
            model: model.name.clone(),
            dt: session.config().dt,
            joint_names: model.dof_names(),
            joint_lower: limits.iter().map(|l| l.lower).collect(),
            joint_upper: limits.iter().map(|l| l.upper).collect(),
            joint_effort: limits.iter().map(|l| l.effort).collect(),
            torque_safety: session.config().torque_safety,
            total_weight: model.total_mass() * model.gravity.norm(),
            contact_frames: session
                .state()
                .contacts
                .entries
                .iter()
                .map(|e| e.spec.frame.clone())
                .collect(),
            recorded_frames: frames.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactRecord {
    pub frame: String,
    pub phase: ContactPhase,
    /// Contact-local wrench; empty while disabled, except on the tick the
    /// contact is released, where it holds the wrench at release.
    pub wrench: Vec<f64>,
    /// Normal-force cap in force this tick.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: f64,
    pub base_pose: Pose,
    pub joint_positions: Vec<f64>,
    pub lambda: Vec<f64>,
    pub tau: Vec<f64>,
    pub contacts: Vec<ContactRecord>,
    /// Contact margins in contact-set order.
    pub margins: Vec<Margin>,
    /// Joint-position and torque margins.
    pub limit_margins: Vec<Margin>,
    pub residual_norm: f64,
    pub effectors: BTreeMap<String, Pose>,
    pub status: String,
    pub soft_failure: bool,
    pub events: Vec<SessionEvent>,
    pub build_us: f64,
    pub solve_us: f64,
}

impl TickRecord {
    pub fn capture(
        session: &Session,
        report: &TickReport,
        events: Vec<SessionEvent>,
        frames: &[String],
    ) -> Result<Self> {
        let model = session.model();
        let st = session.state();
        let kin = Kinematics::compute(model, &st.cfg)?;
        let mut effectors = BTreeMap::new();
        for f in frames {
            effectors.insert(f.clone(), kin.frame_pose(model, model.frame_id(f)?));
        }
        let layout = st.contacts.layout();
        let contacts = st
            .contacts
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let wrench = match layout.iter().find(|a| a.index == i) {
                    Some(a) => st.lambda.as_slice()[a.offset..a.offset + a.dim()].to_vec(),
                    None => report
                        .released
                        .iter()
                        .find(|r| r.frame == e.spec.frame)
                        .map(|r| r.wrench.clone())
                        .unwrap_or_default(),
                };
                ContactRecord {
                    frame: e.spec.frame.clone(),
                    phase: e.state.phase,
                    wrench,
                    bound: e.state.current_bound(&e.spec),
                }
            })
            .collect();
        Ok(Self {
            t: st.time,
            base_pose: st.cfg.base_pose,
            joint_positions: st.cfg.joint_positions.iter().copied().collect(),
            lambda: st.lambda.iter().copied().collect(),
            tau: st.tau.iter().copied().collect(),
            contacts,
            margins: st.margins.clone(),
            limit_margins: limit_margins(model, st, session.config()),
            residual_norm: st.base_residual.norm(),
            effectors,
            status: format!("{:?}", report.status).to_lowercase(),
            soft_failure: report.soft_failure,
            events,
            build_us: report.build_time.as_secs_f64() * 1e6,
            solve_us: report.solve_time.as_secs_f64() * 1e6,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TraceLine {
    Header(TraceHeader),
    Tick(TickRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<TickRecord>,
}

impl Trace {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Io {
            path: "trace".into(),
            msg: e.to_string(),
        };
        serde_json::to_writer(&mut w, &TraceLine::Header(self.header.clone()))?;
        w.write_all(b"\n").map_err(io)?;
        for r in &self.records {
            serde_json::to_writer(&mut w, &TraceLine::Tick(r.clone()))?;
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut header = None;
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Io {
                path: "trace".into(),
                msg: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<TraceLine>(&line)? {
                TraceLine::Header(h) if i == 0 => header = Some(h),
                TraceLine::Header(_) => {
                    return Err(Error::Json(format!("line {}: header after the first line", i + 1)))
                }
                TraceLine::Tick(t) => records.push(t),
            }
        }
        let header = header.ok_or(Error::EmptyTrace)?;
        Ok(Self { header, records })
    }

    /// Copy with wall-clock fields zeroed; everything else is a pure
    /// function of the inputs.
    pub fn without_timing(&self) -> Self {
        let mut t = self.clone();
        for r in t.records.iter_mut() {
            r.build_us = 0.0;
            r.solve_us = 0.0;
        }
        t
    }
}
