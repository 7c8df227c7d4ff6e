//! Trace verification: margins, equilibrium, limits, switch smoothness
//! and timing, computed from the trace alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::contacts::ContactPhase;
use crate::error::{Error, Result};

use super::trace::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Lowest acceptable margin of any row.
    pub min_margin: f64,
    /// Largest acceptable `‖r_fb‖`; `None` means `1e-6·(1 + m_tot·g)`.
    pub max_residual: Option<f64>,
    /// Allowed excursion beyond a joint limit, radians.
    pub joint_tolerance: f64,
    /// Allowed excess of `|τ|/effort` over the torque safety factor.
    pub torque_tolerance: f64,
    /// Largest per-tick increase of `f_z` accepted during a removal ramp.
    pub ramp_jitter: f64,
    /// Largest `f_z` accepted when a contact is released.
    pub release_force: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            min_margin: -1e-6,
            max_residual: None,
            joint_tolerance: 1e-9,
            torque_tolerance: 1e-6,
            ramp_jitter: 1e-3,
            release_force: 1.0,
        }
    }
}

/// Value and record index of an extremum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    pub value: f64,
    pub record: usize,
}

impl Extremum {
    fn min(slot: &mut Option<Extremum>, value: f64, record: usize) {
        if slot.is_none_or(|e| value < e.value) {
            *slot = Some(Extremum { value, record });
        }
    }

    fn max(slot: &mut Option<Extremum>, value: f64, record: usize) {
        if slot.is_none_or(|e| value > e.value) {
            *slot = Some(Extremum { value, record });
        }
    }
}

/// One removal ramp as seen in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RampStats {
    pub frame: String,
    pub first_record: usize,
    pub last_record: usize,
    /// Largest per-tick rise of `f_z` (negative when strictly decreasing).
    pub max_fz_increase: f64,
    pub max_abs_fz_change: f64,
    /// `f_z` at the release tick; `None` if the trace ends mid-ramp.
    pub fz_at_release: Option<f64>,
    /// Lowest margin of any row other than the ramping contact's cap.
    pub min_other_margin: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub p50_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub check: String,
    pub record: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub records: usize,
    /// Lowest margin per constraint class (`unilateral`, `cop_x`, ...,
    /// `joint`, `torque`).
    pub min_margin_by_class: BTreeMap<String, Extremum>,
    /// Lowest contact margin.
    pub min_margin: Option<Extremum>,
    pub max_residual: Extremum,
    pub residual_threshold: f64,
    /// Largest distance beyond a joint limit; negative when inside.
    pub max_joint_excursion: Option<Extremum>,
    /// Largest `|τ|/effort`.
    pub max_torque_ratio: Option<Extremum>,
    pub ramps: Vec<RampStats>,
    /// Build plus solve time per tick.
    pub timing: TimingStats,
    pub soft_failures: usize,
    pub failures: Vec<Failure>,
    pub passed: bool,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let i = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[i]
}

fn ramps(trace: &Trace) -> Vec<RampStats> {
    let recs = &trace.records;
    let mut out = Vec::new();
    for (c, frame) in trace.header.contact_frames.iter().enumerate() {
        let mut i = 0;
        while i < recs.len() {
            if recs[i].contacts[c].phase != ContactPhase::RampingOut {
                i += 1;
                continue;
            }
            let first = i;
            // Force sequence from the tick before the ramp starts.
            let mut fz: Vec<f64> = Vec::new();
            if first > 0 && recs[first - 1].contacts[c].wrench.len() >= 3 {
                fz.push(recs[first - 1].contacts[c].wrench[2]);
            }
            let mut min_other: Option<f64> = None;
            while i < recs.len() && recs[i].contacts[c].phase == ContactPhase::RampingOut {
                fz.push(recs[i].contacts[c].wrench[2]);
                let cap = format!("{frame}/cap");
                for m in recs[i].margins.iter().filter(|m| m.name != cap) {
                    min_other = Some(min_other.map_or(m.value, |v: f64| v.min(m.value)));
                }
                i += 1;
            }
            let last = i - 1;
            let fz_at_release = recs
                .get(i)
                .filter(|r| r.contacts[c].phase == ContactPhase::Disabled)
                .and_then(|r| r.contacts[c].wrench.get(2).copied());
            if let Some(f) = fz_at_release {
                fz.push(f);
            }
            let diffs: Vec<f64> = fz.windows(2).map(|w| w[1] - w[0]).collect();
            out.push(RampStats {
                frame: frame.clone(),
                first_record: first,
                last_record: last,
                max_fz_increase: diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                max_abs_fz_change: diffs.iter().map(|d| d.abs()).fold(0.0, f64::max),
                fz_at_release,
                min_other_margin: min_other,
            });
        }
    }
    out
}

pub fn verify_trace(trace: &Trace, th: &Thresholds) -> Result<VerificationReport> {
    let recs = &trace.records;
    if recs.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let h = &trace.header;
    let residual_threshold = th.max_residual.unwrap_or(1e-6 * (1.0 + h.total_weight));
    let mut failures = Vec::new();
    let mut fail = |check: &str, record: usize, detail: String| {
        failures.push(Failure {
            check: check.into(),
            record,
            detail,
        })
    };

    let mut by_class: BTreeMap<String, Extremum> = BTreeMap::new();
    let mut min_margin = None;
    let mut max_residual: Option<Extremum> = None;
    let mut excursion = None;
    let mut torque = None;
    let mut soft_failures = 0;
    let mut times = Vec::with_capacity(recs.len());
    for (i, r) in recs.iter().enumerate() {
        if i > 0 && !(r.t > recs[i - 1].t) {
            fail("time", i, format!("t={} does not increase", r.t));
        }
        for m in &r.margins {
            let class = m.name.rsplit('/').next().unwrap_or(&m.name).to_string();
            let mut slot = by_class.get(&class).copied();
            Extremum::min(&mut slot, m.value, i);
            by_class.insert(class, slot.expect("just set"));
            Extremum::min(&mut min_margin, m.value, i);
            if m.value < th.min_margin {
                fail("margin", i, format!("{} = {:e}", m.name, m.value));
            }
        }
        // Limit margins are reported by class; their checks use raw limits below.
        for m in &r.limit_margins {
            let class = m.name.rsplit('/').next().unwrap_or(&m.name).to_string();
            let mut slot = by_class.get(&class).copied();
            Extremum::min(&mut slot, m.value, i);
            by_class.insert(class, slot.expect("just set"));
        }
        Extremum::max(&mut max_residual, r.residual_norm, i);
        if !(r.residual_norm <= residual_threshold) {
            fail("residual", i, format!("‖r_fb‖ = {:e}", r.residual_norm));
        }
        for (j, q) in r.joint_positions.iter().enumerate() {
            let e = (h.joint_lower[j] - q).max(q - h.joint_upper[j]);
            Extremum::max(&mut excursion, e, i);
            if e > th.joint_tolerance {
                fail(
                    "joint_limit",
                    i,
                    format!("{} = {q} outside limits by {e:e}", h.joint_names[j]),
                );
            }
        }
        for (j, t) in r.tau.iter().enumerate() {
            let ratio = t.abs() / h.joint_effort[j];
            Extremum::max(&mut torque, ratio, i);
            if ratio > h.torque_safety + th.torque_tolerance {
                fail("torque", i, format!("{} at {:.4} of effort", h.joint_names[j], ratio));
            }
        }
        if r.soft_failure {
            soft_failures += 1;
        }
        times.push(r.build_us + r.solve_us);
    }

    let ramps = ramps(trace);
    for rs in &ramps {
        if rs.max_fz_increase > th.ramp_jitter {
            fail(
                "ramp_monotone",
                rs.first_record,
                format!("{}: f_z rose by {:e} N in one tick", rs.frame, rs.max_fz_increase),
            );
        }
        if let Some(f) = rs.fz_at_release {
            if f > th.release_force {
                fail(
                    "ramp_release",
                    rs.last_record,
                    format!("{}: f_z = {f} N at release", rs.frame),
                );
            }
        }
        if rs.min_other_margin.is_some_and(|m| m < th.min_margin) {
            fail(
                "ramp_margins",
                rs.first_record,
                format!("{}: margin below threshold during ramp", rs.frame),
            );
        }
    }

    times.sort_by(f64::total_cmp);
    let timing = TimingStats {
        p50_us: percentile(&times, 0.5),
        p90_us: percentile(&times, 0.9),
        p99_us: percentile(&times, 0.99),
        max_us: *times.last().expect("non-empty"),
    };
    let passed = failures.is_empty();
    Ok(VerificationReport {
        records: recs.len(),
        min_margin_by_class: by_class,
        min_margin,
        max_residual: max_residual.expect("non-empty"),
        residual_threshold,
        max_joint_excursion: excursion,
        max_torque_ratio: torque,
        ramps,
        timing,
        soft_failures,
        failures,
        passed,
    })
}
