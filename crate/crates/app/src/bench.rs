//! Per-tick timing of the loop under a moving command.

use std::f64::consts::TAU;

use retarget_core::geometry::Vec3;
use retarget_core::simulate::Session;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Percentiles {
    pub p50_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

impl Percentiles {
    fn of(mut v: Vec<f64>) -> Self {
        v.sort_by(f64::total_cmp);
        let at = |q: f64| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Self {
            p50_us: at(0.5),
            p90_us: at(0.9),
            p99_us: at(0.99),
            max_us: *v.last().expect("at least one iteration"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub iters: usize,
    pub dof: usize,
    pub contacts: usize,
    pub moving_frame: Option<String>,
    pub build: Percentiles,
    pub solve: Percentiles,
    pub total: Percentiles,
    pub soft_failures: usize,
}

impl std::fmt::Display for BenchReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{} iterations, {} dof, {} contacts, moving frame: {}",
            self.iters,
            self.dof,
            self.contacts,
            self.moving_frame.as_deref().unwrap_or("none")
        )?;
        writeln!(f, "{:<14}{:>10}{:>10}{:>10}{:>10}", "µs", "p50", "p90", "p99", "max")?;
        for (name, p) in [
            ("build", self.build),
            ("solve", self.solve),
            ("build+solve", self.total),
        ] {
            writeln!(
                f,
                "{name:<14}{:>10.1}{:>10.1}{:>10.1}{:>10.1}",
                p.p50_us, p.p90_us, p.p99_us, p.max_us
            )?;
        }
        write!(f, "soft failures: {}", self.soft_failures)
    }
}

/// Amplitude and frequency of the commanded sway.
const SWAY_M: f64 = 0.03;
const SWAY_HZ: f64 = 0.5;

/// Ticks `session` `iters` times while `frame` (if any) sways along x
/// around its starting pose.
pub fn bench(mut session: Session, frame: Option<&str>, iters: usize) -> anyhow::Result<BenchReport> {
    anyhow::ensure!(iters > 0, "need at least one iteration");
    let start = match frame {
        Some(f) => Some(session.state().frame_pose(session.model(), f)?),
        None => None,
    };
    let dt = session.config().dt;
    let (mut build, mut solve, mut total) = (Vec::new(), Vec::new(), Vec::new());
    let mut soft_failures = 0;
    for k in 0..iters {
        if let (Some(f), Some(p)) = (frame, start) {
            let mut target = p;
            target.position += Vec3::new(SWAY_M * (TAU * SWAY_HZ * k as f64 * dt).sin(), 0.0, 0.0);
            session.set_target(f, target)?;
        }
        let r = session.tick()?;
        let b = r.build_time.as_secs_f64() * 1e6;
        let s = r.solve_time.as_secs_f64() * 1e6;
        build.push(b);
        solve.push(s);
        total.push(b + s);
        soft_failures += usize::from(r.soft_failure);
    }
    Ok(BenchReport {
        iters,
        dof: session.model().dof(),
        contacts: session.state().contacts.entries.len(),
        moving_frame: frame.map(str::to_string),
        build: Percentiles::of(build),
        solve: Percentiles::of(solve),
        total: Percentiles::of(total),
        soft_failures,
    })
}
