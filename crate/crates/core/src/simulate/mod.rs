//! Offline harness: scenarios, traces, the independent oracle and trace
//! verification.

pub mod fd;
pub mod oracle;
pub mod qp_oracle;
pub mod scenario;
pub mod session;
pub mod trace;
pub mod verify;

pub use oracle::{oracle_solve, OracleOutcome};
pub use scenario::{run_scenario, Scenario, ScenarioEvent};
pub use session::{Session, SessionEvent, TickReport};
pub use trace::{TickRecord, Trace, TraceHeader};
pub use verify::{verify_trace, Thresholds, VerificationReport};
