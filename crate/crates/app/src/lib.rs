//! Command line tools and the live teleoperation service around the
//! retargeting loop.
//!
//! - [`protocol`]: versioned JSON messages exchanged over WebSocket.
//! - [`service`]: the loop state, message handling, and message-log replay.
//! - [`server`]: the WebSocket front end and the fixed-rate loop thread.
//! - [`bench`]: per-tick timing.

pub mod bench;
pub mod protocol;
pub mod server;
pub mod service;
