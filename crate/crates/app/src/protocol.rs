//! Wire messages of the live service. Every WebSocket text frame carries
//! one JSON object with a `type` tag and `v: 1`.

use std::collections::BTreeMap;

use retarget_core::contacts::{ContactPhase, Margin, SwitchAction};
use retarget_core::geometry::{Pose, Wrench};
use retarget_core::simulate::SessionEvent;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    SetTarget {
        frame: String,
        pose: Pose,
    },
    SwitchContact {
        frame: String,
        action: SwitchAction,
    },
    /// Measured wrench fed to the effector's admittance; held until
    /// replaced, or for `duration` seconds when given.
    ExternalWrench {
        frame: String,
        wrench: Wrench,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        duration: Option<f64>,
    },
    SetParam {
        path: String,
        value: f64,
    },
    /// State broadcast rate in Hz; 0 stops the stream.
    Subscribe {
        rate: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadMessage,
    UnsupportedVersion,
    UnknownFrame,
    UnknownParam,
    OutOfRange,
    IllegalTransition,
    InvalidContact,
    Internal,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{code:?}: {detail}")]
pub struct WireError {
    pub code: ErrorCode,
    pub detail: String,
}

impl WireError {
    pub fn new(code: ErrorCode, detail: impl Into<String>) -> Self {
        Self {
            code,
            detail: detail.into(),
        }
    }
}

impl From<retarget_core::Error> for WireError {
    fn from(e: retarget_core::Error) -> Self {
        use retarget_core::Error as E;
        let code = match &e {
            E::UnknownFrame(_) => ErrorCode::UnknownFrame,
            E::IllegalTransition(_) => ErrorCode::IllegalTransition,
            E::InvalidContact { .. } => ErrorCode::InvalidContact,
            _ => ErrorCode::Internal,
        };
        WireError::new(code, e.to_string())
    }
}

/// Contact entry of a state message. `f_min`/`f_max` are the normal force
/// bounds in force at this tick (ramped during a switch), so the margins
/// can be recomputed from the message alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireContact {
    pub frame: String,
    pub phase: ContactPhase,
    pub wrench: Vec<f64>,
    pub f_min: f64,
    pub f_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub tick: u64,
    pub t: f64,
    pub base_pose: Pose,
    pub joint_positions: Vec<f64>,
    pub effectors: BTreeMap<String, Pose>,
    pub contacts: Vec<WireContact>,
    /// Named margins of the active contacts, in contact set order.
    pub margins: Vec<Margin>,
    pub residual_norm: f64,
    pub solve_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(StateMessage),
    Event { t: f64, event: SessionEvent },
    Error { code: ErrorCode, detail: String },
}

impl From<WireError> for ServerMessage {
    fn from(e: WireError) -> Self {
        ServerMessage::Error {
            code: e.code,
            detail: e.detail,
        }
    }
}

fn with_version<T: Serialize>(msg: &T) -> String {
    let mut v = serde_json::to_value(msg).expect("wire types serialize");
    if let Value::Object(map) = &mut v {
        map.insert("v".into(), Value::from(PROTOCOL_VERSION));
    }
    v.to_string()
}

/// Strips and checks `v`, then decodes the rest strictly.
fn without_version<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, WireError> {
    let mut v: Value = serde_json::from_str(text).map_err(|e| WireError::new(ErrorCode::BadMessage, e.to_string()))?;
    let Value::Object(map) = &mut v else {
        return Err(WireError::new(ErrorCode::BadMessage, "expected a JSON object"));
    };
    match map.remove("v") {
        Some(Value::Number(n)) if n.as_u64() == Some(PROTOCOL_VERSION) => {}
        Some(other) => {
            return Err(WireError::new(
                ErrorCode::UnsupportedVersion,
                format!("protocol version {other} is not supported (expected {PROTOCOL_VERSION})"),
            ))
        }
        None => return Err(WireError::new(ErrorCode::BadMessage, "missing field `v`")),
    }
    serde_json::from_value(v).map_err(|e| WireError::new(ErrorCode::BadMessage, e.to_string()))
}

impl ClientMessage {
    pub fn decode(text: &str) -> Result<Self, WireError> {
        without_version(text)
    }

    pub fn encode(&self) -> String {
        with_version(self)
    }
}

impl ServerMessage {
    pub fn decode(text: &str) -> Result<Self, WireError> {
        without_version(text)
    }

    pub fn encode(&self) -> String {
        with_version(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_round_trip() {
        let msgs = [
            ClientMessage::SetTarget {
                frame: "left_hand".into(),
                pose: Pose::from_translation(0.05, 0.0, 0.3),
            },
            ClientMessage::SwitchContact {
                frame: "left_foot".into(),
                action: SwitchAction::Remove,
            },
            ClientMessage::ExternalWrench {
                frame: "left_hand".into(),
                wrench: Wrench::zero(),
                duration: Some(0.5),
            },
            ClientMessage::SetParam {
                path: "weights.torque".into(),
                value: 1e-3,
            },
            ClientMessage::Subscribe { rate: 10.0 },
        ];
        for m in msgs {
            let text = m.encode();
            assert!(text.contains("\"v\":1"), "{text}");
            assert_eq!(ClientMessage::decode(&text).unwrap(), m);
        }
    }

    #[test]
    fn pose_is_a_flat_array() {
        let text = r#"{"type":"set_target","v":1,"frame":"left_hand","pose":[0.05,0,0,1,0,0,0]}"#;
        match ClientMessage::decode(text).unwrap() {
            ClientMessage::SetTarget { pose, .. } => assert_eq!(pose.position.x, 0.05),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_messages_are_rejected() {
        let code = |t: &str| ClientMessage::decode(t).unwrap_err().code;
        assert_eq!(code(r#"{"type":"subscribe","rate":10}"#), ErrorCode::BadMessage);
        assert_eq!(
            code(r#"{"type":"subscribe","v":2,"rate":10}"#),
            ErrorCode::UnsupportedVersion
        );
        assert_eq!(
            code(r#"{"type":"subscribe","v":1,"rate":10,"extra":0}"#),
            ErrorCode::BadMessage
        );
        assert_eq!(code(r#"{"type":"teleport","v":1}"#), ErrorCode::BadMessage);
        assert_eq!(code(r#"[1,2]"#), ErrorCode::BadMessage);
        assert_eq!(code("not json"), ErrorCode::BadMessage);
        assert_eq!(
            code(r#"{"type":"switch_contact","v":1,"frame":"left_foot","action":"toggle"}"#),
            ErrorCode::BadMessage
        );
    }

    #[test]
    fn server_error_shape() {
        let text = ServerMessage::from(WireError::new(ErrorCode::OutOfRange, "weights.torque")).encode();
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["type"], "error");
        assert_eq!(v["code"], "out_of_range");
        assert_eq!(v["v"], 1);
    }
}
