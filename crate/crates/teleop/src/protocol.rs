//! Wire protocol: JSON text messages, versioned by a `"v"` field.
//!
//! Server to client: `Frame`. Client to server: `Command`. Unknown fields are
//! ignored; anything else that does not fit the schema is a `ProtocolError`,
//! which closes the connection with code 1003.

use hitl_core::oracle::Owner;
use hitl_core::EnvState;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PROTOCOL_VERSION: u64 = 1;

/// Websocket close code for data the endpoint cannot accept.
pub const CLOSE_UNSUPPORTED_DATA: u16 = 1003;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("message is not valid JSON: {0}")]
    Json(String),
    #[error("message must be a JSON object")]
    NotAnObject,
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{0}` has the wrong type")]
    BadField(&'static str),
    #[error("unsupported protocol version {0}")]
    Version(u64),
    #[error("unknown message type `{0}`")]
    UnknownType(String),
    #[error("field `{0}` is only allowed on action commands")]
    UnexpectedField(&'static str),
    #[error("binary messages are not part of the protocol")]
    Binary,
}

impl ProtocolError {
    pub fn close_code(&self) -> u16 {
        CLOSE_UNSUPPORTED_DATA
    }
}

/// Environment snapshot streamed once per tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub episode: u64,
    pub t: u32,
    pub agent: [f64; 2],
    pub object: [f64; 2],
    pub carried: bool,
    pub goal: [f64; 2],
    pub owner: Owner,
    /// The monitor would have taken over; shown to the operator as a hint.
    pub advisory: bool,
}

impl Frame {
    pub fn new(episode: u64, state: &EnvState, owner: Owner, advisory: bool) -> Self {
        Frame {
            episode,
            t: state.t,
            agent: state.agent_xy,
            object: state.object_xy,
            carried: state.carried,
            goal: state.goal_xy,
            owner,
            advisory,
        }
    }

    pub fn state(&self) -> EnvState {
        EnvState {
            agent_xy: self.agent,
            object_xy: self.object,
            carried: self.carried,
            goal_xy: self.goal,
            t: self.t,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct WireFrame {
    v: u64,
    #[serde(rename = "type")]
    kind: String,
    #[serde(flatten)]
    frame: Frame,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Command {
    InterveneStart,
    Action { dxdy: [f64; 2], grip: f64 },
    InterveneEnd,
    Pause,
    Resume,
}

impl Command {
    pub fn kind(&self) -> &'static str {
        match self {
            Command::InterveneStart => "intervene_start",
            Command::Action { .. } => "action",
            Command::InterveneEnd => "intervene_end",
            Command::Pause => "pause",
            Command::Resume => "resume",
        }
    }
}

pub fn encode_frame(frame: &Frame) -> String {
    let wire = WireFrame {
        v: PROTOCOL_VERSION,
        kind: "frame".into(),
        frame: frame.clone(),
    };
    serde_json::to_string(&wire).expect("frame serializes")
}

pub fn decode_frame(text: &str) -> Result<Frame, ProtocolError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ProtocolError::Json(e.to_string()))?;
    check_header(&value, "frame")?;
    let wire: WireFrame = serde_json::from_value(value).map_err(|e| ProtocolError::Json(e.to_string()))?;
    Ok(wire.frame)
}

#[derive(Serialize)]
struct WireCommand {
    v: u64,
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    dxdy: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grip: Option<f64>,
}

pub fn encode_command(cmd: &Command) -> String {
    let (dxdy, grip) = match *cmd {
        Command::Action { dxdy, grip } => (Some(dxdy), Some(grip)),
        _ => (None, None),
    };
    let wire = WireCommand {
        v: PROTOCOL_VERSION,
        kind: cmd.kind(),
        dxdy,
        grip,
    };
    serde_json::to_string(&wire).expect("command serializes")
}

fn check_header<'a>(value: &'a Value, expected: &str) -> Result<&'a str, ProtocolError> {
    let obj = value.as_object().ok_or(ProtocolError::NotAnObject)?;
    let v = obj.get("v").ok_or(ProtocolError::MissingField("v"))?;
    let v = v.as_u64().ok_or(ProtocolError::BadField("v"))?;
    if v != PROTOCOL_VERSION {
        return Err(ProtocolError::Version(v));
    }
    let kind = obj.get("type").ok_or(ProtocolError::MissingField("type"))?;
    let kind = kind.as_str().ok_or(ProtocolError::BadField("type"))?;
    if !expected.is_empty() && kind != expected {
        return Err(ProtocolError::UnknownType(kind.to_string()));
    }
    Ok(kind)
}

fn finite(x: &Value, field: &'static str) -> Result<f64, ProtocolError> {
    x.as_f64()
        .filter(|v| v.is_finite())
        .ok_or(ProtocolError::BadField(field))
}

/// Parses a client command. Values are not clamped here; `EnvAction::new`
/// clamps them when the session applies an action.
pub fn decode_command(bytes: &[u8]) -> Result<Command, ProtocolError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| ProtocolError::Json(e.to_string()))?;
    let kind = check_header(&value, "")?;
    let obj = value.as_object().expect("checked above");
    let (dxdy, grip) = (obj.get("dxdy"), obj.get("grip"));
    let cmd = match kind {
        "action" => {
            let dxdy = dxdy.ok_or(ProtocolError::MissingField("dxdy"))?;
            let arr = dxdy
                .as_array()
                .filter(|a| a.len() == 2)
                .ok_or(ProtocolError::BadField("dxdy"))?;
            let grip = grip.ok_or(ProtocolError::MissingField("grip"))?;
            return Ok(Command::Action {
                dxdy: [finite(&arr[0], "dxdy")?, finite(&arr[1], "dxdy")?],
                grip: finite(grip, "grip")?,
            });
        }
        "intervene_start" => Command::InterveneStart,
        "intervene_end" => Command::InterveneEnd,
        "pause" => Command::Pause,
        "resume" => Command::Resume,
        other => return Err(ProtocolError::UnknownType(other.to_string())),
    };
    if dxdy.is_some() {
        return Err(ProtocolError::UnexpectedField("dxdy"));
    }
    if grip.is_some() {
        return Err(ProtocolError::UnexpectedField("grip"));
    }
    Ok(cmd)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_commands() -> Vec<Command> {
        vec![
            Command::InterveneStart,
            Command::Action {
                dxdy: [0.25, -1.0],
                grip: 0.5,
            },
            Command::InterveneEnd,
            Command::Pause,
            Command::Resume,
        ]
    }

    #[test]
    fn command_roundtrip() {
        for cmd in all_commands() {
            assert_eq!(decode_command(encode_command(&cmd).as_bytes()), Ok(cmd));
        }
    }

    #[test]
    fn exact_command_encoding() {
        assert_eq!(encode_command(&Command::Pause), r#"{"v":1,"type":"pause"}"#);
        assert_eq!(
            encode_command(&Command::Action {
                dxdy: [0.5, 0.0],
                grip: -1.0
            }),
            r#"{"v":1,"type":"action","dxdy":[0.5,0.0],"grip":-1.0}"#
        );
    }

    #[test]
    fn exact_frame_encoding() {
        let f = Frame {
            episode: 3,
            t: 7,
            agent: [0.5, 0.25],
            object: [0.125, 0.75],
            carried: false,
            goal: [0.97, 0.5],
            owner: Owner::Human,
            advisory: true,
        };
        let text = encode_frame(&f);
        assert_eq!(
            text,
            r#"{"v":1,"type":"frame","episode":3,"t":7,"agent":[0.5,0.25],"object":[0.125,0.75],"carried":false,"goal":[0.97,0.5],"owner":"human","advisory":true}"#
        );
        assert_eq!(decode_frame(&text), Ok(f));
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let cmd = decode_command(br#"{"v":1,"type":"action","dxdy":[1,0],"grip":1,"note":"hi"}"#);
        assert_eq!(
            cmd,
            Ok(Command::Action {
                dxdy: [1.0, 0.0],
                grip: 1.0
            })
        );
        assert_eq!(
            decode_command(br#"{"v":1,"type":"resume","x":[1,2]}"#),
            Ok(Command::Resume)
        );
    }

    #[test]
    fn malformed_commands_are_rejected() {
        let cases: [(&[u8], ProtocolError); 8] = [
            (br#"{"v":1}"#, ProtocolError::MissingField("type")),
            (br#"{"type":"pause"}"#, ProtocolError::MissingField("v")),
            (br#"{"v":2,"type":"pause"}"#, ProtocolError::Version(2)),
            (br#"{"v":1,"type":"jump"}"#, ProtocolError::UnknownType("jump".into())),
            (
                br#"{"v":1,"type":"action","grip":1}"#,
                ProtocolError::MissingField("dxdy"),
            ),
            (
                br#"{"v":1,"type":"action","dxdy":[1],"grip":1}"#,
                ProtocolError::BadField("dxdy"),
            ),
            (
                br#"{"v":1,"type":"pause","grip":1}"#,
                ProtocolError::UnexpectedField("grip"),
            ),
            (br#"[1,2]"#, ProtocolError::NotAnObject),
        ];
        for (bytes, err) in cases {
            let got = decode_command(bytes).unwrap_err();
            assert_eq!(got, err);
            assert_eq!(got.close_code(), 1003);
        }
        assert!(matches!(decode_command(b"{not json"), Err(ProtocolError::Json(_))));
    }

    proptest::proptest! {
        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(proptest::prelude::any::<u8>(), 0..64)) {
            let _ = decode_command(&bytes);
        }

        #[test]
        fn action_values_roundtrip(x in -5.0f64..5.0, y in -5.0f64..5.0, g in -5.0f64..5.0) {
            let cmd = Command::Action { dxdy: [x, y], grip: g };
            proptest::prop_assert_eq!(decode_command(encode_command(&cmd).as_bytes()), Ok(cmd));
        }
    }
}
