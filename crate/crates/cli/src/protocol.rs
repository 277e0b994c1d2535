//! Websocket wire format between the bridge and its clients.
//!
//! Text frames carry one JSON object tagged by `"t"`. Binary frames carry
//! the current camera image as PNG, prefixed by the frame id as an
//! 8-byte big-endian integer.

use deskbot_core::Command;
use serde::{Deserialize, Serialize};

/// What a client may send.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(tag = "t", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClientMessage {
    Ctrl { al: f64, ar: f64 },
    Toggle { what: Toggle, on: bool },
    Cmd { dir: Command },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Toggle {
    Logging,
    Noise,
    Policy,
}

/// Parses a client text frame; control values are clamped to `[-1, 1]`.
pub fn parse_client(text: &str) -> Result<ClientMessage, String> {
    let msg: ClientMessage = serde_json::from_str(text).map_err(|e| e.to_string())?;
    Ok(match msg {
        ClientMessage::Ctrl { al, ar } => ClientMessage::Ctrl {
            al: al.clamp(-1.0, 1.0),
            ar: ar.clamp(-1.0, 1.0),
        },
        m => m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseMsg {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub frame_id: u64,
    /// Simulated seconds since the session started.
    pub time: f64,
    pub mode: String,
    pub pose: PoseMsg,
    pub battery_mv: u32,
    pub ticks_l: u32,
    pub ticks_r: u32,
    pub sonar_cm: u32,
    pub pwm_l: i16,
    pub pwm_r: i16,
    pub command: Command,
    pub logging: bool,
    pub noise: bool,
    pub policy: bool,
    pub collided: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference_ms: Option<f64>,
    /// Network output as `[left, right]` throttles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_rows: Option<u64>,
}

/// What the bridge sends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "lowercase")]
pub enum ServerMessage {
    /// Sent once on connect.
    Hello {
        client: u64,
        controller: bool,
        version: String,
        mode: String,
    },
    Telemetry(Telemetry),
    Err { msg: String },
    /// The session finished; `dir` names the recorded session if any.
    End {
        reason: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dir: Option<String>,
    },
}

impl ServerMessage {
    pub fn err(msg: impl Into<String>) -> Self {
        ServerMessage::Err { msg: msg.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server message serializes")
    }
}

pub fn encode_frame(frame_id: u64, png: &[u8]) -> Vec<u8> {
    let mut v = Vec::with_capacity(8 + png.len());
    v.extend_from_slice(&frame_id.to_be_bytes());
    v.extend_from_slice(png);
    v
}

pub fn decode_frame(bytes: &[u8]) -> Option<(u64, &[u8])> {
    let (id, png) = bytes.split_first_chunk::<8>()?;
    Some((u64::from_be_bytes(*id), png))
}

/// The JSON schema shipped in `schema/bridge_message.schema.json`.
pub const SCHEMA: &str = include_str!("../../../schema/bridge_message.schema.json");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ctrl_is_clamped() {
        assert_eq!(
            parse_client(r#"{"t":"ctrl","al":3,"ar":-1.5}"#),
            Ok(ClientMessage::Ctrl { al: 1.0, ar: -1.0 })
        );
    }

    #[test]
    fn unknown_tag_rejected() {
        assert!(parse_client(r#"{"t":"warp","x":1}"#).is_err());
        assert!(parse_client(r#"{"al":1,"ar":1}"#).is_err());
        assert!(parse_client("not json").is_err());
        assert!(parse_client(r#"{"t":"toggle","what":"turbo","on":true}"#).is_err());
    }

    #[test]
    fn frame_prefix() {
        let b = encode_frame(258, b"png");
        assert_eq!(&b[..8], &[0, 0, 0, 0, 0, 0, 1, 2]);
        assert_eq!(decode_frame(&b), Some((258, b"png".as_slice())));
        assert_eq!(decode_frame(&b[..5]), None);
    }
}
