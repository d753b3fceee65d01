//! Control messages and stream envelope framing.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backends::LayerSpec;
use crate::config::{Mode, ParamPatch};
use crate::pipeline::{ControlAnswer, ControlCommand, ControlDelta, ControlReply, StateView};

pub const PROTOCOL_VERSION: u32 = 1;

pub const KIND_OUTPUT_JPEG: u8 = 0x01;
pub const KIND_EVENT_JSON: u8 = 0x02;
pub const KIND_PREVIEW_JPEG: u8 = 0x03;

/// Largest payload a reader accepts before treating the stream as corrupt.
pub const MAX_PAYLOAD: u32 = 64 << 20;

const HEADER_LEN: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlMessage {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub payload: Value,
    /// Echoed back verbatim, whatever JSON value the client chose.
    #[serde(default)]
    pub request_id: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlResponse {
    pub request_id: Value,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ControlResponse {
    pub fn failure(request_id: Value, error: impl Into<String>) -> Self {
        Self {
            request_id,
            ok: false,
            state: None,
            layers: None,
            error: Some(error.into()),
        }
    }

    pub fn from_reply(request_id: Value, reply: ControlReply) -> Self {
        match reply {
            Ok(ControlAnswer::State(state)) => Self {
                request_id,
                ok: true,
                state: Some(serde_json::to_value(state).expect("state serializes")),
                layers: None,
                error: None,
            },
            Ok(ControlAnswer::Layers(layers)) => Self {
                request_id,
                ok: true,
                state: None,
                layers: Some(layers),
                error: None,
            },
            Err(e) => Self::failure(request_id, e),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModePayload {
    mode: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReseedPayload {
    seed: u64,
}

fn empty_payload(v: &Value) -> bool {
    v.is_null() || v.as_object().is_some_and(|o| o.is_empty())
}

/// Parses one line of the control socket. Failures carry the request id
/// when it could be recovered.
pub fn parse_control_line(line: &str) -> Result<(Value, ControlCommand), (Value, String)> {
    let msg: ControlMessage = match serde_json::from_str(line) {
        Ok(m) => m,
        Err(e) => {
            let id = serde_json::from_str::<Value>(line)
                .ok()
                .and_then(|v| v.get("request_id").cloned())
                .unwrap_or(Value::Null);
            return Err((id, format!("malformed message: {e}")));
        }
    };
    let id = msg.request_id.clone();
    let bad = |e: serde_json::Error| (id.clone(), format!("invalid {} payload: {e}", msg.kind));
    let command = match msg.kind.as_str() {
        "set_param" => {
            let patch: ParamPatch = serde_json::from_value(msg.payload.clone()).map_err(bad)?;
            if patch.is_empty() {
                return Err((id, "set_param payload has no parameters".into()));
            }
            ControlCommand::Apply(ControlDelta::Params(patch))
        }
        "set_mode" => {
            let p: ModePayload = serde_json::from_value(msg.payload.clone()).map_err(bad)?;
            let mode: Mode = p.mode.parse().map_err(|e: crate::Error| (id.clone(), e.to_string()))?;
            ControlCommand::Apply(ControlDelta::Mode(mode))
        }
        "reseed" => {
            let p: ReseedPayload = serde_json::from_value(msg.payload.clone()).map_err(bad)?;
            ControlCommand::Apply(ControlDelta::Reseed(p.seed))
        }
        "get_state" | "list_layers" if !empty_payload(&msg.payload) => {
            return Err((id, format!("{} takes no payload", msg.kind)));
        }
        "get_state" => ControlCommand::GetState,
        "list_layers" => ControlCommand::ListLayers,
        other => return Err((id, format!("unknown message type {other:?}"))),
    };
    Ok((id, command))
}

pub fn handshake_event(state: &StateView) -> Value {
    json!({"event": "handshake", "protocol_version": PROTOCOL_VERSION, "state": state})
}

pub fn state_event(name: &str, state: &StateView) -> Value {
    json!({"event": name, "state": state})
}

/// Frames one envelope: big-endian length, kind byte, payload.
pub fn encode_envelope(kind: u8, payload: &[u8]) -> Vec<u8> {
    let len = u32::try_from(payload.len()).expect("payload under 4 GiB");
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&len.to_be_bytes());
    out.push(kind);
    out.extend_from_slice(payload);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub kind: u8,
    pub payload: Vec<u8>,
}

impl Envelope {
    pub fn json(&self) -> Option<Value> {
        (self.kind == KIND_EVENT_JSON)
            .then(|| serde_json::from_slice(&self.payload).ok())
            .flatten()
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("envelope length {0} exceeds the {MAX_PAYLOAD} byte limit")]
pub struct OversizedEnvelope(pub u32);

/// Incremental decoder; feed arbitrary byte chunks, pull whole envelopes.
#[derive(Debug, Default)]
pub struct EnvelopeReader {
    buf: Vec<u8>,
    skipped: u64,
}

impl EnvelopeReader {
    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next envelope of a known kind; unknown kinds are consumed silently.
    pub fn next_envelope(&mut self) -> Result<Option<Envelope>, OversizedEnvelope> {
        loop {
            if self.buf.len() < HEADER_LEN {
                return Ok(None);
            }
            let len = u32::from_be_bytes(self.buf[..4].try_into().expect("four bytes"));
            if len > MAX_PAYLOAD {
                return Err(OversizedEnvelope(len));
            }
            let total = HEADER_LEN + len as usize;
            if self.buf.len() < total {
                return Ok(None);
            }
            let kind = self.buf[4];
            let payload = self.buf[HEADER_LEN..total].to_vec();
            self.buf.drain(..total);
            match kind {
                KIND_OUTPUT_JPEG | KIND_EVENT_JSON | KIND_PREVIEW_JPEG => {
                    return Ok(Some(Envelope { kind, payload }))
                }
                _ => self.skipped += 1,
            }
        }
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}
