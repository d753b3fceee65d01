//! Network control plane and output stream.
//!
//! Control: newline-delimited JSON `{type, payload, request_id}` answered
//! with `{request_id, ok, state?, layers?, error?}`. Stream: envelopes of a
//! 4-byte big-endian length, one kind byte and the payload.

pub mod client;
pub mod protocol;
mod server;

pub use client::{ControlClient, StreamClient};
pub use protocol::{
    encode_envelope, parse_control_line, ControlMessage, ControlResponse, Envelope, EnvelopeReader,
    KIND_EVENT_JSON, KIND_OUTPUT_JPEG, KIND_PREVIEW_JPEG, PROTOCOL_VERSION,
};
pub use server::{Service, ServiceConfig, StreamSink};
