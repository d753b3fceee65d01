mod common;

use std::io::Read;
use std::net::TcpStream;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use stagegan_core::pipeline::fixture::Scene;
use stagegan_core::pipeline::io::SyntheticSource;
use stagegan_core::pipeline::DropPolicy;
use stagegan_core::service::{
    ControlClient, Service, ServiceConfig, StreamClient, KIND_EVENT_JSON, KIND_OUTPUT_JPEG, PROTOCOL_VERSION,
};
use stagegan_core::PipelineConfig;

use common::{mock_pipeline, Background, Recorder, Seen};

struct Harness {
    service: Service,
    running: Background,
    seen: Arc<Mutex<Vec<Seen>>>,
}

fn local_config(client_queue: usize) -> ServiceConfig {
    ServiceConfig {
        control_addr: "127.0.0.1:0".into(),
        stream_addr: "127.0.0.1:0".into(),
        client_queue,
        ..ServiceConfig::default()
    }
}

fn start(fps: f64, client_queue: usize) -> Harness {
    let pipeline = mock_pipeline(PipelineConfig::default());
    let (tx, rx) = mpsc::channel();
    let (service, sink) = Service::start(&local_config(client_queue), tx.clone(), pipeline.state_view()).unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let recorder = Recorder {
        inner: sink,
        seen: Arc::clone(&seen),
    };
    let source = SyntheticSource::new(Scene::with_size(160, 120)).with_fps(fps);
    let running = Background::start_wired(pipeline, source, recorder, DropPolicy::LatestWins, rx, tx);
    Harness {
        service,
        running,
        seen,
    }
}

fn next_event(stream: &mut StreamClient) -> Value {
    loop {
        let env = stream.next_envelope().unwrap().expect("stream closed");
        if env.kind == KIND_EVENT_JSON {
            return env.json().expect("event payload is JSON");
        }
    }
}

#[test]
fn handshake_is_first_envelope() {
    let h = start(30.0, 8);
    let mut stream = StreamClient::connect(h.service.stream_addr()).unwrap();
    let first = stream.next_envelope().unwrap().unwrap();
    assert_eq!(first.kind, KIND_EVENT_JSON);
    let v = first.json().unwrap();
    assert_eq!(v["event"], "handshake");
    assert_eq!(v["protocol_version"], PROTOCOL_VERSION);
    assert_eq!(v["state"]["mode"], "style_mix");
    h.running.finish();
    h.service.shutdown();
}

#[test]
fn set_param_round_trip_orders_state_event_before_frames() {
    let h = start(30.0, 64);
    let mut stream = StreamClient::connect(h.service.stream_addr()).unwrap();
    let mut control = ControlClient::connect(h.service.control_addr()).unwrap();
    // Let a few frames through at the default psi first.
    let mut frames = 0;
    while frames < 3 {
        if stream.next_envelope().unwrap().unwrap().kind == KIND_OUTPUT_JPEG {
            frames += 1;
        }
    }

    let resp = control.request("set_param", json!({"psi": 0.7}), "req-42").unwrap();
    assert!(resp.ok, "{:?}", resp.error);
    assert_eq!(resp.request_id, json!("req-42"));
    assert_eq!(resp.state.as_ref().unwrap()["psi"], 0.7);

    // The matching state event arrives, then frames keep coming.
    loop {
        let v = next_event(&mut stream);
        if v["event"] == "state" && v["state"]["psi"] == 0.7 {
            break;
        }
    }
    let mut after = 0;
    while after < 3 {
        if stream.next_envelope().unwrap().unwrap().kind == KIND_OUTPUT_JPEG {
            after += 1;
        }
    }
    h.running.finish();
    h.service.shutdown();

    let seen = h.seen.lock().unwrap().clone();
    let event_at = seen
        .iter()
        .position(|s| matches!(s, Seen::Event { name, psi } if name == "state" && *psi == 0.7))
        .expect("state event recorded");
    let ticks_after: Vec<f64> = seen[event_at..]
        .iter()
        .filter_map(|s| match s {
            Seen::Tick { psi, .. } => Some(*psi),
            _ => None,
        })
        .collect();
    assert!(!ticks_after.is_empty());
    assert!(ticks_after.iter().all(|&p| p == 0.7), "{ticks_after:?}");
    let ticks_before: Vec<f64> = seen[..event_at]
        .iter()
        .filter_map(|s| match s {
            Seen::Tick { psi, .. } => Some(*psi),
            _ => None,
        })
        .collect();
    assert!(ticks_before.iter().all(|&p| p != 0.7), "{ticks_before:?}");
}

#[test]
fn numeric_request_ids_echo_verbatim() {
    let h = start(30.0, 8);
    let mut control = ControlClient::connect(h.service.control_addr()).unwrap();
    let resp = control
        .send_line(r#"{"type":"get_state","request_id":17}"#)
        .unwrap();
    assert!(resp.ok);
    assert_eq!(resp.request_id, json!(17));
    h.running.finish();
    h.service.shutdown();
}

#[test]
fn overlapping_ranges_are_rejected_and_state_kept() {
    let h = start(30.0, 8);
    let mut control = ControlClient::connect(h.service.control_addr()).unwrap();
    let before = control.request("get_state", Value::Null, "a").unwrap().state.unwrap();
    let resp = control
        .request(
            "set_param",
            json!({"mixing_ranges": {"coarse": [0, 6], "middle": [4, 8], "fine": [8, 16]}}),
            "b",
        )
        .unwrap();
    assert!(!resp.ok);
    assert_eq!(resp.request_id, json!("b"));
    assert!(resp.error.unwrap().contains("overlap"));
    let after = control.request("get_state", Value::Null, "c").unwrap().state.unwrap();
    assert_eq!(before["mixing_ranges"], after["mixing_ranges"]);
    h.running.finish();
    h.service.shutdown();
}

#[test]
fn malformed_lines_keep_the_connection() {
    let h = start(30.0, 8);
    let mut control = ControlClient::connect(h.service.control_addr()).unwrap();
    let bad = control.send_line("{not json").unwrap();
    assert!(!bad.ok);
    assert!(bad.error.unwrap().contains("malformed"));
    let unknown = control
        .send_line(r#"{"type":"warp_drive","request_id":"x"}"#)
        .unwrap();
    assert!(!unknown.ok);
    assert_eq!(unknown.request_id, json!("x"));
    let empty = control.request("set_param", json!({}), "y").unwrap();
    assert!(!empty.ok);
    let ok = control.request("get_state", Value::Null, "z").unwrap();
    assert!(ok.ok);
    h.running.finish();
    h.service.shutdown();
}

#[test]
fn list_layers_and_mode_switches() {
    let h = start(30.0, 8);
    let mut control = ControlClient::connect(h.service.control_addr()).unwrap();
    let layers = control.request("list_layers", Value::Null, "l").unwrap().layers.unwrap();
    assert_eq!(layers.len(), 14);
    assert!(layers.iter().any(|l| l.name == "conv5_3"));

    let resp = control.request("set_mode", json!({"mode": "affine"}), "m").unwrap();
    assert!(resp.ok, "{:?}", resp.error);
    assert_eq!(resp.state.unwrap()["mode"], "affine");
    let resp = control.request("set_mode", json!({"mode": "sideways"}), "n").unwrap();
    assert!(!resp.ok);
    let resp = control.request("reseed", json!({"seed": 99}), "r").unwrap();
    assert_eq!(resp.state.unwrap()["static_seed"], 99);
    h.running.finish();
    h.service.shutdown();
}

#[test]
fn stalled_client_does_not_block_the_loop() {
    let h = start(200.0, 4);
    // Connects and never reads.
    let stalled = TcpStream::connect(h.service.stream_addr()).unwrap();
    let mut healthy = StreamClient::connect(h.service.stream_addr()).unwrap();
    // Kernel socket buffers soak up a few MB before the stalled queue backs up.
    let deadline = Instant::now() + Duration::from_secs(30);
    let mut frames = 0u64;
    while h.service.dropped_envelopes() == 0 && Instant::now() < deadline {
        if healthy.next_envelope().unwrap().unwrap().kind == KIND_OUTPUT_JPEG {
            frames += 1;
        }
    }
    assert!(h.service.dropped_envelopes() > 0, "stalled client never backed up");
    let before = frames;
    for _ in 0..20 {
        while healthy.next_envelope().unwrap().unwrap().kind != KIND_OUTPUT_JPEG {}
        frames += 1;
    }
    assert_eq!(frames, before + 20);
    assert_eq!(h.service.stream_clients(), 2);
    drop(stalled);
    let summary = h.running.finish();
    assert!(summary.frames_out >= frames);
    h.service.shutdown();
}

#[test]
fn disconnect_is_noticed() {
    let h = start(60.0, 8);
    {
        let mut s = TcpStream::connect(h.service.stream_addr()).unwrap();
        let mut buf = [0u8; 64];
        s.read_exact(&mut buf[..5]).unwrap();
    }
    let deadline = Instant::now() + Duration::from_secs(5);
    while h.service.stream_clients() > 0 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(20));
    }
    assert_eq!(h.service.stream_clients(), 0);
    h.running.finish();
    h.service.shutdown();
}
