//! TCP control socket and frame stream.
//!
//! The service only talks to the pipeline through its control queue and the
//! [`StreamSink`] handed to the run loop. Each stream client gets a bounded
//! queue; a client that stops reading loses its oldest frames while the
//! pipeline carries on.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::Sender;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, warn};

use super::protocol::{
    encode_envelope, handshake_event, parse_control_line, state_event, ControlResponse, KIND_EVENT_JSON,
    KIND_OUTPUT_JPEG, KIND_PREVIEW_JPEG,
};
use crate::error::Result;
use crate::pipeline::{ControlRequest, FrameSink, LoopEvent, StateView, TickResult};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub control_addr: String,
    pub stream_addr: String,
    /// Send a source preview every this many outputs; 0 disables previews.
    pub preview_divisor: u32,
    pub jpeg_quality: u8,
    /// Envelopes buffered per stream client before the oldest are dropped.
    pub client_queue: usize,
    pub reply_timeout: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            control_addr: "127.0.0.1:7070".into(),
            stream_addr: "127.0.0.1:7071".into(),
            preview_divisor: 0,
            jpeg_quality: 85,
            client_queue: 8,
            reply_timeout: Duration::from_secs(5),
        }
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

struct Queued {
    kind: u8,
    bytes: Arc<Vec<u8>>,
}

#[derive(Default)]
struct QueueState {
    items: VecDeque<Queued>,
    closed: bool,
}

struct ClientQueue {
    state: Mutex<QueueState>,
    ready: Condvar,
    capacity: usize,
    dropped: AtomicU64,
}

impl ClientQueue {
    fn new(capacity: usize) -> Self {
        Self {
            state: Mutex::new(QueueState::default()),
            ready: Condvar::new(),
            capacity: capacity.max(1),
            dropped: AtomicU64::new(0),
        }
    }

    /// Never blocks. When full, the oldest frame goes first, then the oldest
    /// event if only events are queued.
    fn push(&self, kind: u8, bytes: Arc<Vec<u8>>) {
        let mut s = lock(&self.state);
        if s.closed {
            return;
        }
        if s.items.len() >= self.capacity {
            let victim = s
                .items
                .iter()
                .position(|q| q.kind != KIND_EVENT_JSON)
                .unwrap_or(0);
            s.items.remove(victim);
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        s.items.push_back(Queued { kind, bytes });
        self.ready.notify_one();
    }

    fn pop(&self) -> Option<Arc<Vec<u8>>> {
        let mut s = lock(&self.state);
        loop {
            if let Some(q) = s.items.pop_front() {
                return Some(q.bytes);
            }
            if s.closed {
                return None;
            }
            s = self.ready.wait(s).unwrap_or_else(|p| p.into_inner());
        }
    }

    fn close(&self) {
        lock(&self.state).closed = true;
        self.ready.notify_all();
    }

    fn is_closed(&self) -> bool {
        lock(&self.state).closed
    }
}

struct Hub {
    latest: StateView,
    clients: Vec<Arc<ClientQueue>>,
}

struct Shared {
    hub: Mutex<Hub>,
    shutdown: AtomicBool,
    connections: Mutex<Vec<TcpStream>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
    queue_capacity: usize,
    dropped_total: AtomicU64,
}

impl Shared {
    fn broadcast(&self, kind: u8, payload: &[u8]) {
        self.broadcast_with_state(kind, payload, None);
    }

    /// Updating the handshake state under the same lock keeps late joiners
    /// consistent with the events that follow.
    fn broadcast_with_state(&self, kind: u8, payload: &[u8], state: Option<StateView>) {
        let bytes = Arc::new(encode_envelope(kind, payload));
        let mut hub = lock(&self.hub);
        if let Some(state) = state {
            hub.latest = state;
        }
        hub.clients.retain(|c| !c.is_closed());
        for c in &hub.clients {
            let before = c.dropped.load(Ordering::Relaxed);
            c.push(kind, Arc::clone(&bytes));
            let after = c.dropped.load(Ordering::Relaxed);
            self.dropped_total.fetch_add(after - before, Ordering::Relaxed);
        }
    }

    fn track(&self, stream: &TcpStream) {
        if let Ok(clone) = stream.try_clone() {
            lock(&self.connections).push(clone);
        }
    }

    fn spawn(&self, name: &str, f: impl FnOnce() + Send + 'static) {
        match thread::Builder::new().name(name.into()).spawn(f) {
            Ok(h) => lock(&self.workers).push(h),
            Err(e) => warn!("could not start {name} thread: {e}"),
        }
    }
}

/// A running control and stream server.
pub struct Service {
    control_addr: SocketAddr,
    stream_addr: SocketAddr,
    shared: Arc<Shared>,
    acceptors: Vec<JoinHandle<()>>,
}

/// Run-loop sink that JPEG-encodes outputs and fans them out to clients.
pub struct StreamSink {
    shared: Arc<Shared>,
    quality: u8,
    preview_divisor: u32,
    ticks: u64,
}

impl FrameSink for StreamSink {
    fn on_tick(&mut self, tick: &TickResult) -> Result<()> {
        let jpeg = tick.output.encode_jpeg(self.quality)?;
        self.shared.broadcast(KIND_OUTPUT_JPEG, &jpeg);
        if self.preview_divisor > 0 && self.ticks.is_multiple_of(self.preview_divisor as u64) {
            if let Some(preview) = &tick.preview {
                let jpeg = preview.encode_jpeg(self.quality)?;
                self.shared.broadcast(KIND_PREVIEW_JPEG, &jpeg);
            }
        }
        self.ticks += 1;
        Ok(())
    }

    fn on_event(&mut self, event: &LoopEvent) -> Result<()> {
        let payload = serde_json::to_vec(&state_event(&event.event, &event.state))?;
        self.shared
            .broadcast_with_state(KIND_EVENT_JSON, &payload, Some(event.state.clone()));
        Ok(())
    }
}

impl Service {
    /// Binds both sockets and starts accepting. Control requests are
    /// forwarded on `control`; outputs arrive through the returned sink.
    pub fn start(
        config: &ServiceConfig,
        control: Sender<ControlRequest>,
        initial_state: StateView,
    ) -> Result<(Service, StreamSink)> {
        let control_listener = TcpListener::bind(&config.control_addr)?;
        let stream_listener = TcpListener::bind(&config.stream_addr)?;
        let shared = Arc::new(Shared {
            hub: Mutex::new(Hub {
                latest: initial_state,
                clients: Vec::new(),
            }),
            shutdown: AtomicBool::new(false),
            connections: Mutex::new(Vec::new()),
            workers: Mutex::new(Vec::new()),
            queue_capacity: config.client_queue,
            dropped_total: AtomicU64::new(0),
        });
        let service = Service {
            control_addr: control_listener.local_addr()?,
            stream_addr: stream_listener.local_addr()?,
            acceptors: vec![
                spawn_control_acceptor(control_listener, Arc::clone(&shared), control, config.reply_timeout)?,
                spawn_stream_acceptor(stream_listener, Arc::clone(&shared))?,
            ],
            shared: Arc::clone(&shared),
        };
        let sink = StreamSink {
            shared,
            quality: config.jpeg_quality,
            preview_divisor: config.preview_divisor,
            ticks: 0,
        };
        Ok((service, sink))
    }

    pub fn control_addr(&self) -> SocketAddr {
        self.control_addr
    }

    pub fn stream_addr(&self) -> SocketAddr {
        self.stream_addr
    }

    /// Envelopes discarded across all clients because they fell behind.
    pub fn dropped_envelopes(&self) -> u64 {
        self.shared.dropped_total.load(Ordering::Relaxed)
    }

    pub fn stream_clients(&self) -> usize {
        let mut hub = lock(&self.shared.hub);
        hub.clients.retain(|c| !c.is_closed());
        hub.clients.len()
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if self.shared.shutdown.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the blocking accept calls.
        let _ = TcpStream::connect(self.control_addr);
        let _ = TcpStream::connect(self.stream_addr);
        for h in self.acceptors.drain(..) {
            let _ = h.join();
        }
        for c in lock(&self.shared.connections).drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
        for q in lock(&self.shared.hub).clients.drain(..) {
            q.close();
        }
        let workers: Vec<_> = lock(&self.shared.workers).drain(..).collect();
        for h in workers {
            let _ = h.join();
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.stop();
    }
}

fn spawn_stream_acceptor(listener: TcpListener, shared: Arc<Shared>) -> Result<JoinHandle<()>> {
    Ok(thread::Builder::new().name("stream-accept".into()).spawn(move || {
        for conn in listener.incoming() {
            if shared.shutdown.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    warn!("stream accept failed: {e}");
                    continue;
                }
            };
            let _ = stream.set_nodelay(true);
            shared.track(&stream);
            let queue = Arc::new(ClientQueue::new(shared.queue_capacity));
            {
                let mut hub = lock(&shared.hub);
                let hello = serde_json::to_vec(&handshake_event(&hub.latest)).expect("state serializes");
                queue.push(KIND_EVENT_JSON, Arc::new(encode_envelope(KIND_EVENT_JSON, &hello)));
                hub.clients.push(Arc::clone(&queue));
            }
            shared.spawn("stream-writer", move || write_client(stream, queue));
        }
    })?)
}

fn write_client(mut stream: TcpStream, queue: Arc<ClientQueue>) {
    while let Some(bytes) = queue.pop() {
        if let Err(e) = stream.write_all(&bytes) {
            debug!("stream client gone: {e}");
            break;
        }
    }
    queue.close();
    let _ = stream.shutdown(Shutdown::Both);
}

fn spawn_control_acceptor(
    listener: TcpListener,
    shared: Arc<Shared>,
    control: Sender<ControlRequest>,
    timeout: Duration,
) -> Result<JoinHandle<()>> {
    Ok(thread::Builder::new().name("control-accept".into()).spawn(move || {
        for conn in listener.incoming() {
            if shared.shutdown.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    warn!("control accept failed: {e}");
                    continue;
                }
            };
            shared.track(&stream);
            let control = control.clone();
            shared.spawn("control-conn", move || serve_control(stream, control, timeout));
        }
    })?)
}

fn serve_control(stream: TcpStream, control: Sender<ControlRequest>, timeout: Duration) {
    let Ok(mut writer) = stream.try_clone() else {
        return;
    };
    for line in BufReader::new(stream).lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let response = match parse_control_line(&line) {
            Err((id, e)) => ControlResponse::failure(id, e),
            Ok((id, command)) => {
                let (req, reply) = ControlRequest::new(command);
                if control.send(req).is_err() {
                    ControlResponse::failure(id, "pipeline is not running")
                } else {
                    match reply.recv_timeout(timeout) {
                        Ok(r) => ControlResponse::from_reply(id, r),
                        Err(_) => ControlResponse::failure(id, "pipeline did not answer in time"),
                    }
                }
            }
        };
        let mut out = serde_json::to_vec(&response).expect("response serializes");
        out.push(b'\n');
        if writer.write_all(&out).is_err() {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_queue_drops_oldest_frame_before_events() {
        let q = ClientQueue::new(3);
        let b = |n: u8| Arc::new(vec![n]);
        q.push(KIND_EVENT_JSON, b(0));
        q.push(KIND_OUTPUT_JPEG, b(1));
        q.push(KIND_OUTPUT_JPEG, b(2));
        q.push(KIND_OUTPUT_JPEG, b(3));
        q.push(KIND_EVENT_JSON, b(4));
        assert_eq!(q.dropped.load(Ordering::Relaxed), 2);
        let got: Vec<u8> = (0..3).map(|_| q.pop().unwrap()[0]).collect();
        assert_eq!(got, vec![0, 3, 4]);
        q.push(KIND_EVENT_JSON, b(5));
        q.push(KIND_EVENT_JSON, b(6));
        q.push(KIND_EVENT_JSON, b(7));
        q.push(KIND_EVENT_JSON, b(8));
        let got: Vec<u8> = (0..3).map(|_| q.pop().unwrap()[0]).collect();
        assert_eq!(got, vec![6, 7, 8]);
        q.close();
        assert!(q.pop().is_none());
    }
}
