//! Capture, tick and sink stages joined by a depth-1 slot.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::{ControlDelta, Pipeline, StateView, TickResult};
use crate::backends::LayerSpec;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::types::KeypointSet;

/// One captured frame with whatever keypoints arrived alongside it.
#[derive(Debug, Clone)]
pub struct SourceItem {
    pub frame: Frame,
    pub keypoints: Option<Vec<KeypointSet>>,
}

impl SourceItem {
    pub fn new(frame: Frame) -> Self {
        Self {
            frame,
            keypoints: None,
        }
    }
}

pub trait FrameSource: Send {
    /// Blocks until the next frame is available; `None` ends the session.
    fn next_item(&mut self) -> Result<Option<SourceItem>>;
}

pub trait FrameSink: Send {
    fn on_tick(&mut self, tick: &TickResult) -> Result<()>;

    fn on_event(&mut self, _event: &LoopEvent) -> Result<()> {
        Ok(())
    }
}

/// State notifications delivered to the sink in order with tick outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopEvent {
    pub event: String,
    pub state: StateView,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DropPolicy {
    /// A new frame replaces one still waiting in the slot.
    #[default]
    LatestWins,
    /// Capture waits for the slot to empty; nothing is dropped.
    Lossless,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum ControlCommand {
    Apply(ControlDelta),
    GetState,
    ListLayers,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum ControlAnswer {
    State(StateView),
    Layers(Vec<LayerSpec>),
}

pub type ControlReply = std::result::Result<ControlAnswer, String>;

/// A control command plus the channel its answer goes back on.
#[derive(Debug)]
pub struct ControlRequest {
    pub command: ControlCommand,
    pub reply: Sender<ControlReply>,
}

impl ControlRequest {
    pub fn new(command: ControlCommand) -> (Self, Receiver<ControlReply>) {
        let (reply, rx) = mpsc::channel();
        (Self { command, reply }, rx)
    }
}

#[derive(Default)]
pub struct LoopOptions {
    pub drop_policy: DropPolicy,
    pub control: Option<Receiver<ControlRequest>>,
    pub stop: Option<Arc<AtomicBool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSummary {
    pub frames_in: u64,
    pub frames_out: u64,
    pub frames_dropped: u64,
    pub elapsed_s: f64,
    pub fps: f64,
    pub drop_rate: f64,
    pub latency_p50_ns: u64,
    pub latency_p95_ns: u64,
    /// Highest number of frames held at once across slot, tick and sink.
    pub max_buffered: usize,
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(values: &[u64], p: f64) -> u64 {
    if values.is_empty() {
        return 0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

struct SlotState {
    item: Option<(SourceItem, Instant)>,
    closed: bool,
    delivered: u64,
    dropped: u64,
}

struct Slot {
    state: Mutex<SlotState>,
    ready: Condvar,
}

enum Take {
    Item(SourceItem, Instant),
    Idle,
    Closed,
}

struct Gauge {
    current: AtomicUsize,
    max: AtomicUsize,
}

impl Gauge {
    fn add(&self) {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.max.fetch_max(now, Ordering::SeqCst);
    }

    fn release(&self) {
        self.current.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Slot {
    fn new() -> Self {
        Self {
            state: Mutex::new(SlotState {
                item: None,
                closed: false,
                delivered: 0,
                dropped: 0,
            }),
            ready: Condvar::new(),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, SlotState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Returns false once the slot is closed.
    fn put(&self, item: SourceItem, policy: DropPolicy, gauge: &Gauge) -> bool {
        let mut s = self.lock();
        if policy == DropPolicy::Lossless {
            while s.item.is_some() && !s.closed {
                s = self.ready.wait(s).unwrap_or_else(|p| p.into_inner());
            }
        }
        if s.closed {
            return false;
        }
        s.delivered += 1;
        if s.item.replace((item, Instant::now())).is_some() {
            s.dropped += 1;
        } else {
            gauge.add();
        }
        self.ready.notify_all();
        true
    }

    fn take(&self, wait: Duration) -> Take {
        let mut s = self.lock();
        if s.item.is_none() && !s.closed {
            s = self
                .ready
                .wait_timeout(s, wait)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
        match s.item.take() {
            Some((item, at)) => {
                self.ready.notify_all();
                Take::Item(item, at)
            }
            None if s.closed => Take::Closed,
            None => Take::Idle,
        }
    }

    fn close(&self) {
        self.lock().closed = true;
        self.ready.notify_all();
    }

    fn dropped(&self) -> u64 {
        self.lock().dropped
    }
}

enum Output {
    Tick(Box<TickResult>),
    Event(Box<LoopEvent>),
}

fn handle_control(pipeline: &mut Pipeline, command: ControlCommand) -> (ControlReply, bool) {
    match command {
        ControlCommand::Apply(delta) => match pipeline.apply_control(delta) {
            Ok(()) => (Ok(ControlAnswer::State(pipeline.state_view())), true),
            Err(e) => (Err(e.to_string()), false),
        },
        ControlCommand::GetState => (Ok(ControlAnswer::State(pipeline.state_view())), false),
        ControlCommand::ListLayers => (Ok(ControlAnswer::Layers(pipeline.layer_table().to_vec())), false),
    }
}

/// Runs capture and sink on their own threads and ticks on the caller's.
///
/// Control requests are handled between ticks only. Applied changes are sent
/// to the sink as a `state` event before any output that used them.
pub fn run_loop(
    pipeline: &mut Pipeline,
    source: &mut dyn FrameSource,
    sink: &mut dyn FrameSink,
    options: LoopOptions,
) -> Result<SessionSummary> {
    let slot = Slot::new();
    let gauge = Gauge {
        current: AtomicUsize::new(0),
        max: AtomicUsize::new(0),
    };
    let stop = options.stop.unwrap_or_default();
    let policy = options.drop_policy;
    let control = options.control;
    let started = Instant::now();
    let mut latencies = Vec::new();
    let mut dropped_seen = 0u64;

    thread::scope(|scope| -> Result<SessionSummary> {
        let slot = &slot;
        let gauge = &gauge;
        let stop = &stop;

        let capture = scope.spawn(move || -> Result<()> {
            let result = loop {
                if stop.load(Ordering::SeqCst) {
                    break Ok(());
                }
                match source.next_item() {
                    Ok(Some(item)) => {
                        if !slot.put(item, policy, gauge) {
                            break Ok(());
                        }
                    }
                    Ok(None) => break Ok(()),
                    Err(e) => break Err(e),
                }
            };
            slot.close();
            result
        });

        let (tx, rx) = mpsc::sync_channel::<Output>(0);
        let sink_thread = scope.spawn(move || -> Result<()> {
            for out in rx {
                match out {
                    Output::Tick(t) => {
                        let r = sink.on_tick(&t);
                        gauge.release();
                        r?;
                    }
                    Output::Event(e) => sink.on_event(&e)?,
                }
            }
            Ok(())
        });

        let send = |out: Output| -> Result<()> {
            tx.send(out)
                .map_err(|_| Error::Io(std::io::Error::other("sink stopped")))
        };

        let tick_result = (|| -> Result<()> {
            send(Output::Event(Box::new(LoopEvent {
                event: "session_start".into(),
                state: pipeline.state_view(),
            })))?;
            loop {
                if let Some(rx) = &control {
                    while let Ok(req) = rx.try_recv() {
                        let (reply, changed) = handle_control(pipeline, req.command);
                        if changed {
                            send(Output::Event(Box::new(LoopEvent {
                                event: "state".into(),
                                state: pipeline.state_view(),
                            })))?;
                        }
                        let _ = req.reply.send(reply);
                    }
                }
                if stop.load(Ordering::SeqCst) {
                    return Ok(());
                }
                let (item, captured) = match slot.take(Duration::from_millis(10)) {
                    Take::Item(item, at) => (item, at),
                    Take::Idle => continue,
                    Take::Closed => return Ok(()),
                };
                let dropped = slot.dropped();
                pipeline.record_dropped(dropped - dropped_seen);
                dropped_seen = dropped;
                let mut tick = match pipeline.tick(item.frame, item.keypoints.as_deref()) {
                    Ok(t) => t,
                    Err(e) => {
                        gauge.release();
                        return Err(e);
                    }
                };
                tick.latency_ns = captured.elapsed().as_nanos() as u64;
                latencies.push(tick.latency_ns);
                if let Err(e) = send(Output::Tick(Box::new(tick))) {
                    gauge.release();
                    return Err(e);
                }
            }
        })();

        stop.store(true, Ordering::SeqCst);
        slot.close();
        drop(tx);
        let capture_result = capture.join().expect("capture thread panicked");
        let sink_result = sink_thread.join().expect("sink thread panicked");
        tick_result?;
        sink_result?;
        capture_result?;

        // A frame still parked in the slot after a stop never got a tick.
        let mut s = slot.lock();
        if s.item.take().is_some() {
            s.dropped += 1;
        }
        let dropped = s.dropped;
        drop(s);
        pipeline.record_dropped(dropped - dropped_seen);

        let elapsed = started.elapsed().as_secs_f64();
        let c = pipeline.state().counters();
        Ok(SessionSummary {
            frames_in: c.frames_in,
            frames_out: c.frames_out,
            frames_dropped: c.frames_dropped,
            elapsed_s: elapsed,
            fps: if elapsed > 0.0 { c.frames_out as f64 / elapsed } else { 0.0 },
            drop_rate: if c.frames_in > 0 {
                c.frames_dropped as f64 / c.frames_in as f64
            } else {
                0.0
            },
            latency_p50_ns: percentile(&latencies, 50.0),
            latency_p95_ns: percentile(&latencies, 95.0),
            max_buffered: gauge.max.load(Ordering::SeqCst),
        })
    })
}
