#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use stagegan_core::backends::{MockExtractor, MockGenerator, MockSpec};
use stagegan_core::pipeline::{
    run_loop, ControlRequest, DropPolicy, FrameSink, FrameSource, LoopEvent, LoopOptions, Pipeline,
    SessionSummary, TickResult,
};
use stagegan_core::{PipelineConfig, Result};

pub fn mock_pipeline(config: PipelineConfig) -> Pipeline {
    let spec = MockSpec::with_seed(1);
    Pipeline::new(
        Box::new(MockExtractor::new(&spec)),
        Box::new(MockGenerator::new(&spec)),
        config,
    )
    .unwrap()
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

/// Set to regenerate committed golden files instead of comparing.
pub fn blessing() -> bool {
    std::env::var_os("STAGEGAN_BLESS").is_some()
}

/// What a sink observed, in order.
#[derive(Debug, Clone, PartialEq)]
pub enum Seen {
    Event { name: String, psi: f64 },
    Tick { sequence: u64, psi: f64 },
}

/// Records the order of events and ticks, then forwards to `inner`.
pub struct Recorder<S> {
    pub inner: S,
    pub seen: Arc<Mutex<Vec<Seen>>>,
}

impl<S: FrameSink> FrameSink for Recorder<S> {
    fn on_tick(&mut self, tick: &TickResult) -> Result<()> {
        self.seen.lock().unwrap().push(Seen::Tick {
            sequence: tick.output.sequence,
            psi: tick.provenance.psi,
        });
        self.inner.on_tick(tick)
    }

    fn on_event(&mut self, event: &LoopEvent) -> Result<()> {
        self.seen.lock().unwrap().push(Seen::Event {
            name: event.event.clone(),
            psi: event.state.psi,
        });
        self.inner.on_event(event)
    }
}

/// A run loop on a background thread.
pub struct Background {
    pub stop: Arc<AtomicBool>,
    pub control: Sender<ControlRequest>,
    handle: Option<JoinHandle<Result<SessionSummary>>>,
}

impl Background {
    pub fn start<Src, Snk>(mut pipeline: Pipeline, mut source: Src, mut sink: Snk, policy: DropPolicy) -> Self
    where
        Src: FrameSource + 'static,
        Snk: FrameSink + 'static,
    {
        let (tx, rx) = mpsc::channel();
        Self::start_with_control(move |opts| run_loop(&mut pipeline, &mut source, &mut sink, opts), tx, rx, policy)
    }

    fn start_with_control<F>(
        f: F,
        tx: Sender<ControlRequest>,
        rx: mpsc::Receiver<ControlRequest>,
        policy: DropPolicy,
    ) -> Self
    where
        F: FnOnce(LoopOptions) -> Result<SessionSummary> + Send + 'static,
    {
        let stop = Arc::new(AtomicBool::new(false));
        let opts = LoopOptions {
            drop_policy: policy,
            control: Some(rx),
            stop: Some(Arc::clone(&stop)),
        };
        let handle = std::thread::spawn(move || f(opts));
        Self {
            stop,
            control: tx,
            handle: Some(handle),
        }
    }

    /// Runs with a control receiver the caller already wired elsewhere.
    pub fn start_wired<Src, Snk>(
        mut pipeline: Pipeline,
        mut source: Src,
        mut sink: Snk,
        policy: DropPolicy,
        control: mpsc::Receiver<ControlRequest>,
        control_tx: Sender<ControlRequest>,
    ) -> Self
    where
        Src: FrameSource + 'static,
        Snk: FrameSink + 'static,
    {
        Self::start_with_control(
            move |opts| run_loop(&mut pipeline, &mut source, &mut sink, opts),
            control_tx,
            control,
            policy,
        )
    }

    pub fn finish(mut self) -> SessionSummary {
        self.stop.store(true, Ordering::SeqCst);
        self.handle.take().unwrap().join().unwrap().unwrap()
    }

    /// Waits for the source to run dry without requesting a stop.
    pub fn join(mut self) -> SessionSummary {
        self.handle.take().unwrap().join().unwrap().unwrap()
    }
}
