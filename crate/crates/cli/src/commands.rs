use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use serde::Serialize;
use stagegan_core::backends::{BackendRegistry, Extractor, Generator, Options, RegistryConfig};
use stagegan_core::encode::{calibration_file_name, channel_average, CalibrationFile, CalibrationStats, LayerWeight};
use stagegan_core::pipeline::fixture::Scene;
use stagegan_core::pipeline::io::{ImageDirSource, KeypointLog, NullSink, PngDirSink, SyntheticSource};
use stagegan_core::pipeline::{run_loop, DropPolicy, FrameSink, FrameSource, LoopOptions, Pipeline, SessionSummary};
use stagegan_core::service::{Service, ServiceConfig};
use stagegan_core::{preprocess_frame, Error, Mode, PipelineConfig};

use crate::args::{BackendArgs, BenchArgs, CalibrateArgs, FixtureArgs, ListLayersArgs, ManifestArgs, RenderArgs, RunArgs};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_CAPABILITY: u8 = 3;
pub const EXIT_BACKEND: u8 = 4;

const DEFAULT_EXTRACTOR: &str = "mock://extractor?seed=1";
const DEFAULT_GENERATOR: &str = "mock://generator?seed=1";

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::ModeUnsupported(_) => EXIT_CAPABILITY,
            Error::Backend(_) | Error::BackendContract(_) => EXIT_BACKEND,
            Error::Config(_) | Error::LayerSelection(_) | Error::Json(_) => EXIT_USAGE,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn check_exists(path: &Path, what: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::usage(format!("{what} not found: {}", path.display())))
    }
}

fn registry_config(args: &BackendArgs) -> Result<RegistryConfig, Failure> {
    let mut cfg = match &args.backends {
        Some(path) => {
            check_exists(path, "backend config")?;
            let bytes = std::fs::read(path).map_err(Error::from)?;
            serde_json::from_slice(&bytes).map_err(Error::from)?
        }
        None => RegistryConfig {
            extractor: DEFAULT_EXTRACTOR.into(),
            generator: DEFAULT_GENERATOR.into(),
            options: Options::new(),
        },
    };
    if let Some(e) = &args.extractor {
        cfg.extractor = e.clone();
    }
    if let Some(g) = &args.generator {
        cfg.generator = g.clone();
    }
    Ok(cfg)
}

fn extractor(args: &BackendArgs) -> Result<Box<dyn Extractor>, Failure> {
    let cfg = registry_config(args)?;
    Ok(BackendRegistry::with_defaults().extractor(&cfg.extractor, &cfg.options)?)
}

type Backends = (Box<dyn Extractor>, Box<dyn Generator>);

fn backends(args: &BackendArgs) -> Result<Backends, Failure> {
    let cfg = registry_config(args)?;
    Ok(BackendRegistry::with_defaults().resolve(&cfg)?)
}

fn parse_layer(spec: &str) -> Result<LayerWeight, Failure> {
    let (name, alpha) = match spec.split_once(':') {
        Some((n, a)) => (
            n,
            a.parse()
                .map_err(|_| Failure::usage(format!("layer weight in {spec:?} is not a number")))?,
        ),
        None => (spec, 1.0),
    };
    Ok(LayerWeight {
        name: name.to_string(),
        alpha,
    })
}

/// Config file first, then flag overrides.
fn pipeline_config(m: &ManifestArgs) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &m.config {
        Some(path) => {
            check_exists(path, "config")?;
            PipelineConfig::load(path)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(mode) = &m.mode {
        cfg.mode = mode.parse::<Mode>()?;
    }
    if let Some(psi) = m.psi {
        cfg.psi = psi;
    }
    if !m.layers.is_empty() {
        cfg.layers = m.layers.iter().map(|s| parse_layer(s)).collect::<Result<_, _>>()?;
    }
    if let Some(s) = m.static_seed {
        cfg.static_seed = s;
    }
    if let Some(s) = m.session_seed {
        cfg.session_seed = s;
    }
    if m.no_standardize {
        cfg.standardize = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn build_pipeline(m: &ManifestArgs) -> Result<Pipeline, Failure> {
    let cfg = pipeline_config(m)?;
    let (ex, gen) = backends(&m.backends)?;
    let mut pipeline = Pipeline::new(ex, gen, cfg)?;
    if let Some(dir) = &m.calibration {
        check_exists(dir, "calibration directory")?;
        let files = pipeline
            .config()
            .layer_names()
            .iter()
            .map(|layer| {
                let path = dir.join(calibration_file_name(layer));
                check_exists(&path, "calibration file")?;
                Ok(CalibrationFile::read(&path)?)
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        pipeline.load_calibration(files)?;
    }
    Ok(pipeline)
}

fn read_keypoints(path: Option<&PathBuf>) -> Result<Option<KeypointLog>, Failure> {
    match path {
        Some(p) => {
            check_exists(p, "keypoint log")?;
            Ok(Some(KeypointLog::read(p)?))
        }
        None => Ok(None),
    }
}

fn print_summary(s: &SessionSummary) {
    println!(
        "frames {} in, {} out, {} dropped ({:.1}%); {:.1} fps; latency p50 {:.2} ms, p95 {:.2} ms",
        s.frames_in,
        s.frames_out,
        s.frames_dropped,
        100.0 * s.drop_rate,
        s.fps,
        s.latency_p50_ns as f64 / 1e6,
        s.latency_p95_ns as f64 / 1e6,
    );
}

fn open_source(spec: &str, keypoints: Option<&PathBuf>) -> Result<Box<dyn FrameSource>, Failure> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "synthetic" => {
            let fps = if arg.is_empty() {
                30.0
            } else {
                arg.parse()
                    .map_err(|_| Failure::usage(format!("bad synthetic frame rate {arg:?}")))?
            };
            Ok(Box::new(SyntheticSource::new(Scene::default()).with_fps(fps)))
        }
        "dir" => {
            let dir = Path::new(arg);
            check_exists(dir, "frame directory")?;
            Ok(Box::new(ImageDirSource::open(dir, read_keypoints(keypoints)?)?))
        }
        "camera" => Err(Error::Backend(format!("no camera adapter is registered for {spec:?}")).into()),
        _ => Err(Failure::usage(format!(
            "unknown source {spec:?}; expected synthetic[:FPS], dir:PATH or camera:INDEX"
        ))),
    }
}

pub fn run(a: RunArgs) -> CmdResult {
    let mut pipeline = build_pipeline(&a.manifest)?;
    let mut source = open_source(&a.source, a.keypoints.as_ref())?;
    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = Arc::clone(&stop);
        if let Err(e) = ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst)) {
            log::warn!("interrupt handler not installed: {e}");
        }
    }
    if let Some(secs) = a.duration {
        if !(secs >= 0.0 && secs.is_finite()) {
            return Err(Failure::usage("duration must be a non-negative number of seconds"));
        }
        let stop = Arc::clone(&stop);
        std::thread::spawn(move || {
            std::thread::sleep(Duration::from_secs_f64(secs));
            stop.store(true, Ordering::SeqCst);
        });
    }

    let (tx, rx) = mpsc::channel();
    let mut service = None;
    let mut sink: Box<dyn FrameSink> = if a.no_service {
        Box::new(NullSink::default())
    } else {
        let cfg = ServiceConfig {
            control_addr: a.control.clone(),
            stream_addr: a.stream.clone(),
            preview_divisor: a.preview_divisor,
            ..Default::default()
        };
        let (svc, sink) = Service::start(&cfg, tx, pipeline.state_view())?;
        eprintln!("control on {}, stream on {}", svc.control_addr(), svc.stream_addr());
        service = Some(svc);
        Box::new(sink)
    };
    let options = LoopOptions {
        drop_policy: DropPolicy::LatestWins,
        control: Some(rx),
        stop: Some(stop),
    };
    let summary = run_loop(&mut pipeline, source.as_mut(), sink.as_mut(), options);
    if let Some(svc) = service {
        svc.shutdown();
    }
    let summary = summary?;
    print_summary(&summary);
    if let Some(path) = &a.summary {
        write_json(path, &summary)?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(Error::from)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::from(e).into())
}

#[derive(Serialize)]
struct RenderSummary {
    frames: u64,
    fps: f64,
    dropped: u64,
    latency_p50_ns: u64,
    latency_p95_ns: u64,
    output_hashes: Vec<String>,
}

pub fn render(a: RenderArgs) -> CmdResult {
    check_exists(&a.frames, "frame directory")?;
    let keypoints = read_keypoints(a.keypoints.as_ref())?;
    let mut pipeline = build_pipeline(&a.manifest)?;
    let mut source = ImageDirSource::open(&a.frames, keypoints)?;
    let mut sink = PngDirSink::create(&a.out)?;
    let options = LoopOptions {
        drop_policy: DropPolicy::Lossless,
        ..Default::default()
    };
    let s = run_loop(&mut pipeline, &mut source, &mut sink, options)?;
    let summary = RenderSummary {
        frames: s.frames_out,
        fps: s.fps,
        dropped: s.frames_dropped,
        latency_p50_ns: s.latency_p50_ns,
        latency_p95_ns: s.latency_p95_ns,
        output_hashes: sink.into_hashes(),
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    println!("rendered {} frames into {}", summary.frames, a.out.display());
    Ok(())
}

pub fn calibrate(a: CalibrateArgs) -> CmdResult {
    let cfg = pipeline_config(&a.manifest)?;
    let mut extractor = extractor(&a.manifest.backends)?;
    let names = cfg.layer_names();
    let mut source: Box<dyn FrameSource> = match (&a.frames, a.synthetic) {
        (Some(dir), _) => {
            check_exists(dir, "frame directory")?;
            Box::new(ImageDirSource::open(dir, None)?)
        }
        (None, Some(n)) => Box::new(SyntheticSource::new(Scene::default()).with_limit(n)),
        (None, None) => return Err(Failure::usage("either --frames or --synthetic is required")),
    };
    let mut stats: Vec<Option<CalibrationStats>> = vec![None; names.len()];
    let mut count = 0u64;
    while let Some(item) = source.next_item()? {
        let frame = preprocess_frame(&item.frame, cfg.target(), cfg.aspect_ratio())?;
        let maps = extractor.extract(&frame, &names)?;
        for (name, slot) in names.iter().zip(stats.iter_mut()) {
            let fmap = maps
                .get(name)
                .ok_or_else(|| Error::BackendContract(format!("extractor did not return layer {name}")))?;
            let sample = channel_average(fmap, None)?;
            slot.get_or_insert_with(|| CalibrationStats::new(name.clone(), sample.len()))
                .update(&sample)?;
        }
        count += 1;
    }
    if count < 2 {
        return Err(Failure::usage(format!("need at least 2 samples, got {count}")));
    }
    std::fs::create_dir_all(&a.out).map_err(Error::from)?;
    for s in stats.into_iter().flatten() {
        let path = a.out.join(calibration_file_name(s.layer()));
        CalibrationFile::from_stats(&s, extractor.id(), cfg.target()).write(&path)?;
        println!("{}", path.display());
    }
    Ok(())
}

pub fn list_layers(a: ListLayersArgs) -> CmdResult {
    let table = extractor(&a.backends)?.list_layers();
    let rows: Vec<_> = table
        .into_iter()
        .filter(|l| a.z_dim.is_none_or(|z| l.channels == z))
        .collect();
    if a.json {
        println!("{}", serde_json::to_string_pretty(&rows).map_err(Error::from)?);
    } else {
        for l in rows {
            println!("{:<10} {:>4} {}x{}", l.name, l.channels, l.rows, l.cols);
        }
    }
    Ok(())
}

pub fn bench(a: BenchArgs) -> CmdResult {
    let mut pipeline = build_pipeline(&a.manifest)?;
    let mut source = SyntheticSource::new(Scene::default()).with_limit(a.frames);
    let mut sink = NullSink::default();
    let options = LoopOptions {
        drop_policy: DropPolicy::Lossless,
        ..Default::default()
    };
    let summary = run_loop(&mut pipeline, &mut source, &mut sink, options)?;
    print_summary(&summary);
    println!("{}", serde_json::to_string(&summary).map_err(Error::from)?);
    Ok(())
}

pub fn fixture(a: FixtureArgs) -> CmdResult {
    if a.width < 16 || a.height < 16 {
        return Err(Failure::usage("fixture frames must be at least 16x16"));
    }
    Scene::with_size(a.width, a.height).write_fixture(&a.out, a.count)?;
    println!("wrote {} frames to {}", a.count, a.out.display());
    Ok(())
}
