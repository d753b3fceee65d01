//! The frame-to-image orchestrator.
//!
//! [`Pipeline`] owns the backends and all mutable session state. A tick
//! takes one captured frame (plus any keypoints) through the active mode and
//! returns the synthesized image. Control changes are applied between ticks
//! as whole-config snapshots; a rejected change leaves the state untouched.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backends::{Capabilities, Extractor, Generator, LayerSpec};
use crate::config::{Mode, ParamPatch, PipelineConfig};
use crate::encode::{
    channel_average, encode_frame, BandLatents, CalibrationFile, CalibrationStats, EncodeOptions,
};
use crate::error::{Error, Result};
use crate::frame::{ema_smooth, preprocess_frame, Frame};
use crate::gesture::{
    corrupt_constant, corruption_magnitude, hand_angle, hand_scale, make_affine, select_active_hand,
    ConstantTensor, CorruptionNoise,
};
use crate::styles::{
    build_style_stack, reseed_static, truncate_stack, BandStyles, StaticLatentState,
};
use crate::types::{Band, Handedness, KeypointSet, StyleStack, TransformMatrix};

pub mod fixture;
pub mod io;
mod run_loop;

pub use run_loop::{
    percentile, run_loop, ControlAnswer, ControlCommand, ControlReply, ControlRequest, DropPolicy, FrameSink,
    FrameSource, LoopEvent, LoopOptions, SessionSummary, SourceItem,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub frames_in: u64,
    pub frames_out: u64,
    pub frames_dropped: u64,
}

/// Smoothed gesture scalars, held across frames where detection fails.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct GestureMemory {
    magnitude: Option<f64>,
    angle: Option<f64>,
    scale: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PipelineState {
    config: Arc<PipelineConfig>,
    static_latent: StaticLatentState,
    calibration: HashMap<String, CalibrationStats>,
    /// Layers whose statistics came from a file and are not re-estimated.
    loaded_calibration: HashSet<String>,
    band_ema: Option<[Vec<f64>; 3]>,
    gesture: GestureMemory,
    active_hand: Option<Handedness>,
    counters: Counters,
    /// Most recent untruncated camera stack, reused by the corruption modes.
    last_stack: Option<StyleStack>,
}

impl PipelineState {
    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn static_latent(&self) -> &StaticLatentState {
        &self.static_latent
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn calibration(&self) -> &HashMap<String, CalibrationStats> {
        &self.calibration
    }

    pub fn active_hand(&self) -> Option<Handedness> {
        self.active_hand
    }
}

/// What a tick used to produce its output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TickProvenance {
    pub mode: Mode,
    pub psi: f64,
    pub static_seed: u64,
    pub standardized: bool,
    /// L2 norms of the smoothed coarse, middle and fine latents.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band_norms: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corruption: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angle_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub active_hand: Option<Handedness>,
}

#[derive(Debug, Clone)]
pub struct TickResult {
    pub output: Frame,
    /// Time spent inside the tick.
    pub latency_ns: u64,
    pub provenance: TickProvenance,
    /// The preprocessed camera frame, when the mode computed one.
    pub preview: Option<Frame>,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum ControlDelta {
    Params(ParamPatch),
    Mode(Mode),
    Reseed(u64),
}

/// Serializable view of the session, published to control clients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateView {
    pub mode: Mode,
    pub psi: f64,
    pub band_psi: crate::styles::BandPsi,
    pub psi_exempt_static: bool,
    pub layers: Vec<crate::encode::LayerWeight>,
    pub mixing_ranges: crate::styles::MixingRanges,
    pub smoothing_lambda: f64,
    pub gesture_lambda: f64,
    pub standardize: bool,
    pub calibrated: bool,
    pub static_seed: u64,
    pub session_seed: u64,
    pub num_ws: usize,
    pub z_dim: usize,
    pub output_size: [u32; 2],
    pub capabilities: Capabilities,
    pub frames_in: u64,
    pub frames_out: u64,
    pub frames_dropped: u64,
}

pub struct Pipeline {
    extractor: Box<dyn Extractor>,
    generator: Box<dyn Generator>,
    layer_table: Vec<LayerSpec>,
    base_constant: Option<ConstantTensor>,
    noise: Option<CorruptionNoise>,
    state: PipelineState,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// EMA on angles along the shorter arc, result wrapped to `(-180, 180]`.
fn smooth_angle(previous: f64, current: f64, lambda: f64) -> f64 {
    let mut delta = (current - previous) % 360.0;
    if delta > 180.0 {
        delta -= 360.0;
    } else if delta <= -180.0 {
        delta += 360.0;
    }
    let mut out = previous + lambda * delta;
    if out > 180.0 {
        out -= 360.0;
    } else if out <= -180.0 {
        out += 360.0;
    }
    out
}

fn smooth_scalar(previous: Option<f64>, current: Option<f64>, lambda: f64) -> Option<f64> {
    match (previous, current) {
        (Some(p), Some(c)) => Some(if p == c { c } else { (1.0 - lambda) * p + lambda * c }),
        (None, c) => c,
        (p, None) => p,
    }
}

impl Pipeline {
    pub fn new(
        extractor: Box<dyn Extractor>,
        generator: Box<dyn Generator>,
        config: PipelineConfig,
    ) -> Result<Self> {
        let layer_table = extractor.list_layers();
        validate_for_backends(&config, &layer_table, generator.as_ref())?;
        let static_latent = reseed_static(config.static_seed, generator.z_dim(), |z| generator.map(z))?;
        let (base_constant, noise) = if generator.capabilities().constant_access {
            let base = generator.constant()?;
            let noise = CorruptionNoise::prepare(&base, config.session_seed)?;
            (Some(base), Some(noise))
        } else {
            (None, None)
        };
        Ok(Self {
            extractor,
            generator,
            layer_table,
            base_constant,
            noise,
            state: PipelineState {
                config: Arc::new(config),
                static_latent,
                calibration: HashMap::new(),
                loaded_calibration: HashSet::new(),
                band_ema: None,
                gesture: GestureMemory::default(),
                active_hand: None,
                counters: Counters::default(),
                last_stack: None,
            },
        })
    }

    pub fn state(&self) -> &PipelineState {
        &self.state
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.state.config
    }

    pub fn layer_table(&self) -> &[LayerSpec] {
        &self.layer_table
    }

    pub fn extractor_id(&self) -> &str {
        self.extractor.id()
    }

    pub fn generator(&self) -> &dyn Generator {
        self.generator.as_ref()
    }

    pub fn state_view(&self) -> StateView {
        let c = &self.state.config;
        let (w, h) = self.generator.output_size();
        StateView {
            mode: c.mode,
            psi: c.psi,
            band_psi: c.band_psi,
            psi_exempt_static: c.psi_exempt_static,
            layers: c.layers.clone(),
            mixing_ranges: c.mixing_ranges.clone(),
            smoothing_lambda: c.smoothing_lambda,
            gesture_lambda: c.gesture_lambda,
            standardize: c.standardize,
            calibrated: self.calibration_ready(),
            static_seed: self.state.static_latent.seed,
            session_seed: c.session_seed,
            num_ws: self.generator.num_ws(),
            z_dim: self.generator.z_dim(),
            output_size: [w, h],
            capabilities: self.generator.capabilities(),
            frames_in: self.state.counters.frames_in,
            frames_out: self.state.counters.frames_out,
            frames_dropped: self.state.counters.frames_dropped,
        }
    }

    /// Installs precomputed statistics; those layers skip warm-up.
    pub fn load_calibration(&mut self, files: Vec<CalibrationFile>) -> Result<()> {
        let target = self.state.config.target();
        let mut staged = Vec::with_capacity(files.len());
        for file in files {
            let layer = file.layer.clone();
            file.check_key(self.extractor.id(), &layer, target)?;
            let stats = file.into_stats()?;
            if stats.dim() != self.generator.z_dim() {
                return Err(Error::config(format!(
                    "calibration for {layer} has {} dims, latent space has {}",
                    stats.dim(),
                    self.generator.z_dim()
                )));
            }
            staged.push((layer, stats));
        }
        for (layer, stats) in staged {
            self.state.loaded_calibration.insert(layer.clone());
            self.state.calibration.insert(layer, stats);
        }
        Ok(())
    }

    fn warmup_target(&self) -> u64 {
        self.state.config.calibration_warmup.max(2)
    }

    fn layer_ready(&self, layer: &str) -> bool {
        self.state.loaded_calibration.contains(layer)
            || self
                .state
                .calibration
                .get(layer)
                .is_some_and(|s| s.count() >= self.warmup_target())
    }

    pub fn calibration_ready(&self) -> bool {
        self.state.config.layers.iter().all(|l| self.layer_ready(&l.name))
    }

    /// Counts frames the capture stage discarded before they reached a tick.
    pub fn record_dropped(&mut self, n: u64) {
        self.state.counters.frames_in += n;
        self.state.counters.frames_dropped += n;
    }

    pub fn tick(&mut self, frame: Frame, keypoints: Option<&[KeypointSet]>) -> Result<TickResult> {
        let sequence = frame.sequence;
        self.state.counters.frames_in += 1;
        let started = Instant::now();
        let result = match self.state.config.mode {
            Mode::StyleMix => self.tick_style_mix(&frame),
            Mode::ConstCorrupt => self.tick_const_corrupt(keypoints.unwrap_or(&[])),
            Mode::Affine => self.tick_affine(keypoints.unwrap_or(&[])),
        };
        let (output, provenance, preview) = result.map_err(|e| e.at_frame(sequence))?;
        let output = output.with_meta(frame.sequence, frame.timestamp_ns);
        self.state.counters.frames_out += 1;
        Ok(TickResult {
            output,
            latency_ns: started.elapsed().as_nanos() as u64,
            provenance,
            preview,
        })
    }

    fn base_provenance(&self) -> TickProvenance {
        TickProvenance {
            mode: self.state.config.mode,
            psi: self.state.config.psi,
            static_seed: self.state.static_latent.seed,
            standardized: false,
            band_norms: None,
            corruption: None,
            angle_deg: None,
            scale: None,
            active_hand: None,
        }
    }

    fn truncated(&self, stack: &StyleStack) -> Result<StyleStack> {
        let c = &self.state.config;
        truncate_stack(
            stack,
            &self.generator.w_avg(),
            c.psi,
            &c.band_psi,
            c.psi_exempt_static,
        )
    }

    fn current_stack(&self) -> StyleStack {
        match &self.state.last_stack {
            Some(s) => s.clone(),
            None => StyleStack::repeated(&self.state.static_latent.w_static, self.generator.num_ws()),
        }
    }

    fn tick_style_mix(&mut self, frame: &Frame) -> Result<(Frame, TickProvenance, Option<Frame>)> {
        let config = Arc::clone(&self.state.config);
        let pre = preprocess_frame(frame, config.target(), config.aspect_ratio())?;
        let names = config.layer_names();
        let features = self.extractor.extract(&pre, &names)?;

        if config.standardize {
            for name in &names {
                if self.layer_ready(name) {
                    continue;
                }
                let fmap = features.get(name).ok_or_else(|| {
                    Error::BackendContract(format!("extractor did not return layer {name}"))
                })?;
                let sample = channel_average(fmap, None)?;
                self.state
                    .calibration
                    .entry(name.clone())
                    .or_insert_with(|| CalibrationStats::new(name.clone(), sample.len()))
                    .update(&sample)?;
            }
        }
        let standardized = config.standardize && self.calibration_ready();
        let latents = encode_frame(
            &features,
            &EncodeOptions {
                layers: &config.layers,
                z_dim: self.generator.z_dim(),
                calibration: standardized.then_some(&self.state.calibration),
                epsilon: config.epsilon,
            },
        )?;
        let smoothed = self.smooth_bands(latents, config.smoothing_lambda)?;

        let map = |v: &Vec<f64>, band: Band| -> Result<_> {
            let z = crate::types::LatentVector::new(v.clone())?;
            Ok(self.generator.map(&z)?.with_band(band))
        };
        let styles = BandStyles {
            coarse: map(&smoothed[0], Band::Coarse)?,
            middle: map(&smoothed[1], Band::Middle)?,
            fine: map(&smoothed[2], Band::Fine)?,
        };
        let stack = build_style_stack(
            &styles,
            &self.state.static_latent.w_static,
            &config.mixing_ranges,
            self.generator.num_ws(),
        )?;
        let output = self.generator.synthesize(&self.truncated(&stack)?)?;
        self.state.last_stack = Some(stack);

        let mut prov = self.base_provenance();
        prov.standardized = standardized;
        prov.band_norms = Some([l2(&smoothed[0]), l2(&smoothed[1]), l2(&smoothed[2])]);
        Ok((output, prov, Some(pre)))
    }

    fn smooth_bands(&mut self, latents: BandLatents, lambda: f64) -> Result<[Vec<f64>; 3]> {
        let current = [
            latents.coarse.into_values(),
            latents.middle.into_values(),
            latents.fine.into_values(),
        ];
        let next = match &self.state.band_ema {
            Some(prev) if prev[0].len() == current[0].len() => [
                ema_smooth(&prev[0], &current[0], lambda)?,
                ema_smooth(&prev[1], &current[1], lambda)?,
                ema_smooth(&prev[2], &current[2], lambda)?,
            ],
            _ => current,
        };
        self.state.band_ema = Some(next.clone());
        Ok(next)
    }

    fn tick_const_corrupt(&mut self, keypoints: &[KeypointSet]) -> Result<(Frame, TickProvenance, Option<Frame>)> {
        let config = Arc::clone(&self.state.config);
        let (base, noise) = match (&self.base_constant, &self.noise) {
            (Some(b), Some(n)) => (b, n),
            _ => {
                return Err(Error::ModeUnsupported(
                    "constant corruption needs constant access".into(),
                ))
            }
        };
        let candidates: Vec<KeypointSet> = keypoints
            .iter()
            .filter(|k| k.part == config.corruption_part)
            .cloned()
            .collect();
        let chosen = if config.corruption_part == "hand" {
            let hand = select_active_hand(&candidates, self.state.active_hand, &config.hand_selection());
            if let Some(h) = hand {
                self.state.active_hand = h.handedness.or(self.state.active_hand);
            }
            hand
        } else {
            candidates
                .iter()
                .max_by(|a, b| a.mean_confidence().total_cmp(&b.mean_confidence()))
        };
        let measured = chosen.and_then(|k| corruption_magnitude(k, config.confidence_floor));
        let m = smooth_scalar(self.state.gesture.magnitude, measured, config.gesture_lambda);
        self.state.gesture.magnitude = m;
        let amount = m.unwrap_or(0.0).clamp(0.0, 1.0);

        let corrupted = corrupt_constant(base, noise, amount)?;
        self.generator.set_constant(corrupted)?;
        let stack = self.truncated(&self.current_stack())?;
        let output = self.generator.synthesize(&stack)?;

        let mut prov = self.base_provenance();
        prov.corruption = Some(amount);
        prov.active_hand = self.state.active_hand;
        Ok((output, prov, None))
    }

    fn tick_affine(&mut self, keypoints: &[KeypointSet]) -> Result<(Frame, TickProvenance, Option<Frame>)> {
        let config = Arc::clone(&self.state.config);
        let hands: Vec<KeypointSet> = keypoints.iter().filter(|k| k.part == "hand").cloned().collect();
        let hand = select_active_hand(&hands, self.state.active_hand, &config.hand_selection());
        let (angle, scale) = match hand {
            Some(h) => {
                self.state.active_hand = h.handedness.or(self.state.active_hand);
                (
                    hand_angle(h, config.confidence_floor),
                    hand_scale(h, config.max_scale, config.confidence_floor),
                )
            }
            None => (None, None),
        };
        let lambda = config.gesture_lambda;
        let g = &mut self.state.gesture;
        g.angle = match (g.angle, angle) {
            (Some(p), Some(c)) => Some(smooth_angle(p, c, lambda)),
            (p, c) => c.or(p),
        };
        g.scale = smooth_scalar(g.scale, scale, lambda);
        let theta = g.angle.unwrap_or(0.0);
        let s = g.scale.unwrap_or(1.0);

        let transform = make_affine(theta, s)?;
        self.generator.set_input_transform(transform)?;
        let stack = self.truncated(&self.current_stack())?;
        let output = self.generator.synthesize(&stack)?;

        let mut prov = self.base_provenance();
        prov.angle_deg = Some(theta);
        prov.scale = Some(s);
        prov.active_hand = self.state.active_hand;
        Ok((output, prov, None))
    }

    /// Applies an operator change atomically between ticks.
    pub fn apply_control(&mut self, delta: ControlDelta) -> Result<()> {
        match delta {
            ControlDelta::Params(patch) => {
                let next = patch.apply_to(&self.state.config);
                validate_for_backends(&next, &self.layer_table, self.generator.as_ref())?;
                self.state.config = Arc::new(next);
            }
            ControlDelta::Mode(mode) => {
                let current = self.state.config.mode;
                check_mode(mode, self.generator.capabilities())?;
                if mode != current {
                    // Leave the generator in its pristine state for the next mode.
                    match current {
                        Mode::ConstCorrupt => {
                            if let Some(base) = &self.base_constant {
                                self.generator.set_constant(base.clone())?;
                            }
                        }
                        Mode::Affine => self.generator.set_input_transform(TransformMatrix::IDENTITY)?,
                        Mode::StyleMix => {}
                    }
                    self.state.gesture = GestureMemory::default();
                }
                let mut next = (*self.state.config).clone();
                next.mode = mode;
                self.state.config = Arc::new(next);
            }
            ControlDelta::Reseed(seed) => {
                let generator = &self.generator;
                let fresh = reseed_static(seed, generator.z_dim(), |z| generator.map(z))?;
                let mut next = (*self.state.config).clone();
                next.static_seed = seed;
                self.state.static_latent = fresh;
                self.state.config = Arc::new(next);
            }
        }
        Ok(())
    }
}

fn check_mode(mode: Mode, caps: Capabilities) -> Result<()> {
    match mode {
        Mode::ConstCorrupt if !caps.constant_access => Err(Error::ModeUnsupported(
            "const_corrupt needs a generator with constant access".into(),
        )),
        Mode::Affine if !caps.affine_access => Err(Error::ModeUnsupported(
            "affine needs a generator with an input transform".into(),
        )),
        _ => Ok(()),
    }
}

/// Config checks that depend on the attached extractor and generator.
pub fn validate_for_backends(
    config: &PipelineConfig,
    layers: &[LayerSpec],
    generator: &dyn Generator,
) -> Result<()> {
    config.validate()?;
    for lw in &config.layers {
        let spec = layers
            .iter()
            .find(|l| l.name == lw.name)
            .ok_or_else(|| Error::LayerSelection(format!("extractor has no layer {}", lw.name)))?;
        if spec.channels != generator.z_dim() {
            return Err(Error::LayerSelection(format!(
                "layer {} has {} channels but the latent space has {}",
                spec.name,
                spec.channels,
                generator.z_dim()
            )));
        }
    }
    config.mixing_ranges.validate(generator.num_ws())?;
    check_mode(config.mode, generator.capabilities())
}
