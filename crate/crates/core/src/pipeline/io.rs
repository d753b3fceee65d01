//! Frame sources, sinks and the keypoint log format.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::fixture::Scene;
use super::run_loop::{FrameSink, FrameSource, LoopEvent, SourceItem};
use super::TickResult;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::types::{Handedness, Keypoint, KeypointSet};

/// Nominal frame period of recorded sequences.
pub const RECORDED_FPS: u64 = 30;

pub fn frame_file_name(index: u64) -> String {
    format!("frame_{index:06}.png")
}

fn parse_frame_index(name: &str) -> Option<u64> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".png")?;
    if digits.len() < 6 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// One line of a keypoint log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointRecord {
    pub sequence: u64,
    pub part: String,
    #[serde(default)]
    pub handedness: Option<Handedness>,
    /// `[x, y, confidence, landmark_id]` per point.
    pub points: Vec<(f64, f64, f64, u32)>,
}

impl KeypointRecord {
    pub fn from_set(sequence: u64, set: &KeypointSet) -> Self {
        Self {
            sequence,
            part: set.part.clone(),
            handedness: set.handedness,
            points: set
                .points
                .iter()
                .map(|p| (p.x, p.y, p.confidence, p.id))
                .collect(),
        }
    }

    pub fn to_set(&self) -> KeypointSet {
        let points = self
            .points
            .iter()
            .map(|&(x, y, c, id)| Keypoint::new(x, y, c, id))
            .collect();
        KeypointSet::new(self.part.clone(), self.handedness, points)
    }
}

/// Keypoint sets grouped by frame sequence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeypointLog {
    frames: BTreeMap<u64, Vec<KeypointSet>>,
}

impl KeypointLog {
    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path)?;
        let mut log = Self::default();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: KeypointRecord = serde_json::from_str(&line)
                .map_err(|e| Error::config(format!("{}:{}: {e}", path.display(), n + 1)))?;
            log.push(record.sequence, record.to_set());
        }
        Ok(log)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for (seq, sets) in &self.frames {
            for set in sets {
                serde_json::to_writer(&mut out, &KeypointRecord::from_set(*seq, set))?;
                out.write_all(b"\n")?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn push(&mut self, sequence: u64, set: KeypointSet) {
        self.frames.entry(sequence).or_default().push(set);
    }

    /// Sets recorded for `sequence`; empty when the frame had none.
    pub fn get(&self, sequence: u64) -> &[KeypointSet] {
        self.frames.get(&sequence).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Lists `frame_%06d.png` files, failing if any index in `0..=max` is missing.
pub fn scan_frame_dir(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut found = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        if let Some(idx) = name.to_str().and_then(parse_frame_index) {
            found.insert(idx, entry.path());
        }
    }
    let Some(&max) = found.keys().next_back() else {
        return Err(Error::config(format!("no frame_%06d.png files in {}", dir.display())));
    };
    let missing: Vec<u64> = (0..=max).filter(|i| !found.contains_key(i)).collect();
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(u64::to_string).collect();
        return Err(Error::config(format!(
            "frame sequence has gaps; missing indices: {}",
            list.join(", ")
        )));
    }
    Ok(found.into_iter().collect())
}

/// Replays a directory of numbered PNG frames.
pub struct ImageDirSource {
    files: std::vec::IntoIter<(u64, PathBuf)>,
    keypoints: Option<KeypointLog>,
}

impl ImageDirSource {
    pub fn open(dir: &Path, keypoints: Option<KeypointLog>) -> Result<Self> {
        Ok(Self {
            files: scan_frame_dir(dir)?.into_iter(),
            keypoints,
        })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.len() == 0
    }
}

impl FrameSource for ImageDirSource {
    fn next_item(&mut self) -> Result<Option<SourceItem>> {
        let Some((idx, path)) = self.files.next() else {
            return Ok(None);
        };
        let frame = Frame::load_png(&path)?.with_meta(idx, idx * 1_000_000_000 / RECORDED_FPS);
        Ok(Some(SourceItem {
            frame,
            keypoints: self.keypoints.as_ref().map(|log| log.get(idx).to_vec()),
        }))
    }
}

/// Yields prepared items in order; used by tests.
pub struct MemorySource {
    items: std::vec::IntoIter<SourceItem>,
    interval: Option<Duration>,
}

impl MemorySource {
    pub fn new(items: Vec<SourceItem>) -> Self {
        Self {
            items: items.into_iter(),
            interval: None,
        }
    }

    pub fn from_frames(frames: Vec<Frame>) -> Self {
        Self::new(frames.into_iter().map(SourceItem::new).collect())
    }

    /// Sleeps `interval` before each item.
    pub fn paced(mut self, interval: Duration) -> Self {
        self.interval = Some(interval);
        self
    }
}

impl FrameSource for MemorySource {
    fn next_item(&mut self) -> Result<Option<SourceItem>> {
        if let Some(d) = self.interval {
            std::thread::sleep(d);
        }
        Ok(self.items.next())
    }
}

/// Renders the synthetic scene, optionally paced to a fixed rate.
pub struct SyntheticSource {
    scene: Scene,
    cache: Vec<Frame>,
    next: u64,
    limit: Option<u64>,
    interval: Option<Duration>,
    deadline: Option<Instant>,
}

/// Distinct frames rendered before the scene repeats.
const SYNTHETIC_PERIOD: u64 = 60;

impl SyntheticSource {
    pub fn new(scene: Scene) -> Self {
        Self {
            scene,
            cache: Vec::new(),
            next: 0,
            limit: None,
            interval: None,
            deadline: None,
        }
    }

    pub fn with_fps(mut self, fps: f64) -> Self {
        if fps > 0.0 && fps.is_finite() {
            self.interval = Some(Duration::from_secs_f64(1.0 / fps));
        }
        self
    }

    pub fn with_limit(mut self, frames: u64) -> Self {
        self.limit = Some(frames);
        self
    }
}

impl FrameSource for SyntheticSource {
    fn next_item(&mut self) -> Result<Option<SourceItem>> {
        if self.limit.is_some_and(|l| self.next >= l) {
            return Ok(None);
        }
        if let Some(interval) = self.interval {
            let now = Instant::now();
            let due = self.deadline.unwrap_or(now);
            if due > now {
                std::thread::sleep(due - now);
            }
            // Fall behind gracefully instead of bursting to catch up.
            self.deadline = Some(due.max(now) + interval);
        }
        let seq = self.next;
        let phase = (seq % SYNTHETIC_PERIOD) as usize;
        if self.cache.len() <= phase {
            self.cache.push(self.scene.frame(phase as u64)?);
        }
        let frame = self.cache[phase].clone().with_meta(seq, seq * 1_000_000_000 / RECORDED_FPS);
        self.next += 1;
        Ok(Some(SourceItem {
            frame,
            keypoints: Some(self.scene.keypoints(seq)),
        }))
    }
}

/// Writes every output as `frame_%06d.png` and remembers its hash.
pub struct PngDirSink {
    dir: PathBuf,
    hashes: Vec<String>,
}

impl PngDirSink {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hashes: Vec::new(),
        })
    }

    pub fn hashes(&self) -> &[String] {
        &self.hashes
    }

    pub fn into_hashes(self) -> Vec<String> {
        self.hashes
    }
}

impl FrameSink for PngDirSink {
    fn on_tick(&mut self, tick: &TickResult) -> Result<()> {
        let path = self.dir.join(frame_file_name(tick.output.sequence));
        tick.output.save_png(&path)?;
        self.hashes.push(tick.output.content_hash());
        Ok(())
    }
}

/// Keeps every tick and event in memory.
#[derive(Default)]
pub struct CollectSink {
    pub ticks: Vec<TickResult>,
    pub events: Vec<LoopEvent>,
}

impl FrameSink for CollectSink {
    fn on_tick(&mut self, tick: &TickResult) -> Result<()> {
        self.ticks.push(tick.clone());
        Ok(())
    }

    fn on_event(&mut self, event: &LoopEvent) -> Result<()> {
        self.events.push(event.clone());
        Ok(())
    }
}

/// Discards outputs, optionally spending a fixed time per tick.
#[derive(Default)]
pub struct NullSink {
    pub delay: Option<Duration>,
    pub ticks: u64,
}

impl FrameSink for NullSink {
    fn on_tick(&mut self, _tick: &TickResult) -> Result<()> {
        if let Some(d) = self.delay {
            std::thread::sleep(d);
        }
        self.ticks += 1;
        Ok(())
    }
}

/// Forwards to every inner sink in order.
pub struct FanoutSink<'a> {
    sinks: Vec<&'a mut dyn FrameSink>,
}

impl<'a> FanoutSink<'a> {
    pub fn new(sinks: Vec<&'a mut dyn FrameSink>) -> Self {
        Self { sinks }
    }
}

impl FrameSink for FanoutSink<'_> {
    fn on_tick(&mut self, tick: &TickResult) -> Result<()> {
        self.sinks.iter_mut().try_for_each(|s| s.on_tick(tick))
    }

    fn on_event(&mut self, event: &LoopEvent) -> Result<()> {
        self.sinks.iter_mut().try_for_each(|s| s.on_event(event))
    }
}
