//! A procedural scene standing in for a camera and a hand tracker.
//!
//! Frames show a drifting gradient with a moving disc; keypoints trace a
//! right hand that sweeps side to side, a left hand that fades in partway
//! through, and a short stretch with no detections at all.

use std::f64::consts::PI;
use std::path::Path;

use super::io::{frame_file_name, KeypointLog};
use crate::error::Result;
use crate::frame::Frame;
use crate::types::{Handedness, Keypoint, KeypointSet};

pub const KEYPOINTS_FILE: &str = "keypoints.jsonl";
pub const HAND_LANDMARKS: u32 = 21;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scene {
    pub width: u32,
    pub height: u32,
    /// Frames per full side-to-side sweep of the right hand.
    pub sweep_period: u64,
}

impl Default for Scene {
    fn default() -> Self {
        Self {
            width: 426,
            height: 320,
            sweep_period: 40,
        }
    }
}

fn hand(handedness: Handedness, wrist: (f64, f64), angle_deg: f64, confidence: f64) -> KeypointSet {
    let (s, c) = angle_deg.to_radians().sin_cos();
    // Middle finger tip sits a quarter frame from the wrist along the angle.
    let dir = (s, -c);
    let points = (0..HAND_LANDMARKS)
        .map(|id| {
            let t = if id == 12 { 1.0 } else { id as f64 / 24.0 };
            let splay = if id == 0 || id == 12 { 0.0 } else { ((id % 4) as f64 - 1.5) * 0.01 };
            let x = wrist.0 + 0.25 * t * dir.0 - splay * dir.1;
            let y = wrist.1 + 0.25 * t * dir.1 + splay * dir.0;
            Keypoint::new(x, y, confidence, id)
        })
        .collect();
    KeypointSet::new("hand", Some(handedness), points)
}

impl Scene {
    pub fn with_size(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            ..Self::default()
        }
    }

    fn phase(&self, index: u64) -> f64 {
        2.0 * PI * (index % self.sweep_period) as f64 / self.sweep_period as f64
    }

    pub fn frame(&self, index: u64) -> Result<Frame> {
        let (w, h) = (self.width, self.height);
        let t = index as f64;
        let phase = self.phase(index);
        let cx = 0.5 + 0.3 * phase.sin();
        let cy = 0.5 + 0.2 * (2.0 * phase).cos();
        let radius = 0.18 + 0.04 * (0.3 * t).sin();
        let mut pixels = Vec::with_capacity((w * h * 3) as usize);
        for y in 0..h {
            let v = (y as f64 + 0.5) / h as f64;
            for x in 0..w {
                let u = (x as f64 + 0.5) / w as f64;
                let bg = 0.5 + 0.5 * (3.0 * u + 2.0 * v + 0.1 * t).sin();
                let d = ((u - cx) * (w as f64 / h as f64)).hypot(v - cy);
                let disc = (1.0 - (d / radius)).clamp(0.0, 1.0).sqrt();
                let r = 40.0 + 150.0 * bg * (1.0 - disc) + 215.0 * disc;
                let g = 60.0 + 90.0 * v + 100.0 * disc * (0.5 + 0.5 * phase.cos());
                let b = 90.0 + 120.0 * (1.0 - bg) * (1.0 - disc);
                pixels.extend([r, g, b].map(|c| c.round().clamp(0.0, 255.0) as u8));
            }
        }
        Frame::new(w, h, pixels).map(|f| f.with_meta(index, index * 1_000_000_000 / 30))
    }

    /// Detections for frame `index`.
    pub fn keypoints(&self, index: u64) -> Vec<KeypointSet> {
        let phase = self.phase(index);
        let local = index % 60;
        if (45..50).contains(&local) {
            return Vec::new();
        }
        let mut out = vec![hand(
            Handedness::Right,
            (0.5 + 0.15 * phase.sin(), 0.7),
            75.0 * phase.sin(),
            0.8,
        )];
        if (20..40).contains(&local) {
            let conf = 0.55 + 0.02 * (local - 20) as f64;
            out.push(hand(Handedness::Left, (0.3, 0.75), -30.0, conf));
        }
        let spread = 0.2 + 0.15 * (0.5 + 0.5 * phase.cos());
        out.push(KeypointSet::new(
            "body",
            None,
            (0..5)
                .map(|i| {
                    let a = i as f64 * 2.0 * PI / 5.0 + 0.1 * index as f64;
                    Keypoint::new(0.5 + spread * a.cos(), 0.5 + spread * a.sin(), 0.9, i)
                })
                .collect(),
        ));
        out
    }

    /// Writes `count` frames plus their keypoint log into `dir`.
    pub fn write_fixture(&self, dir: &Path, count: u64) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut log = KeypointLog::default();
        for i in 0..count {
            self.frame(i)?.save_png(&dir.join(frame_file_name(i)))?;
            for set in self.keypoints(i) {
                log.push(i, set);
            }
        }
        log.write(&dir.join(KEYPOINTS_FILE))
    }
}
