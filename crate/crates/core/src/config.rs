//! Pipeline configuration and operator-facing parameter patches.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encode::{LayerWeight, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::gesture::{HandSelection, DEFAULT_CONFIDENCE_FLOOR, DEFAULT_HYSTERESIS, DEFAULT_MAX_SCALE};
use crate::styles::{BandPsi, MixingRanges};

pub const PSI_RANGE: (f64, f64) = (-1.0, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Camera features drive the style stack.
    StyleMix,
    /// Body keypoints corrupt the generator's learned constant.
    ConstCorrupt,
    /// Hand geometry drives the generator's input rotation and scale.
    Affine,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::StyleMix => "style_mix",
            Mode::ConstCorrupt => "const_corrupt",
            Mode::Affine => "affine",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "style_mix" => Ok(Mode::StyleMix),
            "const_corrupt" => Ok(Mode::ConstCorrupt),
            "affine" => Ok(Mode::Affine),
            other => Err(Error::config(format!("unknown mode {other:?}"))),
        }
    }
}

fn default_layers() -> Vec<LayerWeight> {
    vec![LayerWeight {
        name: "conv5_3".into(),
        alpha: 1.0,
    }]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub layers: Vec<LayerWeight>,
    /// Working resolution fed to the extractor.
    pub target_frame: [u32; 2],
    /// Aspect ratio enforced by center cropping.
    pub aspect: [u32; 2],
    pub psi: f64,
    pub band_psi: BandPsi,
    /// Leave static rows untruncated.
    pub psi_exempt_static: bool,
    pub mixing_ranges: MixingRanges,
    /// EMA weight for band latents.
    pub smoothing_lambda: f64,
    /// EMA weight for gesture scalars.
    pub gesture_lambda: f64,
    pub session_seed: u64,
    pub static_seed: u64,
    pub standardize: bool,
    /// Frames of statistics gathered before standardization switches on.
    pub calibration_warmup: u64,
    pub epsilon: f64,
    pub confidence_floor: f64,
    pub hysteresis: f64,
    pub max_scale: f64,
    /// Keypoint part label that drives constant corruption.
    pub corruption_part: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::StyleMix,
            layers: default_layers(),
            target_frame: [426, 320],
            aspect: [4, 3],
            psi: 1.0,
            band_psi: BandPsi::default(),
            psi_exempt_static: false,
            mixing_ranges: MixingRanges::for_num_ws(16),
            smoothing_lambda: 0.3,
            gesture_lambda: 0.5,
            session_seed: 0,
            static_seed: 0,
            standardize: true,
            calibration_warmup: 120,
            epsilon: DEFAULT_EPSILON,
            confidence_floor: DEFAULT_CONFIDENCE_FLOOR,
            hysteresis: DEFAULT_HYSTERESIS,
            max_scale: DEFAULT_MAX_SCALE,
            corruption_part: "hand".into(),
        }
    }
}

fn check_psi(psi: f64, what: &str) -> Result<()> {
    if !(PSI_RANGE.0..=PSI_RANGE.1).contains(&psi) {
        return Err(Error::config(format!(
            "{what} {psi} outside [{}, {}]",
            PSI_RANGE.0, PSI_RANGE.1
        )));
    }
    Ok(())
}

fn check_lambda(lambda: f64, what: &str) -> Result<()> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::config(format!("{what} {lambda} outside (0, 1]")));
    }
    Ok(())
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let cfg: Self = serde_json::from_slice(&bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn target(&self) -> (u32, u32) {
        (self.target_frame[0], self.target_frame[1])
    }

    pub fn aspect_ratio(&self) -> (u32, u32) {
        (self.aspect[0], self.aspect[1])
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.name.clone()).collect()
    }

    pub fn hand_selection(&self) -> HandSelection {
        HandSelection {
            confidence_floor: self.confidence_floor,
            hysteresis: self.hysteresis,
        }
    }

    /// Checks everything that does not depend on the attached backends.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("at least one extractor layer is required"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if !(l.alpha >= 0.0) || !l.alpha.is_finite() {
                return Err(Error::config(format!("layer {} weight must be >= 0", l.name)));
            }
            if self.layers[..i].iter().any(|o| o.name == l.name) {
                return Err(Error::config(format!("layer {} listed twice", l.name)));
            }
        }
        if self.layers.iter().all(|l| l.alpha == 0.0) {
            return Err(Error::config("at least one layer weight must be positive"));
        }
        if self.target_frame.contains(&0) || self.aspect.contains(&0) {
            return Err(Error::config("target frame and aspect ratio must be positive"));
        }
        check_psi(self.psi, "psi")?;
        for p in self.band_psi.values() {
            check_psi(p, "band psi")?;
        }
        check_lambda(self.smoothing_lambda, "smoothing_lambda")?;
        check_lambda(self.gesture_lambda, "gesture_lambda")?;
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        if !(0.0..=1.0).contains(&self.confidence_floor) {
            return Err(Error::config("confidence_floor must be within [0, 1]"));
        }
        if !(self.hysteresis >= 0.0) {
            return Err(Error::config("hysteresis must be non-negative"));
        }
        if !(self.max_scale > 1.0) || !self.max_scale.is_finite() {
            return Err(Error::config("max_scale must be greater than 1"));
        }
        Ok(())
    }
}

/// A partial update to [`PipelineConfig`]; absent fields are left alone.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_psi: Option<BandPsi>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_exempt_static: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerWeight>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixing_ranges: Option<MixingRanges>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothing_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gesture_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardize: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hysteresis: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption_part: Option<String>,
}

impl ParamPatch {
    /// Applies the patch to a copy of `config`.
    pub fn apply_to(&self, config: &PipelineConfig) -> PipelineConfig {
        let mut c = config.clone();
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { c.$field = v.clone(); })*
            };
        }
        set!(
            psi,
            band_psi,
            psi_exempt_static,
            layers,
            mixing_ranges,
            smoothing_lambda,
            gesture_lambda,
            standardize,
            confidence_floor,
            hysteresis,
            max_scale,
            corruption_part
        );
        c
    }

    pub fn is_empty(&self) -> bool {
        self == &ParamPatch::default()
    }
}
