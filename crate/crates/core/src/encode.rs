//! Feature maps to fake latent vectors.
//!
//! Each band latent is the channel-wise spatial mean of a feature map over
//! that band's region, weighted across layers and optionally standardized
//! toward zero mean and unit variance with calibration statistics gathered
//! from representative frames.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Band, FeatureMap, LatentVector};

/// Floor on the standard deviation used by [`standardize`].
pub const DEFAULT_EPSILON: f64 = 1e-6;

pub const CALIBRATION_FILE_VERSION: u32 = 1;

/// A rectangular block of a feature grid assigned to one band.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureRegion {
    pub band: Band,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

impl FeatureRegion {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.rows.contains(&row) && self.cols.contains(&col)
    }

    pub fn cell_count(&self) -> usize {
        self.rows.len() * self.cols.len()
    }
}

/// The three camera-band regions of one grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandRegions {
    pub coarse: FeatureRegion,
    pub middle: FeatureRegion,
    pub fine: FeatureRegion,
}

impl BandRegions {
    pub fn iter(&self) -> impl Iterator<Item = &FeatureRegion> {
        [&self.coarse, &self.middle, &self.fine].into_iter()
    }
}

/// Splits an `rows x cols` grid into top (coarse), bottom-left (middle) and
/// bottom-right (fine). Odd sizes give the extra row to the bottom and the
/// extra column to the right.
pub fn partition_regions(rows: usize, cols: usize) -> Result<BandRegions> {
    if rows < 2 || cols < 2 {
        return Err(Error::DegenerateGrid { rows, cols });
    }
    let mid_r = rows / 2;
    let mid_c = cols / 2;
    Ok(BandRegions {
        coarse: FeatureRegion {
            band: Band::Coarse,
            rows: 0..mid_r,
            cols: 0..cols,
        },
        middle: FeatureRegion {
            band: Band::Middle,
            rows: mid_r..rows,
            cols: 0..mid_c,
        },
        fine: FeatureRegion {
            band: Band::Fine,
            rows: mid_r..rows,
            cols: mid_c..cols,
        },
    })
}

/// Per-channel mean of `fmap` over `region` (the whole grid when `None`).
pub fn channel_average(fmap: &FeatureMap, region: Option<&FeatureRegion>) -> Result<Vec<f64>> {
    let (rows, cols) = match region {
        Some(r) => {
            if r.rows.is_empty() || r.cols.is_empty() {
                return Err(Error::contract(format!(
                    "{} region is empty",
                    r.band
                )));
            }
            if r.rows.end > fmap.rows() || r.cols.end > fmap.cols() {
                return Err(Error::contract(format!(
                    "{} region rows {:?} cols {:?} exceeds {}x{} grid",
                    r.band,
                    r.rows,
                    r.cols,
                    fmap.rows(),
                    fmap.cols()
                )));
            }
            (r.rows.clone(), r.cols.clone())
        }
        None => (0..fmap.rows(), 0..fmap.cols()),
    };
    let count = (rows.len() * cols.len()) as f64;
    let width = fmap.cols();
    Ok((0..fmap.channels())
        .map(|c| {
            let plane = fmap.channel(c);
            let sum: f64 = rows
                .clone()
                .map(|r| plane[r * width + cols.start..r * width + cols.end].iter().sum::<f64>())
                .sum();
            sum / count
        })
        .collect())
}

/// `sum_l alpha_l * v_l`, weights used as given.
pub fn weighted_combine(layer_vectors: &[(&[f64], f64)]) -> Result<LatentVector> {
    let Some(((first, _), rest)) = layer_vectors.split_first() else {
        return Err(Error::contract("no layer vectors to combine"));
    };
    let dim = first.len();
    if let Some((v, _)) = rest.iter().find(|(v, _)| v.len() != dim) {
        return Err(Error::contract(format!(
            "layer vectors differ in length: {} vs {dim}",
            v.len()
        )));
    }
    if layer_vectors.iter().any(|(_, a)| !a.is_finite() || *a < 0.0) {
        return Err(Error::contract("layer weights must be finite and non-negative"));
    }
    if layer_vectors.iter().all(|(_, a)| *a == 0.0) {
        return Err(Error::contract("all layer weights are zero"));
    }
    if let [(v, alpha)] = layer_vectors {
        if *alpha == 1.0 {
            return LatentVector::new(v.to_vec());
        }
    }
    let mut out = vec![0.0; dim];
    for (v, alpha) in layer_vectors {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += alpha * x;
        }
    }
    LatentVector::new(out)
}

/// Streaming per-dimension mean and population variance (Welford).
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationStats {
    layer: String,
    mean: Vec<f64>,
    m2: Vec<f64>,
    count: u64,
}

impl CalibrationStats {
    pub fn new(layer: impl Into<String>, dim: usize) -> Self {
        Self {
            layer: layer.into(),
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            count: 0,
        }
    }

    pub fn layer(&self) -> &str {
        &self.layer
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Population variance (divides by the sample count).
    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.dim()];
        }
        let n = self.count as f64;
        self.m2.iter().map(|m| (m / n).max(0.0)).collect()
    }

    pub fn update(&mut self, sample: &[f64]) -> Result<()> {
        if sample.len() != self.dim() {
            return Err(Error::contract(format!(
                "calibration sample has {} dims, stats have {}",
                sample.len(),
                self.dim()
            )));
        }
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(sample) {
            let delta = x - *mean;
            *mean += delta / n;
            *m2 += delta * (x - *mean);
        }
        Ok(())
    }

    fn from_parts(layer: String, mean: Vec<f64>, variance: &[f64], count: u64) -> Self {
        let m2 = variance.iter().map(|v| v * count as f64).collect();
        Self {
            layer,
            mean,
            m2,
            count,
        }
    }
}

/// Returns `stats` advanced by one sample.
pub fn update_calibration(stats: &CalibrationStats, sample: &[f64]) -> Result<CalibrationStats> {
    let mut next = stats.clone();
    next.update(sample)?;
    Ok(next)
}

/// `(z - mean) / max(std, epsilon)` per dimension.
pub fn standardize(z_raw: &[f64], stats: &CalibrationStats, epsilon: f64) -> Result<LatentVector> {
    if stats.count() < 2 {
        return Err(Error::NotCalibrated(format!(
            "layer {} has {} calibration samples, need at least 2",
            stats.layer(),
            stats.count()
        )));
    }
    if z_raw.len() != stats.dim() {
        return Err(Error::contract(format!(
            "latent has {} dims, calibration has {}",
            z_raw.len(),
            stats.dim()
        )));
    }
    let values = z_raw
        .iter()
        .zip(stats.mean())
        .zip(stats.variance())
        .map(|((&z, &m), v)| (z - m) / v.sqrt().max(epsilon))
        .collect();
    LatentVector::new(values)
}

/// On-disk form of [`CalibrationStats`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub version: u32,
    pub extractor_id: String,
    pub layer: String,
    pub target_width: u32,
    pub target_height: u32,
    pub dim: usize,
    pub count: u64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl CalibrationFile {
    pub fn from_stats(stats: &CalibrationStats, extractor_id: &str, target: (u32, u32)) -> Self {
        Self {
            version: CALIBRATION_FILE_VERSION,
            extractor_id: extractor_id.to_string(),
            layer: stats.layer().to_string(),
            target_width: target.0,
            target_height: target.1,
            dim: stats.dim(),
            count: stats.count(),
            mean: stats.mean().to_vec(),
            variance: stats.variance(),
        }
    }

    pub fn into_stats(self) -> Result<CalibrationStats> {
        if self.version != CALIBRATION_FILE_VERSION {
            return Err(Error::config(format!(
                "calibration file version {} is not supported (expected {CALIBRATION_FILE_VERSION})",
                self.version
            )));
        }
        if self.mean.len() != self.dim || self.variance.len() != self.dim {
            return Err(Error::config("calibration vectors do not match dim"));
        }
        if self.variance.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::config("calibration variance must be non-negative"));
        }
        Ok(CalibrationStats::from_parts(
            self.layer,
            self.mean,
            &self.variance,
            self.count,
        ))
    }

    /// Checks that the file was produced for this extractor and frame size.
    pub fn check_key(&self, extractor_id: &str, layer: &str, target: (u32, u32)) -> Result<()> {
        if self.extractor_id != extractor_id
            || self.layer != layer
            || (self.target_width, self.target_height) != target
        {
            return Err(Error::config(format!(
                "calibration for ({}, {}, {}x{}) does not match ({extractor_id}, {layer}, {}x{})",
                self.extractor_id,
                self.layer,
                self.target_width,
                self.target_height,
                target.0,
                target.1
            )));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

/// File name used for a layer's calibration inside a calibration directory.
pub fn calibration_file_name(layer: &str) -> String {
    format!("calibration_{layer}.json")
}

/// Layer weight as configured for encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeight {
    pub name: String,
    pub alpha: f64,
}

/// Inputs to [`encode_frame`] beyond the feature maps themselves.
#[derive(Debug, Clone, Copy)]
pub struct EncodeOptions<'a> {
    pub layers: &'a [LayerWeight],
    pub z_dim: usize,
    /// Per-layer statistics; standardization runs only when present.
    pub calibration: Option<&'a HashMap<String, CalibrationStats>>,
    pub epsilon: f64,
}

/// The three fake latents of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BandLatents {
    pub coarse: LatentVector,
    pub middle: LatentVector,
    pub fine: LatentVector,
}

impl BandLatents {
    pub fn get(&self, band: Band) -> Option<&LatentVector> {
        match band {
            Band::Coarse => Some(&self.coarse),
            Band::Middle => Some(&self.middle),
            Band::Fine => Some(&self.fine),
            Band::Static => None,
        }
    }
}

/// Encodes the configured layers into coarse, middle and fine latents.
///
/// When calibration is supplied each layer's band averages are standardized
/// with that layer's statistics before the weighted combination.
pub fn encode_frame(
    features: &HashMap<String, FeatureMap>,
    opts: &EncodeOptions<'_>,
) -> Result<BandLatents> {
    if opts.layers.is_empty() {
        return Err(Error::config("no extractor layers configured"));
    }
    // per band, per layer
    let mut per_band: [Vec<(Vec<f64>, f64)>; 3] = Default::default();
    for lw in opts.layers {
        let fmap = features.get(&lw.name).ok_or_else(|| {
            Error::BackendContract(format!("extractor did not return layer {}", lw.name))
        })?;
        if fmap.channels() != opts.z_dim {
            return Err(Error::LayerSelection(format!(
                "layer {} has {} channels but the latent space has {}",
                lw.name,
                fmap.channels(),
                opts.z_dim
            )));
        }
        let regions = partition_regions(fmap.rows(), fmap.cols())?;
        let stats = match opts.calibration {
            Some(cal) => Some(cal.get(&lw.name).ok_or_else(|| {
                Error::NotCalibrated(format!("no calibration for layer {}", lw.name))
            })?),
            None => None,
        };
        for (slot, region) in per_band.iter_mut().zip(regions.iter()) {
            let mut v = channel_average(fmap, Some(region))?;
            if let Some(stats) = stats {
                v = standardize(&v, stats, opts.epsilon)?.into_values();
            }
            slot.push((v, lw.alpha));
        }
    }
    let combine = |entries: &[(Vec<f64>, f64)]| {
        let refs: Vec<(&[f64], f64)> = entries.iter().map(|(v, a)| (v.as_slice(), *a)).collect();
        weighted_combine(&refs)
    };
    let [coarse, middle, fine] = &per_band;
    Ok(BandLatents {
        coarse: combine(coarse)?,
        middle: combine(middle)?,
        fine: combine(fine)?,
    })
}
