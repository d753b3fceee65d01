//! Value types shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::Mul;

use crate::error::{Error, Result};

/// Which part of the style stack a vector drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Coarse,
    Middle,
    Fine,
    Static,
}

impl Band {
    pub const CAMERA: [Band; 3] = [Band::Coarse, Band::Middle, Band::Fine];

    pub fn as_str(self) -> &'static str {
        match self {
            Band::Coarse => "coarse",
            Band::Middle => "middle",
            Band::Fine => "fine",
            Band::Static => "static",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::contract(format!("{what} component {i} is not finite")));
    }
    Ok(())
}

/// A point in the generator's input latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVector {
    values: Vec<f64>,
}

impl LatentVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "latent")?;
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// A point in the mapped style space, tagged with the band it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleVector {
    values: Vec<f64>,
    band: Band,
}

impl StyleVector {
    pub fn new(values: Vec<f64>, band: Band) -> Result<Self> {
        check_finite(&values, "style")?;
        Ok(Self { values, band })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn band(&self) -> Band {
        self.band
    }

    pub fn with_band(mut self, band: Band) -> Self {
        self.band = band;
        self
    }
}

/// Per-layer style rows in synthesis order.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleStack {
    dim: usize,
    rows: Vec<Vec<f64>>,
    provenance: Vec<Band>,
}

impl StyleStack {
    pub fn new(rows: Vec<Vec<f64>>, provenance: Vec<Band>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::contract("style stack needs at least one row"));
        }
        if rows.len() != provenance.len() {
            return Err(Error::contract(format!(
                "{} rows but {} provenance labels",
                rows.len(),
                provenance.len()
            )));
        }
        let dim = rows[0].len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::contract(format!(
                    "row {i} has dimension {}, expected {dim}",
                    row.len()
                )));
            }
            check_finite(row, "style row")?;
        }
        Ok(Self {
            dim,
            rows,
            provenance,
        })
    }

    /// A stack with every row set to `w`.
    pub fn repeated(w: &StyleVector, num_ws: usize) -> Self {
        Self {
            dim: w.dim(),
            rows: vec![w.values().to_vec(); num_ws],
            provenance: vec![w.band(); num_ws],
        }
    }

    pub fn num_ws(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn provenance(&self) -> &[Band] {
        &self.provenance
    }

    pub(crate) fn rows_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.rows
    }
}

/// One layer's activation grid, indexed `[channel][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    layer: String,
    channels: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        layer: impl Into<String>,
        channels: usize,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if channels == 0 || rows == 0 || cols == 0 {
            return Err(Error::contract(format!(
                "feature map shape {channels}x{rows}x{cols} has an empty axis"
            )));
        }
        if data.len() != channels * rows * cols {
            return Err(Error::contract(format!(
                "feature map data has {} values, shape needs {}",
                data.len(),
                channels * rows * cols
            )));
        }
        Ok(Self {
            layer: layer.into(),
            channels,
            rows,
            cols,
            data,
        })
    }

    pub fn layer(&self) -> &str {
        &self.layer
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of spatial positions per channel.
    pub fn spatial_size(&self) -> usize {
        self.rows * self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.rows + row) * self.cols + col]
    }

    /// The contiguous `rows x cols` plane of one channel.
    pub fn channel(&self, channel: usize) -> &[f64] {
        let n = self.spatial_size();
        &self.data[channel * n..(channel + 1) * n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Handedness {
    Left,
    Right,
}

/// A normalized landmark: `x` grows left to right, `y` top to bottom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
    pub id: u32,
}

impl Keypoint {
    /// Clamps coordinates and confidence into `[0, 1]`. NaN becomes 0.
    pub fn new(x: f64, y: f64, confidence: f64, id: u32) -> Self {
        let clamp = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        Self {
            x: clamp(x),
            y: clamp(y),
            confidence: clamp(confidence),
            id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub part: String,
    pub handedness: Option<Handedness>,
    pub points: Vec<Keypoint>,
}

impl KeypointSet {
    pub fn new(part: impl Into<String>, handedness: Option<Handedness>, points: Vec<Keypoint>) -> Self {
        Self {
            part: part.into(),
            handedness,
            points,
        }
    }

    pub fn mean_confidence(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        self.points.iter().map(|p| p.confidence).sum::<f64>() / self.points.len() as f64
    }

    pub fn landmark(&self, id: u32) -> Option<&Keypoint> {
        self.points.iter().find(|p| p.id == id)
    }

    pub fn confident(&self, floor: f64) -> impl Iterator<Item = &Keypoint> {
        self.points.iter().filter(move |p| p.confidence >= floor)
    }
}

/// Homogeneous 2D transform, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformMatrix {
    pub m: [[f64; 3]; 3],
}

impl TransformMatrix {
    pub const IDENTITY: TransformMatrix = TransformMatrix {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Determinant of the upper-left 2x2 block.
    pub fn det2(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }

    /// Inverse of an affine transform (third row `0 0 1`).
    pub fn inverse(&self) -> Option<TransformMatrix> {
        let det = self.det2();
        if det.abs() < f64::EPSILON {
            return None;
        }
        let [[a, b, tx], [c, d, ty], _] = self.m;
        let ia = d / det;
        let ib = -b / det;
        let ic = -c / det;
        let id = a / det;
        Some(TransformMatrix {
            m: [
                [ia, ib, -(ia * tx + ib * ty)],
                [ic, id, -(ic * tx + id * ty)],
                [0.0, 0.0, 1.0],
            ],
        })
    }

    /// Checks the rotation-scale invariant: affine third row, equal-norm
    /// orthogonal columns in the linear block.
    pub fn is_rotation_scale(&self, tol: f64) -> bool {
        let m = &self.m;
        let affine_row = m[2][0] == 0.0 && m[2][1] == 0.0 && m[2][2] == 1.0;
        let n0 = m[0][0].hypot(m[1][0]);
        let n1 = m[0][1].hypot(m[1][1]);
        let dot = m[0][0] * m[0][1] + m[1][0] * m[1][1];
        affine_row && (n0 - n1).abs() <= tol && dot.abs() <= tol
    }

    pub fn max_abs_diff(&self, other: &TransformMatrix) -> f64 {
        self.m
            .iter()
            .flatten()
            .zip(other.m.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Default for TransformMatrix {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Mul for TransformMatrix {
    type Output = TransformMatrix;

    fn mul(self, rhs: TransformMatrix) -> TransformMatrix {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.m[i][k] * rhs.m[k][j]).sum();
            }
        }
        TransformMatrix { m: out }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_latent() {
        assert!(LatentVector::new(vec![0.0, f64::NAN]).is_err());
        assert!(StyleVector::new(vec![f64::INFINITY], Band::Fine).is_err());
    }

    #[test]
    fn feature_map_shape_is_checked() {
        assert!(FeatureMap::new("x", 2, 2, 2, vec![0.0; 8]).is_ok());
        assert!(FeatureMap::new("x", 2, 2, 2, vec![0.0; 7]).is_err());
        assert!(FeatureMap::new("x", 0, 2, 2, vec![]).is_err());
    }

    #[test]
    fn keypoints_are_clamped() {
        let p = Keypoint::new(-0.2, 1.5, 2.0, 0);
        assert_eq!((p.x, p.y, p.confidence), (0.0, 1.0, 1.0));
    }

    #[test]
    fn stack_rejects_ragged_rows() {
        let err = StyleStack::new(vec![vec![0.0; 2], vec![0.0; 3]], vec![Band::Coarse; 2]);
        assert!(err.is_err());
    }

    #[test]
    fn transform_inverse_roundtrip() {
        let t = TransformMatrix {
            m: [[0.0, -2.0, 1.0], [2.0, 0.0, -3.0], [0.0, 0.0, 1.0]],
        };
        let prod = t * t.inverse().unwrap();
        assert!(prod.max_abs_diff(&TransformMatrix::IDENTITY) < 1e-12);
    }
}
