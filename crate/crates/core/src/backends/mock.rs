//! Deterministic CPU stand-ins for the extractor and generator.
//!
//! The mocks are defined by behavior: per-cell locality for extraction,
//! a bounded odd mapping, and a test card whose structure comes from the
//! coarse and middle rows and whose palette comes from the fine rows.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{vgg16_layer_table, Capabilities, Extractor, Generator, LayerSpec};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::gesture::ConstantTensor;
use crate::types::{Band, FeatureMap, LatentVector, StyleStack, StyleVector, TransformMatrix};

/// FNV-1a, used to derive independent RNG streams from a seed and a label.
fn stream_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in label.bytes().chain(seed.to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn normals(seed: u64, label: &str, n: usize, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, label));
    (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v * scale
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockSpec {
    pub seed: u64,
    pub z_dim: usize,
    pub num_ws: usize,
    pub output_size: (u32, u32),
    pub layers: Vec<LayerSpec>,
    pub capabilities: Capabilities,
}

impl Default for MockSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            z_dim: 512,
            num_ws: 16,
            output_size: (256, 256),
            layers: vgg16_layer_table(),
            capabilities: Capabilities {
                constant_access: true,
                affine_access: true,
            },
        }
    }
}

impl MockSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// Mean luminance in `[0, 1]` of each cell of a `rows x cols` grid laid
/// over the frame, row-major.
fn cell_luminance(frame: &Frame, rows: usize, cols: usize) -> Result<Vec<f64>> {
    let (w, h) = (frame.width() as usize, frame.height() as usize);
    if rows > h || cols > w {
        return Err(Error::BackendContract(format!(
            "{w}x{h} frame is too small for a {rows}x{cols} feature grid"
        )));
    }
    let col_cell: Vec<usize> = (0..w).map(|x| x * cols / w).collect();
    let mut sums = vec![0.0f64; rows * cols];
    let mut counts = vec![0u32; rows * cols];
    let px = frame.pixels();
    for y in 0..h {
        let r = y * rows / h;
        let row = &px[y * w * 3..(y + 1) * w * 3];
        let base = r * cols;
        for (x, p) in row.chunks_exact(3).enumerate() {
            let lum = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            let cell = base + col_cell[x];
            sums[cell] += lum;
            counts[cell] += 1;
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s / (n as f64 * 255.0))
        .collect())
}

#[derive(Debug, Clone)]
struct ChannelMap {
    gain: Vec<f64>,
    bias: Vec<f64>,
}

impl ChannelMap {
    fn new(seed: u64, layer: &LayerSpec) -> Self {
        Self {
            gain: normals(seed, &format!("extract/{}/gain", layer.name), layer.channels, 1.0),
            bias: normals(seed, &format!("extract/{}/bias", layer.name), layer.channels, 0.25),
        }
    }

    fn expand(&self, layer: &LayerSpec, lum: &[f64]) -> Result<FeatureMap> {
        let cells = lum.len();
        let mut data = Vec::with_capacity(layer.channels * cells);
        for (g, b) in self.gain.iter().zip(&self.bias) {
            data.extend(lum.iter().map(|l| g * l + b));
        }
        FeatureMap::new(layer.name.clone(), layer.channels, layer.rows, layer.cols, data)
    }
}

/// Per-cell mean luminance expanded to the layer's channels by a seeded
/// per-channel affine map.
pub fn mock_extract(frame: &Frame, layer: &LayerSpec, seed: u64) -> Result<FeatureMap> {
    let lum = cell_luminance(frame, layer.rows, layer.cols)?;
    ChannelMap::new(seed, layer).expand(layer, &lum)
}

pub struct MockExtractor {
    id: String,
    seed: u64,
    layers: Vec<LayerSpec>,
    maps: HashMap<String, ChannelMap>,
}

impl MockExtractor {
    pub fn new(spec: &MockSpec) -> Self {
        Self {
            id: format!("mock://extractor?seed={}", spec.seed),
            seed: spec.seed,
            layers: spec.layers.clone(),
            maps: HashMap::new(),
        }
    }
}

impl Extractor for MockExtractor {
    fn id(&self) -> &str {
        &self.id
    }

    fn list_layers(&self) -> Vec<LayerSpec> {
        self.layers.clone()
    }

    fn extract(&mut self, frame: &Frame, layers: &[String]) -> Result<HashMap<String, FeatureMap>> {
        let mut out = HashMap::with_capacity(layers.len());
        for name in layers {
            let spec = self
                .layers
                .iter()
                .find(|l| &l.name == name)
                .ok_or_else(|| Error::BackendContract(format!("extractor has no layer {name}")))?;
            let seed = self.seed;
            let map = self
                .maps
                .entry(name.clone())
                .or_insert_with(|| ChannelMap::new(seed, spec));
            let lum = cell_luminance(frame, spec.rows, spec.cols)?;
            out.insert(name.clone(), map.expand(spec, &lum)?);
        }
        Ok(out)
    }
}

fn mapping_matrix(seed: u64, z_dim: usize) -> Vec<f64> {
    normals(seed, "map", z_dim * z_dim, 1.0 / (z_dim as f64).sqrt())
}

fn apply_mapping(matrix: &[f64], z: &LatentVector, z_dim: usize) -> Result<StyleVector> {
    if z.dim() != z_dim {
        return Err(Error::contract(format!(
            "latent has {} dims, mapping expects {z_dim}",
            z.dim()
        )));
    }
    let zv = z.values();
    let w = matrix
        .chunks_exact(z_dim)
        .map(|row| row.iter().zip(zv).map(|(a, b)| a * b).sum::<f64>().tanh())
        .collect();
    StyleVector::new(w, Band::Static)
}

/// `tanh(A z)` for the seeded matrix `A` of the mock generator.
pub fn mock_map(z: &LatentVector, seed: u64) -> Result<StyleVector> {
    apply_mapping(&mapping_matrix(seed, z.dim()), z, z.dim())
}

/// Renders the test card for `stack` with the default constant and the
/// identity input transform.
pub fn mock_synthesize(stack: &StyleStack, seed: u64) -> Result<Frame> {
    let spec = MockSpec {
        seed,
        z_dim: stack.dim(),
        num_ws: stack.num_ws(),
        ..MockSpec::default()
    };
    MockGenerator::new(&spec).synthesize(stack)
}

const CONST_SHAPE: (usize, usize, usize) = (512, 4, 4);

pub struct MockGenerator {
    id: String,
    z_dim: usize,
    num_ws: usize,
    size: (u32, u32),
    caps: Capabilities,
    mapping: Vec<f64>,
    /// Three projection vectors per synthesis band.
    projections: [Vec<f64>; 3],
    layout_weights: Vec<f64>,
    base_constant: ConstantTensor,
    constant: ConstantTensor,
    layout: [f64; 16],
    inverse_transform: TransformMatrix,
    chroma_basis: [[f64; 3]; 2],
}

impl MockGenerator {
    pub fn new(spec: &MockSpec) -> Self {
        let seed = spec.seed;
        let dim = spec.z_dim;
        let proj = |band: &str| normals(seed, &format!("synth/{band}"), 3 * dim, 1.0 / (dim as f64).sqrt());
        let n_const = CONST_SHAPE.0 * CONST_SHAPE.1 * CONST_SHAPE.2;
        let base_constant = ConstantTensor::new(CONST_SHAPE, normals(seed, "const", n_const, 1.0))
            .expect("seeded gaussian constant is finite and non-zero");
        let layout_weights = normals(seed, "layout", CONST_SHAPE.0, 1.0 / (CONST_SHAPE.0 as f64).sqrt());
        let mut g = Self {
            id: format!("mock://generator?seed={seed}"),
            z_dim: dim,
            num_ws: spec.num_ws,
            size: spec.output_size,
            caps: spec.capabilities,
            mapping: mapping_matrix(seed, dim),
            projections: [proj("coarse"), proj("middle"), proj("fine")],
            layout_weights,
            constant: base_constant.clone(),
            base_constant,
            layout: [0.0; 16],
            inverse_transform: TransformMatrix::IDENTITY,
            chroma_basis: chroma_basis(),
        };
        g.layout = g.compute_layout();
        g
    }

    /// Rows `[0, n/4)`, `[n/4, n/2)` and `[n/2, n)` drive structure, stripes
    /// and palette respectively, like the resolution ordering of a real
    /// synthesis network.
    fn synthesis_bands(&self) -> [std::ops::Range<usize>; 3] {
        let n = self.num_ws;
        [0..n / 4, n / 4..n / 2, n / 2..n]
    }

    fn band_features(&self, stack: &StyleStack, band: usize) -> [f64; 3] {
        let rows = self.synthesis_bands()[band].clone();
        let dim = stack.dim();
        let mut mean = vec![0.0; dim];
        let count = rows.len().max(1) as f64;
        for r in rows {
            for (m, v) in mean.iter_mut().zip(stack.row(r)) {
                *m += v / count;
            }
        }
        let p = &self.projections[band];
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            let dot: f64 = p[k * dim..(k + 1) * dim].iter().zip(&mean).map(|(a, b)| a * b).sum();
            *o = (2.0 * dot).tanh();
        }
        out
    }

    fn compute_layout(&self) -> [f64; 16] {
        let (ch, rows, cols) = CONST_SHAPE;
        let data = self.constant.data();
        let mut out = [0.0; 16];
        for (cell, o) in out.iter_mut().enumerate() {
            let v: f64 = (0..ch)
                .map(|c| self.layout_weights[c] * data[c * rows * cols + cell])
                .sum();
            *o = v.tanh();
        }
        out
    }

    fn sample_layout(&self, u: f64, v: f64) -> f64 {
        let gx = ((u + 1.0) * 2.0 - 0.5).clamp(0.0, 3.0);
        let gy = ((v + 1.0) * 2.0 - 0.5).clamp(0.0, 3.0);
        let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(3), (y0 + 1).min(3));
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        let at = |x: usize, y: usize| self.layout[y * 4 + x];
        let top = at(x0, y0) + (at(x1, y0) - at(x0, y0)) * fx;
        let bottom = at(x0, y1) + (at(x1, y1) - at(x0, y1)) * fx;
        top + (bottom - top) * fy
    }

    fn check_stack(&self, stack: &StyleStack) -> Result<()> {
        if stack.num_ws() != self.num_ws || stack.dim() != self.z_dim {
            return Err(Error::contract(format!(
                "stack is {}x{}, generator expects {}x{}",
                stack.num_ws(),
                stack.dim(),
                self.num_ws,
                self.z_dim
            )));
        }
        Ok(())
    }
}

/// Orthonormal basis of the plane orthogonal to the Rec.601 luma weights,
/// so chroma offsets leave grayscale unchanged.
fn chroma_basis() -> [[f64; 3]; 2] {
    let w: [f64; 3] = [0.299, 0.587, 0.114];
    let wn = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    let n = [w[0] / wn, w[1] / wn, w[2] / wn];
    let a = [1.0, -1.0, 0.0];
    let d = a[0] * n[0] + a[1] * n[1] + a[2] * n[2];
    let mut e1: [f64; 3] = [a[0] - d * n[0], a[1] - d * n[1], a[2] - d * n[2]];
    let l1 = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    e1.iter_mut().for_each(|v| *v /= l1);
    let e2 = [
        n[1] * e1[2] - n[2] * e1[1],
        n[2] * e1[0] - n[0] * e1[2],
        n[0] * e1[1] - n[1] * e1[0],
    ];
    [e1, e2]
}

impl Generator for MockGenerator {
    fn id(&self) -> &str {
        &self.id
    }

    fn z_dim(&self) -> usize {
        self.z_dim
    }

    fn w_dim(&self) -> usize {
        self.z_dim
    }

    fn num_ws(&self) -> usize {
        self.num_ws
    }

    fn output_size(&self) -> (u32, u32) {
        self.size
    }

    fn capabilities(&self) -> Capabilities {
        self.caps
    }

    /// `tanh(A z)` is odd and `z` is symmetric, so the mean style is zero.
    fn w_avg(&self) -> StyleVector {
        StyleVector::new(vec![0.0; self.z_dim], Band::Static).expect("zeros are finite")
    }

    fn map(&self, z: &LatentVector) -> Result<StyleVector> {
        apply_mapping(&self.mapping, z, self.z_dim)
    }

    fn synthesize(&mut self, stack: &StyleStack) -> Result<Frame> {
        self.check_stack(stack)?;
        let [c0, c1, c2] = self.band_features(stack, 0);
        let [m0, m1, m2] = self.band_features(stack, 1);
        let [f0, f1, f2] = self.band_features(stack, 2);

        let pi = std::f64::consts::PI;
        let (gs, gc) = (pi * c0).sin_cos();
        let phase = pi * c1;
        let gfreq = pi * (1.0 + 0.5 * (c2 + 1.0));
        let (ss, sc) = (pi * m1).sin_cos();
        let sfreq = pi * (3.0 + 5.0 * (m0 + 1.0));
        let samp = 0.5 + 0.5 * m2;
        let hue0 = pi * f0;
        let sat = 0.35 + 0.3 * (f1 + 1.0);
        let hue_slope = pi * f2 / 255.0;
        let [e1, e2] = self.chroma_basis;

        let (w, h) = self.size;
        let inv = self.inverse_transform;
        let mut pixels = Vec::with_capacity(w as usize * h as usize * 3);
        for py in 0..h {
            let v0 = (py as f64 + 0.5) / h as f64 * 2.0 - 1.0;
            for px in 0..w {
                let u0 = (px as f64 + 0.5) / w as f64 * 2.0 - 1.0;
                let (u, v) = inv.apply(u0, v0);
                let g = (gfreq * (u * gc + v * gs) + phase).sin();
                let s = samp * (sfreq * (u * sc + v * ss)).sin();
                let l = self.sample_layout(u, v);
                let lum = 128.0 + 45.0 * g + 25.0 * s + 30.0 * l;
                let k = sat * lum.min(255.0 - lum);
                let (hs, hc) = (hue0 + hue_slope * lum).sin_cos();
                for ch in 0..3 {
                    let d = hc * e1[ch] + hs * e2[ch];
                    pixels.push((lum + k * d).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        Frame::new(w, h, pixels)
    }

    fn constant(&self) -> Result<ConstantTensor> {
        if !self.caps.constant_access {
            return Err(Error::ModeUnsupported(format!("{} hides its constant", self.id)));
        }
        Ok(self.base_constant.clone())
    }

    fn set_constant(&mut self, constant: ConstantTensor) -> Result<()> {
        if !self.caps.constant_access {
            return Err(Error::ModeUnsupported(format!("{} hides its constant", self.id)));
        }
        if constant.shape() != CONST_SHAPE {
            return Err(Error::contract(format!(
                "constant shape {:?} does not match {CONST_SHAPE:?}",
                constant.shape()
            )));
        }
        self.constant = constant;
        self.layout = self.compute_layout();
        Ok(())
    }

    fn set_input_transform(&mut self, transform: TransformMatrix) -> Result<()> {
        if !self.caps.affine_access {
            return Err(Error::ModeUnsupported(format!("{} has no input transform", self.id)));
        }
        self.inverse_transform = transform
            .inverse()
            .ok_or_else(|| Error::contract("input transform is singular"))?;
        Ok(())
    }
}
