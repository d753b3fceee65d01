//! Feature-extractor and generator interfaces.
//!
//! Real model adapters plug in through [`BackendRegistry`] by URI scheme.
//! The `mock://` scheme provides deterministic CPU implementations that the
//! rest of the crate is tested against.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::gesture::ConstantTensor;
use crate::types::{FeatureMap, LatentVector, StyleStack, StyleVector, TransformMatrix};

pub mod conformance;
pub mod mock;
pub mod registry;

pub use mock::{mock_extract, mock_map, mock_synthesize, MockExtractor, MockGenerator, MockSpec};
pub use registry::{BackendRegistry, Options, RegistryConfig};

/// Name and shape of one extractor layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
}

impl LayerSpec {
    pub fn new(name: &str, channels: usize, rows: usize, cols: usize) -> Self {
        Self {
            name: name.to_string(),
            channels,
            rows,
            cols,
        }
    }
}

/// VGG16 activation shapes for a 256x256 RGB input.
pub fn vgg16_layer_table() -> Vec<LayerSpec> {
    let mut table = Vec::new();
    let blocks: [(usize, usize, usize, usize); 5] = [
        (1, 2, 64, 256),
        (2, 2, 128, 128),
        (3, 3, 256, 64),
        (4, 3, 512, 32),
        (5, 3, 512, 16),
    ];
    for (block, convs, channels, side) in blocks {
        for i in 1..=convs {
            table.push(LayerSpec::new(&format!("conv{block}_{i}"), channels, side, side));
        }
    }
    table.push(LayerSpec::new("adavgpool", 512, 7, 7));
    table
}

/// Layers whose channel count equals `z_dim`.
pub fn layers_with_channels(table: &[LayerSpec], z_dim: usize) -> Vec<LayerSpec> {
    table.iter().filter(|l| l.channels == z_dim).cloned().collect()
}

pub trait Extractor: Send {
    /// Stable identifier, used to key calibration files.
    fn id(&self) -> &str;

    fn list_layers(&self) -> Vec<LayerSpec>;

    /// Returns exactly the requested layers.
    fn extract(&mut self, frame: &Frame, layers: &[String]) -> Result<HashMap<String, FeatureMap>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub constant_access: bool,
    pub affine_access: bool,
}

pub trait Generator: Send {
    fn id(&self) -> &str;

    fn z_dim(&self) -> usize;

    fn w_dim(&self) -> usize;

    fn num_ws(&self) -> usize;

    fn output_size(&self) -> (u32, u32);

    fn capabilities(&self) -> Capabilities;

    fn w_avg(&self) -> StyleVector;

    fn map(&self, z: &LatentVector) -> Result<StyleVector>;

    fn synthesize(&mut self, stack: &StyleStack) -> Result<Frame>;

    fn constant(&self) -> Result<ConstantTensor> {
        Err(Error::ModeUnsupported(format!(
            "{} does not expose its learned constant",
            self.id()
        )))
    }

    fn set_constant(&mut self, _constant: ConstantTensor) -> Result<()> {
        Err(Error::ModeUnsupported(format!(
            "{} does not expose its learned constant",
            self.id()
        )))
    }

    fn set_input_transform(&mut self, _transform: TransformMatrix) -> Result<()> {
        Err(Error::ModeUnsupported(format!(
            "{} has no input transform",
            self.id()
        )))
    }
}
