//! Inputs shared by the benchmarks.

use stagegan_core::backends::{MockExtractor, MockGenerator, MockSpec};
use stagegan_core::pipeline::fixture::Scene;
use stagegan_core::pipeline::Pipeline;
use stagegan_core::{FeatureMap, Frame, PipelineConfig};

/// A 640x480 camera-sized frame from the synthetic scene.
pub fn camera_frame() -> Frame {
    Scene::with_size(640, 480).frame(0).expect("scene frame")
}

/// A conv5-shaped map with a simple deterministic pattern.
pub fn conv5_map() -> FeatureMap {
    let (c, h, w) = (512, 16, 16);
    let data = (0..c * h * w).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
    FeatureMap::new("conv5_3", c, h, w, data).expect("valid shape")
}

/// Mock pipeline at the default 256x256 output size.
pub fn mock_pipeline(config: PipelineConfig) -> Pipeline {
    let spec = MockSpec::with_seed(1);
    Pipeline::new(
        Box::new(MockExtractor::new(&spec)),
        Box::new(MockGenerator::new(&spec)),
        config,
    )
    .expect("mock backends support every mode")
}
