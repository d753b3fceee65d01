//! Real-time control of a pretrained image generator from a live camera.
//!
//! Camera frames are encoded into fake latent vectors through intermediate
//! feature maps and mixed with a static latent across style bands. Hand and
//! body keypoints can instead corrupt the generator's learned constant or
//! steer its input rotation and scale. Real models plug in through
//! [`backends::BackendRegistry`]; the `mock://` backends run anywhere.

// Negated comparisons are how NaN gets rejected throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backends;
pub mod config;
pub mod encode;
pub mod error;
pub mod frame;
pub mod gesture;
pub mod pipeline;
pub mod service;
pub mod styles;
pub mod types;

pub use config::{Mode, ParamPatch, PipelineConfig};
pub use error::{Error, Result};
pub use frame::{ema_smooth, preprocess_frame, Frame};
pub use types::{
    Band, FeatureMap, Handedness, Keypoint, KeypointSet, LatentVector, StyleStack, StyleVector,
    TransformMatrix,
};
