//! Keypoint geometry to generator corruption controls.
//!
//! Coordinates are normalized with `y` pointing down. Distances are measured
//! from the image center and normalized by the half-diagonal so that a
//! corner maps to 1.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Handedness, KeypointSet, TransformMatrix};

pub const DEFAULT_CONFIDENCE_FLOOR: f64 = 0.5;
pub const DEFAULT_HYSTERESIS: f64 = 0.1;
pub const DEFAULT_MAX_SCALE: f64 = 2.0;

/// Hand landmark ids in the 21-point hand scheme.
pub const WRIST: u32 = 0;
pub const MIDDLE_FINGER_TIP: u32 = 12;

const CENTER: (f64, f64) = (0.5, 0.5);
const HALF_DIAGONAL: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// The generator's learned input constant, `[channel][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantTensor {
    shape: (usize, usize, usize),
    data: Vec<f64>,
}

impl ConstantTensor {
    pub fn new(shape: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.0 * shape.1 * shape.2 {
            return Err(Error::contract(format!(
                "constant shape {shape:?} needs {} values, got {}",
                shape.0 * shape.1 * shape.2,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("constant tensor has non-finite values"));
        }
        let t = Self { shape, data };
        if t.frobenius_norm() == 0.0 {
            return Err(Error::contract("constant tensor has zero norm"));
        }
        Ok(t)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn inner(&self, other: &ConstantTensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

/// Session noise for [`corrupt_constant`]: orthogonal to the base constant
/// and of equal Frobenius norm.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionNoise {
    pub session_seed: u64,
    pub tensor: ConstantTensor,
}

impl CorruptionNoise {
    pub fn prepare(base: &ConstantTensor, session_seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(session_seed);
        let base_sq: f64 = base.data.iter().map(|v| v * v).sum();
        let mut noise: Vec<f64> = (0..base.data.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        // Two Gram-Schmidt passes keep the residual projection at rounding level.
        for _ in 0..2 {
            let proj: f64 = noise.iter().zip(&base.data).map(|(n, b)| n * b).sum::<f64>() / base_sq;
            for (n, b) in noise.iter_mut().zip(&base.data) {
                *n -= proj * b;
            }
        }
        let norm = noise.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::DegenerateInput(
                "cannot build corruption noise for a one-element constant".into(),
            ));
        }
        let scale = base_sq.sqrt() / norm;
        noise.iter_mut().for_each(|v| *v *= scale);
        Ok(Self {
            session_seed,
            tensor: ConstantTensor::new(base.shape, noise)?,
        })
    }
}

/// Spherical blend `cos(m*pi/2) * base + sin(m*pi/2) * noise`.
pub fn corrupt_constant(
    base: &ConstantTensor,
    noise: &CorruptionNoise,
    m: f64,
) -> Result<ConstantTensor> {
    if base.shape != noise.tensor.shape {
        return Err(Error::contract(format!(
            "noise shape {:?} does not match constant shape {:?}",
            noise.tensor.shape, base.shape
        )));
    }
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::contract(format!("corruption amount {m} outside [0, 1]")));
    }
    if m == 0.0 {
        return Ok(base.clone());
    }
    if m == 1.0 {
        return Ok(noise.tensor.clone());
    }
    let (s, c) = (m * std::f64::consts::FRAC_PI_2).sin_cos();
    let data = base
        .data
        .iter()
        .zip(&noise.tensor.data)
        .map(|(b, n)| c * b + s * n)
        .collect();
    ConstantTensor::new(base.shape, data)
}

/// Parameters of [`select_active_hand`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandSelection {
    pub confidence_floor: f64,
    pub hysteresis: f64,
}

impl Default for HandSelection {
    fn default() -> Self {
        Self {
            confidence_floor: DEFAULT_CONFIDENCE_FLOOR,
            hysteresis: DEFAULT_HYSTERESIS,
        }
    }
}

/// Picks the single hand that drives the controls this frame.
///
/// The hand with the highest mean confidence wins, except that the
/// previously active handedness is kept until a rival beats it by more than
/// the hysteresis margin. Remaining ties go right before left.
pub fn select_active_hand<'a>(
    hands: &'a [KeypointSet],
    previous: Option<Handedness>,
    params: &HandSelection,
) -> Option<&'a KeypointSet> {
    let eligible: Vec<(&KeypointSet, f64)> = hands
        .iter()
        .map(|h| (h, h.mean_confidence()))
        .filter(|(h, c)| !h.points.is_empty() && *c >= params.confidence_floor)
        .collect();

    let rank = |h: &KeypointSet| match h.handedness {
        Some(Handedness::Right) => 0,
        Some(Handedness::Left) => 1,
        None => 2,
    };
    let best = eligible.iter().copied().reduce(|a, b| {
        if b.1 > a.1 || (b.1 == a.1 && rank(b.0) < rank(a.0)) {
            b
        } else {
            a
        }
    })?;

    if let Some(prev) = previous {
        let incumbent = eligible
            .iter()
            .copied()
            .filter(|(h, _)| h.handedness == Some(prev))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((hand, conf)) = incumbent {
            if best.0.handedness == Some(prev) || best.1 <= conf + params.hysteresis {
                return Some(hand);
            }
        }
    }
    Some(best.0)
}

fn normalized_center_distance(x: f64, y: f64) -> f64 {
    ((x - CENTER.0).hypot(y - CENTER.1) / HALF_DIAGONAL).clamp(0.0, 1.0)
}

/// Mean normalized distance of the confident points from the image center,
/// or `None` when no point clears the floor.
pub fn corruption_magnitude(keypoints: &KeypointSet, floor: f64) -> Option<f64> {
    let (sum, n) = keypoints
        .confident(floor)
        .fold((0.0, 0usize), |(s, n), p| {
            (s + (p.x - CENTER.0).hypot(p.y - CENTER.1), n + 1)
        });
    (n > 0).then(|| (sum / n as f64 / HALF_DIAGONAL).clamp(0.0, 1.0))
}

/// Signed angle in degrees between screen-up and the wrist to middle-finger
/// tip direction, clockwise positive, in `(-180, 180]`.
pub fn hand_angle(hand: &KeypointSet, floor: f64) -> Option<f64> {
    let wrist = hand.landmark(WRIST).filter(|p| p.confidence >= floor)?;
    let tip = hand.landmark(MIDDLE_FINGER_TIP).filter(|p| p.confidence >= floor)?;
    angle_from_up(tip.x - wrist.x, tip.y - wrist.y)
}

/// Clockwise angle of the image-space displacement `(dx, dy)` from screen-up.
pub fn angle_from_up(dx: f64, dy: f64) -> Option<f64> {
    if dx == 0.0 && dy == 0.0 {
        return None;
    }
    let deg = dx.atan2(-dy).to_degrees();
    Some(if deg <= -180.0 { deg + 360.0 } else { deg })
}

/// Scale in `[1, s_max]` from the distance of the confident-landmark
/// centroid to the image center.
pub fn hand_scale(hand: &KeypointSet, s_max: f64, floor: f64) -> Option<f64> {
    let (sx, sy, n) = hand
        .confident(floor)
        .fold((0.0, 0.0, 0usize), |(sx, sy, n), p| (sx + p.x, sy + p.y, n + 1));
    if n == 0 {
        return None;
    }
    let d = normalized_center_distance(sx / n as f64, sy / n as f64);
    Some(1.0 + d * (s_max - 1.0))
}

/// Rotation by `theta_deg` and uniform scale `s` about the origin.
pub fn make_affine(theta_deg: f64, s: f64) -> Result<TransformMatrix> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::contract(format!("scale {s} must be positive")));
    }
    if !theta_deg.is_finite() {
        return Err(Error::contract("rotation angle must be finite"));
    }
    let (sin, cos) = theta_deg.to_radians().sin_cos();
    Ok(TransformMatrix {
        m: [
            [s * cos, -s * sin, 0.0],
            [s * sin, s * cos, 0.0],
            [0.0, 0.0, 1.0],
        ],
    })
}
