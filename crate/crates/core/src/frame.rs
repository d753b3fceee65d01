//! RGB frames, the fixed-aspect preprocessing step and EMA smoothing.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Smallest frame accepted by [`preprocess_frame`] along either axis.
pub const MIN_FRAME_SIDE: u32 = 16;

/// A row-major RGB8 raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
    /// Monotonic capture time in nanoseconds.
    pub timestamp_ns: u64,
    pub sequence: u64,
}

impl Frame {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DegenerateInput(format!(
                "frame must be non-empty, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::contract(format!(
                "{width}x{height} RGB frame needs {expected} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            timestamp_ns: 0,
            sequence: 0,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn with_meta(mut self, sequence: u64, timestamp_ns: u64) -> Self {
        self.sequence = sequence;
        self.timestamp_ns = timestamp_ns;
        self
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// SHA-256 over the dimensions and the raw pixel bytes, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.width.to_be_bytes());
        hasher.update(self.height.to_be_bytes());
        hasher.update(&self.pixels);
        hex::encode(hasher.finalize())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer_with_format(
            path,
            &self.pixels,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )?;
        Ok(())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(&mut out).write_image_rgb(self)?;
        Ok(out)
    }

    pub fn encode_jpeg(&self, quality: u8) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, quality)
            .write_image_rgb(self)?;
        Ok(out)
    }
}

trait WriteRgb {
    fn write_image_rgb(self, frame: &Frame) -> image::ImageResult<()>;
}

impl<E: image::ImageEncoder> WriteRgb for E {
    fn write_image_rgb(self, frame: &Frame) -> image::ImageResult<()> {
        self.write_image(
            &frame.pixels,
            frame.width,
            frame.height,
            image::ExtendedColorType::Rgb8,
        )
    }
}

/// Largest centered window of the given aspect ratio, as `(x, y, w, h)`.
///
/// Window sides are rounded to the nearest pixel so frames already at the
/// ratio (up to one pixel of rounding) are left uncropped.
pub fn center_crop_window(width: u32, height: u32, aspect: (u32, u32)) -> (u32, u32, u32, u32) {
    let (num, den) = (aspect.0 as u64, aspect.1 as u64);
    let (w, h) = (width as u64, height as u64);
    if w * den >= h * num {
        let crop_w = ((2 * h * num + den) / (2 * den)).min(w);
        (((w - crop_w) / 2) as u32, 0, crop_w as u32, height)
    } else {
        let crop_h = ((2 * w * den + num) / (2 * num)).min(h);
        (0, ((h - crop_h) / 2) as u32, width, crop_h as u32)
    }
}

/// Center-crops `frame` to `aspect` and resizes it bilinearly to `target`.
pub fn preprocess_frame(frame: &Frame, target: (u32, u32), aspect: (u32, u32)) -> Result<Frame> {
    if frame.width < MIN_FRAME_SIDE || frame.height < MIN_FRAME_SIDE {
        return Err(Error::DegenerateInput(format!(
            "frame {}x{} is smaller than {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}",
            frame.width, frame.height
        )));
    }
    if target.0 == 0 || target.1 == 0 || aspect.0 == 0 || aspect.1 == 0 {
        return Err(Error::contract("target size and aspect ratio must be positive"));
    }
    let window = center_crop_window(frame.width, frame.height, aspect);
    let out = resize_bilinear(frame, window, target);
    Ok(out.with_meta(frame.sequence, frame.timestamp_ns))
}

/// Bilinear resample of `window` (x, y, w, h) of `src` to `target`, using
/// pixel-center alignment and edge clamping.
fn resize_bilinear(src: &Frame, window: (u32, u32, u32, u32), target: (u32, u32)) -> Frame {
    let (wx, wy, ww, wh) = window;
    let (tw, th) = target;
    let stride = src.width as usize * 3;

    if (ww, wh) == (tw, th) {
        let mut pixels = Vec::with_capacity(tw as usize * th as usize * 3);
        for y in wy..wy + wh {
            let start = y as usize * stride + wx as usize * 3;
            pixels.extend_from_slice(&src.pixels[start..start + ww as usize * 3]);
        }
        return Frame {
            width: tw,
            height: th,
            pixels,
            timestamp_ns: 0,
            sequence: 0,
        };
    }

    // Precompute the horizontal taps once per output column.
    let sx = ww as f64 / tw as f64;
    let sy = wh as f64 / th as f64;
    let taps = |scale: f64, len: u32, offset: u32, n: u32| -> Vec<(usize, usize, f32)> {
        (0..n)
            .map(|i| {
                let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
                let i0 = pos.floor() as u32;
                let i1 = (i0 + 1).min(len - 1);
                ((offset + i0) as usize, (offset + i1) as usize, (pos - i0 as f64) as f32)
            })
            .collect()
    };
    let xt = taps(sx, ww, wx, tw);
    let yt = taps(sy, wh, wy, th);

    let mut pixels = vec![0u8; tw as usize * th as usize * 3];
    for (oy, &(y0, y1, fy)) in yt.iter().enumerate() {
        let r0 = &src.pixels[y0 * stride..(y0 + 1) * stride];
        let r1 = &src.pixels[y1 * stride..(y1 + 1) * stride];
        let out_row = &mut pixels[oy * tw as usize * 3..(oy + 1) * tw as usize * 3];
        for (ox, &(x0, x1, fx)) in xt.iter().enumerate() {
            for c in 0..3 {
                let p00 = r0[x0 * 3 + c] as f32;
                let p01 = r0[x1 * 3 + c] as f32;
                let p10 = r1[x0 * 3 + c] as f32;
                let p11 = r1[x1 * 3 + c] as f32;
                let top = p00 + (p01 - p00) * fx;
                let bottom = p10 + (p11 - p10) * fx;
                let v = top + (bottom - top) * fy;
                out_row[ox * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Frame {
        width: tw,
        height: th,
        pixels,
        timestamp_ns: 0,
        sequence: 0,
    }
}

/// Exponential moving average: `(1 - lambda) * previous + lambda * current`.
pub fn ema_smooth(previous: &[f64], current: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if previous.len() != current.len() {
        return Err(Error::contract(format!(
            "ema operands differ in length: {} vs {}",
            previous.len(),
            current.len()
        )));
    }
    check_lambda(lambda)?;
    if lambda == 1.0 {
        return Ok(current.to_vec());
    }
    Ok(previous
        .iter()
        .zip(current)
        .map(|(&p, &c)| if p == c { c } else { (1.0 - lambda) * p + lambda * c })
        .collect())
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::contract(format!("smoothing lambda {lambda} outside (0, 1]")));
    }
    Ok(())
}
