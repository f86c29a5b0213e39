//! Canonical panoramic image representation, loading, rotation and
//! network-input normalization.
//!
//! Panoramas are 8-bit interleaved RGB, row-major, and cyclic along the
//! horizontal axis: column 0 adjoins column `width - 1`. The canonical
//! working size is 128x512 but every operation accepts arbitrary
//! positive dimensions.

use crate::error::{Error, Result};
use image::imageops::FilterType;
use std::path::Path;

/// Fixed channel count for all panoramas (R, G, B order).
pub const CHANNELS: usize = 3;

/// Canonical panorama height in pixels.
pub const CANONICAL_HEIGHT: usize = 128;
/// Canonical panorama width in pixels.
pub const CANONICAL_WIDTH: usize = 512;

/// Re-quantization rounding used everywhere pixel values are produced
/// from real arithmetic: round half away from zero.
#[inline]
pub fn round_half_away(x: f64) -> f64 {
    // f64::round already rounds half away from zero.
    x.round()
}

/// Clip a real value to the 8-bit range and re-quantize.
#[inline]
pub fn quantize_u8(x: f64) -> u8 {
    round_half_away(x).clamp(0.0, 255.0) as u8
}

/// An 8-bit color panorama, row-major interleaved RGB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanoramicImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl PanoramicImage {
    /// Wrap a raw interleaved RGB buffer. The buffer length must be
    /// exactly `height * width * 3`.
    pub fn from_raw(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Argument(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width * CHANNELS {
            return Err(Error::Argument(format!(
                "pixel buffer length {} does not match {}x{}x{}",
                pixels.len(),
                height,
                width,
                CHANNELS
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// A solid-color image, mostly useful in tests and the synthetic world.
    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width * CHANNELS);
        for _ in 0..height * width {
            pixels.extend_from_slice(&rgb);
        }
        Self::from_raw(height, width, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> u8 {
        debug_assert!(row < self.height && col < self.width && channel < CHANNELS);
        self.pixels[(row * self.width + col) * CHANNELS + channel]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: u8) {
        debug_assert!(row < self.height && col < self.width && channel < CHANNELS);
        self.pixels[(row * self.width + col) * CHANNELS + channel] = value;
    }

    /// Per-channel 256-bin histograms.
    pub fn channel_histograms(&self) -> [[u64; 256]; 3] {
        let mut hist = [[0u64; 256]; 3];
        for px in self.pixels.chunks_exact(CHANNELS) {
            for (c, &v) in px.iter().enumerate() {
                hist[c][v as usize] += 1;
            }
        }
        hist
    }

    /// Encode to the format implied by the path extension (PNG or JPEG).
    pub fn save(&self, path: &Path) -> Result<()> {
        let buf: image::RgbImage = image::ImageBuffer::from_raw(
            self.width as u32,
            self.height as u32,
            self.pixels.clone(),
        )
        .expect("buffer length verified at construction");
        buf.save(path)
            .map_err(|e| Error::format(path, e.to_string()))
    }
}

/// A panorama scaled to real values in [0, 1], same shape as its source.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl NormalizedImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major interleaved RGB values in [0, 1].
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.values[(row * self.width + col) * CHANNELS + channel]
    }
}

/// Load an image file and resize it (bilinear) to the target dimensions.
///
/// Grayscale inputs are replicated across the three output channels.
/// When the decoded size already matches the target the pixel buffer is
/// passed through untouched.
pub fn load_panorama(
    path: &Path,
    target_height: usize,
    target_width: usize,
) -> Result<PanoramicImage> {
    if target_height == 0 || target_width == 0 {
        return Err(Error::Argument(format!(
            "target dimensions must be positive, got {target_height}x{target_width}"
        )));
    }
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let decoded = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let rgb = decoded.to_rgb8();
    let rgb = if rgb.width() as usize == target_width && rgb.height() as usize == target_height {
        rgb
    } else {
        image::imageops::resize(
            &rgb,
            target_width as u32,
            target_height as u32,
            FilterType::Triangle,
        )
    };
    PanoramicImage::from_raw(target_height, target_width, rgb.into_raw())
}

/// Load an image file at its native decoded size (no resampling).
pub fn load_panorama_native(path: &Path) -> Result<PanoramicImage> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let decoded = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let rgb = decoded.to_rgb8();
    PanoramicImage::from_raw(rgb.height() as usize, rgb.width() as usize, rgb.into_raw())
}

/// Shift amount in columns for a rotation of `degrees` on an image of
/// width `width`: `round(degrees / 360 * width)`, half away from zero.
/// Degrees are reduced into [0, 360) first.
pub fn rotation_shift(degrees: f64, width: usize) -> usize {
    let d = degrees.rem_euclid(360.0);
    (round_half_away(d / 360.0 * width as f64) as usize) % width
}

/// Rotate the panorama by circularly shifting columns. The pixel
/// multiset is preserved exactly; a full turn is the identity.
pub fn rotate_panorama(img: &PanoramicImage, degrees: f64) -> PanoramicImage {
    let shift = rotation_shift(degrees, img.width());
    if shift == 0 {
        return img.clone();
    }
    let (h, w) = (img.height(), img.width());
    let mut out = vec![0u8; h * w * CHANNELS];
    let row_bytes = w * CHANNELS;
    let split = shift * CHANNELS;
    for row in 0..h {
        let src = &img.pixels()[row * row_bytes..(row + 1) * row_bytes];
        let dst = &mut out[row * row_bytes..(row + 1) * row_bytes];
        // out[.., c, ..] = in[.., (c + shift) mod w, ..]
        dst[..row_bytes - split].copy_from_slice(&src[split..]);
        dst[row_bytes - split..].copy_from_slice(&src[..split]);
    }
    PanoramicImage::from_raw(h, w, out).expect("shape preserved")
}

/// Scale an 8-bit panorama to network-input range: every value becomes
/// `raw / 255`.
pub fn to_network_input(img: &PanoramicImage) -> NormalizedImage {
    let values = img.pixels().iter().map(|&v| v as f32 / 255.0).collect();
    NormalizedImage {
        width: img.width(),
        height: img.height(),
        values,
    }
}
