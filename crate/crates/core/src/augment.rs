//! Photometric and geometric augmentation effects for panoramas, plus
//! the deterministic combined-effect enumerator and corpus emitter.
//!
//! Every transform is a pure function of (image, parameters); randomness
//! enters only through the seed-keyed enumerator. Convolutions treat the
//! horizontal axis as cyclic (panoramas wrap) and replicate rows at the
//! top and bottom edges. All re-quantization rounds half away from zero.

use crate::dataset::{Frame, Manifest};
use crate::error::{Error, Result};
use crate::imaging::{self, quantize_u8, PanoramicImage, CHANNELS};
use rand::prelude::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::Path;

/// Intensity delta at the boundary of every local effect.
pub const LOCAL_FLOOR: u8 = 5;
/// Admissible peak intensity deltas for local effects.
pub const LOCAL_PEAKS: [u8; 2] = [100, 160];
/// Admissible half-extent range (pixels) for local effect shapes.
pub const LOCAL_SIZE_RANGE: (u32, u32) = (15, 40);
/// Admissible constant range for global brightness changes.
pub const GLOBAL_BRIGHTNESS_RANGE: (u8, u8) = (35, 75);
/// Random rotation range (degrees) used by the enumerator.
pub const ROTATION_RANGE: (f64, f64) = (10.0, 350.0);

/// Number of effect descriptors emitted by [`enumerate_combos`]:
/// 15 singles, 12 global x local combos, 9 local pairs, 1 triple light
/// bulb, then a rotated copy of each plus rotation alone.
pub const COMBO_COUNT: usize = 75;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Brighten,
    Darken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalShape {
    Circle,
    Square,
    Trapezoid,
}

/// One simulated light source, reflection or shadow patch.
///
/// `size` is the shape's half-extent in pixels: the circle radius, half
/// the square side, and for the trapezoid the half-height (which also
/// equals the bottom half-width; the top half-width is half of that).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalEffectSpec {
    pub shape: LocalShape,
    pub polarity: Polarity,
    /// (row, col) of the shape center, inside the image.
    pub center: (usize, usize),
    pub size: u32,
    /// Intensity delta at the center; one of [`LOCAL_PEAKS`].
    pub peak: u8,
    /// Intensity delta at the boundary; fixed at [`LOCAL_FLOOR`].
    pub floor: u8,
}

impl LocalEffectSpec {
    fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.center.0 >= height || self.center.1 >= width {
            return Err(Error::Argument(format!(
                "local effect center {:?} outside {}x{} image",
                self.center, height, width
            )));
        }
        if self.size < LOCAL_SIZE_RANGE.0 || self.size > LOCAL_SIZE_RANGE.1 {
            return Err(Error::Argument(format!(
                "local effect size {} outside [{}, {}]",
                self.size, LOCAL_SIZE_RANGE.0, LOCAL_SIZE_RANGE.1
            )));
        }
        if !LOCAL_PEAKS.contains(&self.peak) {
            return Err(Error::Argument(format!(
                "local effect peak {} not in {:?}",
                self.peak, LOCAL_PEAKS
            )));
        }
        Ok(())
    }

    /// Normalized distance of an offset from the shape center: 0 at the
    /// center, 1 on the boundary, > 1 outside. Linear along every ray.
    fn gauge(&self, dr: f64, dc: f64) -> f64 {
        let s = self.size as f64;
        match self.shape {
            LocalShape::Circle => (dr * dr + dc * dc).sqrt() / s,
            LocalShape::Square => dr.abs().max(dc.abs()) / s,
            LocalShape::Trapezoid => {
                // Isosceles, axis-aligned, bottom (larger row) half-width s,
                // top half-width s/2, half-height s. Minkowski gauge of the
                // polygon with vertices (s,-s), (s,s), (-s,s/2), (-s,-s/2).
                let top_bottom = dr.abs();
                let right = (-dr + 4.0 * dc) / 3.0;
                let left = (-dr - 4.0 * dc) / 3.0;
                top_bottom.max(right).max(left) / s
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

/// A single augmentation effect with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Local(LocalEffectSpec),
    GlobalBrightness { c: u8, sign: Sign },
    Sharpen,
    Blur,
    Contrast { c: f64 },
    Equalize,
    Saturation { c: f64 },
    Rotation { degrees: f64 },
}

/// One augmentation to emit: a single effect or an ordered combination.
///
/// Parts are applied in order; the enumerator always places local
/// effects first, then global brightness, then the rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectDescriptor {
    pub parts: Vec<Effect>,
}

impl EffectDescriptor {
    pub fn single(effect: Effect) -> Self {
        Self {
            parts: vec![effect],
        }
    }

    pub fn is_combo(&self) -> bool {
        self.parts.len() > 1
    }

    /// Short label used in output file names.
    pub fn label(&self) -> String {
        let names: Vec<&str> = self
            .parts
            .iter()
            .map(|p| match p {
                Effect::Local(s) => match (s.shape, s.polarity) {
                    (LocalShape::Circle, Polarity::Brighten) => "circB",
                    (LocalShape::Circle, Polarity::Darken) => "circD",
                    (LocalShape::Square, Polarity::Brighten) => "sqB",
                    (LocalShape::Square, Polarity::Darken) => "sqD",
                    (LocalShape::Trapezoid, Polarity::Brighten) => "trapB",
                    (LocalShape::Trapezoid, Polarity::Darken) => "trapD",
                },
                Effect::GlobalBrightness {
                    sign: Sign::Plus, ..
                } => "gbright",
                Effect::GlobalBrightness {
                    sign: Sign::Minus, ..
                } => "gdark",
                Effect::Sharpen => "sharp",
                Effect::Blur => "blur",
                Effect::Contrast { .. } => "contrast",
                Effect::Equalize => "equal",
                Effect::Saturation { .. } => "sat",
                Effect::Rotation { .. } => "rot",
            })
            .collect();
        names.join("-")
    }
}

/// Apply a single effect.
pub fn apply_effect(img: &PanoramicImage, effect: &Effect) -> Result<PanoramicImage> {
    match effect {
        Effect::Local(spec) => apply_local_effect(img, spec),
        Effect::GlobalBrightness { c, sign } => apply_global_brightness(img, *c, *sign),
        Effect::Sharpen => Ok(sharpen(img)),
        Effect::Blur => Ok(blur(img)),
        Effect::Contrast { c } => adjust_contrast(img, *c),
        Effect::Equalize => Ok(equalize(img)),
        Effect::Saturation { c } => adjust_saturation(img, *c),
        Effect::Rotation { degrees } => Ok(imaging::rotate_panorama(img, *degrees)),
    }
}

/// Apply an effect descriptor (all parts, in order).
pub fn apply_descriptor(img: &PanoramicImage, desc: &EffectDescriptor) -> Result<PanoramicImage> {
    let mut out = img.clone();
    for part in &desc.parts {
        out = apply_effect(&out, part)?;
    }
    Ok(out)
}

/// Paint one local light/shadow patch. The signed delta magnitude falls
/// linearly from `peak` at the center to `floor` on the boundary; pixels
/// outside the shape are untouched. Columns wrap cyclically, rows are
/// clipped at the image edges.
pub fn apply_local_effect(img: &PanoramicImage, spec: &LocalEffectSpec) -> Result<PanoramicImage> {
    let (h, w) = (img.height(), img.width());
    spec.validate(h, w)?;
    let mut out = img.clone();
    let (cr, cc) = (spec.center.0 as i64, spec.center.1 as i64);
    let s = spec.size as i64;
    let peak = spec.peak as f64;
    let floor = spec.floor as f64;
    let sign = match spec.polarity {
        Polarity::Brighten => 1.0,
        Polarity::Darken => -1.0,
    };
    for dr in -s..=s {
        let row = cr + dr;
        if row < 0 || row >= h as i64 {
            continue;
        }
        for dc in -s..=s {
            let t = spec.gauge(dr as f64, dc as f64);
            if t > 1.0 {
                continue;
            }
            let col = (cc + dc).rem_euclid(w as i64) as usize;
            let magnitude = peak - (peak - floor) * t;
            for ch in 0..CHANNELS {
                let v = img.get(row as usize, col, ch) as f64;
                out.set(row as usize, col, ch, quantize_u8(v + sign * magnitude));
            }
        }
    }
    Ok(out)
}

/// Add (or subtract) a constant to every pixel, clipped to [0, 255].
pub fn apply_global_brightness(img: &PanoramicImage, c: u8, sign: Sign) -> Result<PanoramicImage> {
    if c < GLOBAL_BRIGHTNESS_RANGE.0 || c > GLOBAL_BRIGHTNESS_RANGE.1 {
        return Err(Error::Argument(format!(
            "global brightness constant {} outside [{}, {}]",
            c, GLOBAL_BRIGHTNESS_RANGE.0, GLOBAL_BRIGHTNESS_RANGE.1
        )));
    }
    let delta = match sign {
        Sign::Plus => c as i32,
        Sign::Minus => -(c as i32),
    };
    let pixels = img
        .pixels()
        .iter()
        .map(|&v| (v as i32 + delta).clamp(0, 255) as u8)
        .collect();
    PanoramicImage::from_raw(img.height(), img.width(), pixels)
}

/// Sample with replicate padding on rows and cyclic wrap on columns.
#[inline]
fn sample(img: &PanoramicImage, row: i64, col: i64, ch: usize) -> u8 {
    let r = row.clamp(0, img.height() as i64 - 1) as usize;
    let c = col.rem_euclid(img.width() as i64) as usize;
    img.get(r, c, ch)
}

/// 3x3 sharpening convolution (center 5, cross -1), clipped to [0, 255].
pub fn sharpen(img: &PanoramicImage) -> PanoramicImage {
    let (h, w) = (img.height() as i64, img.width() as i64);
    let mut out = img.clone();
    for r in 0..h {
        for c in 0..w {
            for ch in 0..CHANNELS {
                let center = img.get(r as usize, c as usize, ch) as i32;
                let cross = sample(img, r - 1, c, ch) as i32
                    + sample(img, r + 1, c, ch) as i32
                    + sample(img, r, c - 1, ch) as i32
                    + sample(img, r, c + 1, ch) as i32;
                let v = (5 * center - cross).clamp(0, 255) as u8;
                out.set(r as usize, c as usize, ch, v);
            }
        }
    }
    out
}

/// 5x5 uniform blur (mask of ones over 25), rounded and clipped.
pub fn blur(img: &PanoramicImage) -> PanoramicImage {
    let (h, w) = (img.height() as i64, img.width() as i64);
    let mut out = img.clone();
    for r in 0..h {
        for c in 0..w {
            for ch in 0..CHANNELS {
                let mut sum = 0u32;
                for dr in -2..=2 {
                    for dc in -2..=2 {
                        sum += sample(img, r + dr, c + dc, ch) as u32;
                    }
                }
                out.set(r as usize, c as usize, ch, quantize_u8(sum as f64 / 25.0));
            }
        }
    }
    out
}

/// Contrast remap `I_s = 64 + c * (I - 64)`, rounded and clipped.
pub fn adjust_contrast(img: &PanoramicImage, c: f64) -> Result<PanoramicImage> {
    if c.is_nan() || c <= 0.0 {
        return Err(Error::Argument(format!(
            "contrast factor must be positive, got {c}"
        )));
    }
    let pixels = img
        .pixels()
        .iter()
        .map(|&v| quantize_u8(64.0 + c * (v as f64 - 64.0)))
        .collect();
    PanoramicImage::from_raw(img.height(), img.width(), pixels)
}

/// Per-channel histogram equalization via the cumulative-distribution
/// remap. A channel whose histogram occupies a single level is left
/// unchanged.
pub fn equalize(img: &PanoramicImage) -> PanoramicImage {
    let hist = img.channel_histograms();
    let n = (img.height() * img.width()) as u64;
    let mut luts = [[0u8; 256]; 3];
    for ch in 0..CHANNELS {
        let mut cdf = [0u64; 256];
        let mut acc = 0u64;
        for v in 0..256 {
            acc += hist[ch][v];
            cdf[v] = acc;
        }
        let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
        if cdf_min == n {
            // single occupied level: identity
            for (v, slot) in luts[ch].iter_mut().enumerate() {
                *slot = v as u8;
            }
            continue;
        }
        for v in 0..256 {
            let num = cdf[v].saturating_sub(cdf_min) as f64;
            luts[ch][v] = quantize_u8(num / (n - cdf_min) as f64 * 255.0);
        }
    }
    let mut pixels = Vec::with_capacity(img.pixels().len());
    for px in img.pixels().chunks_exact(CHANNELS) {
        for (ch, &v) in px.iter().enumerate() {
            pixels.push(luts[ch][v as usize]);
        }
    }
    PanoramicImage::from_raw(img.height(), img.width(), pixels).expect("shape preserved")
}

/// RGB in [0,1] to HSV with h in [0,360), s and v in [0,1].
pub(crate) fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

/// HSV (h in degrees, s and v in [0,1]) back to RGB in [0,1].
pub(crate) fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h = h.rem_euclid(360.0);
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r1 + m, g1 + m, b1 + m)
}

/// Scale the HSV saturation channel by `c` (clipped to [0,1]) and
/// convert back; hue and value are preserved up to re-quantization.
pub fn adjust_saturation(img: &PanoramicImage, c: f64) -> Result<PanoramicImage> {
    if c.is_nan() || c < 0.0 {
        return Err(Error::Argument(format!(
            "saturation factor must be non-negative, got {c}"
        )));
    }
    let mut pixels = Vec::with_capacity(img.pixels().len());
    for px in img.pixels().chunks_exact(CHANNELS) {
        let (r, g, b) = (
            px[0] as f64 / 255.0,
            px[1] as f64 / 255.0,
            px[2] as f64 / 255.0,
        );
        let (h, s, v) = rgb_to_hsv(r, g, b);
        let (r2, g2, b2) = hsv_to_rgb(h, (s * c).clamp(0.0, 1.0), v);
        pixels.push(quantize_u8(r2 * 255.0));
        pixels.push(quantize_u8(g2 * 255.0));
        pixels.push(quantize_u8(b2 * 255.0));
    }
    PanoramicImage::from_raw(img.height(), img.width(), pixels)
}

const ALL_SHAPES: [LocalShape; 3] = [
    LocalShape::Circle,
    LocalShape::Square,
    LocalShape::Trapezoid,
];
const ALL_POLARITIES: [Polarity; 2] = [Polarity::Brighten, Polarity::Darken];

fn random_local(
    rng: &mut ChaCha8Rng,
    shape: LocalShape,
    polarity: Polarity,
    height: usize,
    width: usize,
) -> LocalEffectSpec {
    LocalEffectSpec {
        shape,
        polarity,
        center: (rng.random_range(0..height), rng.random_range(0..width)),
        size: rng.random_range(LOCAL_SIZE_RANGE.0..=LOCAL_SIZE_RANGE.1),
        peak: *LOCAL_PEAKS.choose(rng).expect("non-empty"),
        floor: LOCAL_FLOOR,
    }
}

fn random_brightness_c(rng: &mut ChaCha8Rng) -> u8 {
    rng.random_range(GLOBAL_BRIGHTNESS_RANGE.0..=GLOBAL_BRIGHTNESS_RANGE.1)
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Effect {
    Effect::Rotation {
        degrees: rng.random_range(ROTATION_RANGE.0..=ROTATION_RANGE.1),
    }
}

/// Enumerate the full combined-effect grid for images of the given
/// dimensions. The list is a deterministic function of the seed; its
/// length is always [`COMBO_COUNT`].
///
/// Grid layout: every single effect (six local shape/polarity variants,
/// two global polarities, sharpen, blur, two contrast factors, equalize,
/// two saturation factors); each global polarity combined with each
/// single local effect; circle paired with each shape under the
/// brighten/darken polarity combinations; a triple light-bulb circle
/// combo; and finally a random rotation composed with each of the above
/// plus rotation alone.
pub fn enumerate_combos(base_rng_seed: u64, height: usize, width: usize) -> Vec<EffectDescriptor> {
    let mut rng = ChaCha8Rng::seed_from_u64(base_rng_seed);
    let mut out: Vec<EffectDescriptor> = Vec::with_capacity(COMBO_COUNT);

    // Single local effects.
    for shape in ALL_SHAPES {
        for pol in ALL_POLARITIES {
            out.push(EffectDescriptor::single(Effect::Local(random_local(
                &mut rng, shape, pol, height, width,
            ))));
        }
    }
    // Global illumination, both polarities.
    for sign in [Sign::Plus, Sign::Minus] {
        out.push(EffectDescriptor::single(Effect::GlobalBrightness {
            c: random_brightness_c(&mut rng),
            sign,
        }));
    }
    out.push(EffectDescriptor::single(Effect::Sharpen));
    out.push(EffectDescriptor::single(Effect::Blur));
    // Contrast: one decrease, one increase.
    out.push(EffectDescriptor::single(Effect::Contrast {
        c: rng.random_range(0.5..=0.9),
    }));
    out.push(EffectDescriptor::single(Effect::Contrast {
        c: rng.random_range(1.1..=1.5),
    }));
    out.push(EffectDescriptor::single(Effect::Equalize));
    // Saturation: one desaturation, one oversaturation.
    out.push(EffectDescriptor::single(Effect::Saturation {
        c: rng.random_range(0.2..=0.8),
    }));
    out.push(EffectDescriptor::single(Effect::Saturation {
        c: rng.random_range(1.2..=2.0),
    }));

    // Each global polarity combined with each single local effect.
    for sign in [Sign::Plus, Sign::Minus] {
        for shape in ALL_SHAPES {
            for pol in ALL_POLARITIES {
                out.push(EffectDescriptor {
                    parts: vec![
                        Effect::Local(random_local(&mut rng, shape, pol, height, width)),
                        Effect::GlobalBrightness {
                            c: random_brightness_c(&mut rng),
                            sign,
                        },
                    ],
                });
            }
        }
    }

    // Circle paired with each shape, polarity combos B+B, B+D, D+D.
    for shape2 in ALL_SHAPES {
        for (p1, p2) in [
            (Polarity::Brighten, Polarity::Brighten),
            (Polarity::Brighten, Polarity::Darken),
            (Polarity::Darken, Polarity::Darken),
        ] {
            out.push(EffectDescriptor {
                parts: vec![
                    Effect::Local(random_local(
                        &mut rng,
                        LocalShape::Circle,
                        p1,
                        height,
                        width,
                    )),
                    Effect::Local(random_local(&mut rng, shape2, p2, height, width)),
                ],
            });
        }
    }

    // Three light-bulb effects at once.
    let triple: Vec<Effect> = (0..3)
        .map(|_| {
            let pol = *ALL_POLARITIES.choose(&mut rng).expect("non-empty");
            Effect::Local(random_local(
                &mut rng,
                LocalShape::Circle,
                pol,
                height,
                width,
            ))
        })
        .collect();
    out.push(EffectDescriptor { parts: triple });

    // Rotation alone, then a rotated copy of everything above.
    let base_len = out.len();
    out.push(EffectDescriptor::single(random_rotation(&mut rng)));
    for i in 0..base_len {
        let mut parts = out[i].parts.clone();
        parts.push(random_rotation(&mut rng));
        out.push(EffectDescriptor { parts });
    }

    debug_assert_eq!(out.len(), COMBO_COUNT);
    out
}

/// Expand every frame of a manifest into its full augmentation set.
///
/// For each input frame one image per effect descriptor is written to
/// `out_dir` alongside an unmodified copy; the returned manifest (also
/// written to `out_dir/augmented.manifest`) carries each source frame's
/// pose, room, condition and sequence unchanged.
pub fn augment_corpus(manifest: &Manifest, seed: u64, out_dir: &Path) -> Result<Manifest> {
    if manifest.frames().is_empty() {
        return Err(Error::Argument(
            "augment_corpus needs at least one frame".into(),
        ));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    // Effect geometry follows the first frame; corpora are homogeneous.
    let probe = imaging::load_panorama_native(&manifest.resolve_image(&manifest.frames()[0]))?;
    let descriptors = enumerate_combos(seed, probe.height(), probe.width());

    let results: Vec<Result<Vec<Frame>>> = manifest
        .frames()
        .par_iter()
        .enumerate()
        .map(|(idx, frame)| -> Result<Vec<Frame>> {
            let img = imaging::load_panorama_native(&manifest.resolve_image(frame))?;
            let stem = format!("f{idx:06}");
            let mut records = Vec::with_capacity(descriptors.len() + 1);

            let orig_name = format!("{stem}_orig.png");
            img.save(&out_dir.join(&orig_name))?;
            records.push(frame.with_image_path(orig_name));

            for (e_idx, desc) in descriptors.iter().enumerate() {
                let augmented = apply_descriptor(&img, desc)?;
                let name = format!("{stem}_e{e_idx:03}_{}.png", desc.label());
                augmented.save(&out_dir.join(&name))?;
                records.push(frame.with_image_path(name));
            }
            Ok(records)
        })
        .collect();

    let mut frames = Vec::with_capacity(manifest.frames().len() * (descriptors.len() + 1));
    for r in results {
        frames.extend(r?);
    }
    let out = Manifest::from_frames(frames, out_dir.to_path_buf())?;
    out.write(
        &out_dir.join("augmented.manifest"),
        &[format!("effects={}", descriptors.len())],
    )?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(h: usize, w: usize, v: u8) -> PanoramicImage {
        PanoramicImage::filled(h, w, [v, v, v]).unwrap()
    }

    fn spec(
        shape: LocalShape,
        polarity: Polarity,
        center: (usize, usize),
        size: u32,
        peak: u8,
    ) -> LocalEffectSpec {
        LocalEffectSpec {
            shape,
            polarity,
            center,
            size,
            peak,
            floor: LOCAL_FLOOR,
        }
    }

    #[test]
    fn local_effect_center_value() {
        let img = flat(96, 192, 50);
        let s = spec(LocalShape::Circle, Polarity::Brighten, (48, 96), 20, 160);
        let out = apply_local_effect(&img, &s).unwrap();
        // 50 + 160 = 210 at the exact center
        assert_eq!(out.get(48, 96, 0), 210);
    }

    #[test]
    fn local_effect_clips_at_255() {
        let img = flat(96, 192, 200);
        let s = spec(LocalShape::Circle, Polarity::Brighten, (48, 96), 20, 160);
        let out = apply_local_effect(&img, &s).unwrap();
        assert_eq!(out.get(48, 96, 0), 255);
    }

    #[test]
    fn local_effect_changes_nothing_outside_shape() {
        let img = flat(96, 192, 80);
        for shape in ALL_SHAPES {
            let sp = spec(shape, Polarity::Darken, (48, 96), 15, 100);
            let out = apply_local_effect(&img, &sp).unwrap();
            for r in 0..96usize {
                for c in 0..192usize {
                    let (dr, dc) = (r as f64 - 48.0, c as f64 - 96.0);
                    if sp.gauge(dr, dc) > 1.0 {
                        assert_eq!(out.get(r, c, 0), 80, "shape {shape:?} leaked at ({r},{c})");
                    }
                }
            }
        }
    }

    #[test]
    fn local_effect_attenuates_monotonically_along_rays() {
        let img = flat(96, 192, 100);
        for shape in ALL_SHAPES {
            let sp = spec(shape, Polarity::Brighten, (48, 96), 30, 100);
            let out = apply_local_effect(&img, &sp).unwrap();
            for (dir_r, dir_c) in [(0.0f64, 1.0f64), (1.0, 0.0), (0.7, -0.7), (-1.0, 0.3)] {
                let mut prev = u8::MAX;
                for step in 0..30 {
                    let r = (48.0 + dir_r * step as f64).round() as usize;
                    let c = (96.0 + dir_c * step as f64).round() as usize;
                    if sp.gauge(r as f64 - 48.0, c as f64 - 96.0) > 1.0 {
                        break;
                    }
                    let v = out.get(r, c, 0);
                    assert!(v <= prev, "delta grew along ray for {shape:?}");
                    prev = v;
                }
            }
        }
    }

    #[test]
    fn local_effect_rejects_out_of_bounds_center() {
        let img = flat(32, 96, 10);
        let s = spec(LocalShape::Circle, Polarity::Brighten, (40, 10), 20, 100);
        assert!(matches!(
            apply_local_effect(&img, &s),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn global_brightness_adds_and_clips() {
        let img = flat(4, 8, 100);
        let out = apply_global_brightness(&img, 35, Sign::Plus).unwrap();
        assert_eq!(out.get(0, 0, 0), 135);

        let bright = flat(4, 8, 250);
        let out = apply_global_brightness(&bright, 35, Sign::Plus).unwrap();
        assert_eq!(out.get(0, 0, 0), 255);

        let dark = flat(4, 8, 20);
        let out = apply_global_brightness(&dark, 40, Sign::Minus).unwrap();
        assert_eq!(out.get(0, 0, 0), 0);

        assert!(apply_global_brightness(&img, 80, Sign::Plus).is_err());
    }

    #[test]
    fn sharpen_fixes_constant_images() {
        let img = flat(8, 16, 77);
        assert_eq!(sharpen(&img), img);
    }

    #[test]
    fn sharpen_clips_impulse() {
        let mut img = flat(9, 16, 0);
        img.set(4, 8, 0, 255);
        let out = sharpen(&img);
        assert_eq!(out.get(4, 8, 0), 255); // 5*255 clipped
    }

    #[test]
    fn sharpen_matches_hand_convolution() {
        // interior pixel 120 with 4-neighborhood of 100 -> 5*120 - 400 = 200
        let mut img = flat(9, 16, 100);
        img.set(4, 8, 0, 120);
        let out = sharpen(&img);
        assert_eq!(out.get(4, 8, 0), 200);
    }

    #[test]
    fn blur_fixes_constant_images() {
        let img = flat(8, 16, 133);
        assert_eq!(blur(&img), img);
    }

    #[test]
    fn blur_spreads_impulse() {
        let mut img = flat(11, 20, 0);
        img.set(5, 10, 1, 250);
        let out = blur(&img);
        // 250 / 25 = 10 across the 5x5 neighborhood
        for dr in -2i64..=2 {
            for dc in -2i64..=2 {
                assert_eq!(out.get((5 + dr) as usize, (10 + dc) as usize, 1), 10);
            }
        }
        assert_eq!(out.get(5, 13, 1), 0);
    }

    #[test]
    fn blur_checkerboard_matches_counting_oracle() {
        // Interior 5x5 windows of a checkerboard hold 13 or 12 copies of 255:
        // 13*255/25 = 132.6 -> 133 and 12*255/25 = 122.4 -> 122.
        let mut img = flat(12, 24, 0);
        for r in 0..12 {
            for c in 0..24 {
                if (r + c) % 2 == 0 {
                    for ch in 0..3 {
                        img.set(r, c, ch, 255);
                    }
                }
            }
        }
        let out = blur(&img);
        for r in 2..10usize {
            for c in 2..22usize {
                let expect = if (r + c) % 2 == 0 { 133 } else { 122 };
                assert_eq!(out.get(r, c, 0), expect, "at ({r},{c})");
            }
        }
    }

    #[test]
    fn contrast_identity_fixed_point_and_example() {
        let img = flat(4, 8, 64);
        assert_eq!(adjust_contrast(&img, 3.7).unwrap(), img);

        let mut ramp = flat(1, 4, 0);
        ramp.set(0, 1, 0, 128);
        assert_eq!(adjust_contrast(&ramp, 1.0).unwrap(), ramp);
        // 64 + 1.5 * (128 - 64) = 160
        assert_eq!(adjust_contrast(&ramp, 1.5).unwrap().get(0, 1, 0), 160);

        assert!(adjust_contrast(&ramp, 0.0).is_err());
        assert!(adjust_contrast(&ramp, -1.0).is_err());
    }

    #[test]
    fn equalize_constant_image_unchanged() {
        let img = flat(6, 9, 42);
        assert_eq!(equalize(&img), img);
    }

    #[test]
    fn equalize_two_level_preserves_order() {
        let mut img = flat(2, 4, 0);
        for c in 0..2 {
            for ch in 0..3 {
                img.set(0, c, ch, 255);
                img.set(1, c, ch, 255);
            }
        }
        let out = equalize(&img);
        let mut levels: Vec<u8> = out.pixels().to_vec();
        levels.sort_unstable();
        levels.dedup();
        assert_eq!(levels.len(), 2);
        // pixel order preserved: the 255 half stays the larger level
        assert!(out.get(0, 0, 0) > out.get(0, 2, 0));
    }

    #[test]
    fn equalize_uniform_ramp_is_identity_within_one() {
        // 256 pixels, one of every level: the CDF remap is the identity.
        let mut px = Vec::with_capacity(256 * 3);
        for v in 0..256 {
            px.extend_from_slice(&[v as u8, v as u8, v as u8]);
        }
        let img = PanoramicImage::from_raw(8, 32, px).unwrap();
        let out = equalize(&img);
        for (a, b) in img.pixels().iter().zip(out.pixels()) {
            assert!((*a as i32 - *b as i32).abs() <= 1);
        }
    }

    #[test]
    fn saturation_identity_and_gray_axis() {
        let mut img = flat(2, 3, 0);
        img.set(0, 0, 0, 200);
        img.set(0, 0, 1, 120);
        img.set(0, 0, 2, 40);
        let same = adjust_saturation(&img, 1.0).unwrap();
        for (a, b) in img.pixels().iter().zip(same.pixels()) {
            assert!((*a as i32 - *b as i32).abs() <= 1);
        }
        let gray = adjust_saturation(&img, 0.0).unwrap();
        for px in gray.pixels().chunks_exact(3) {
            assert!((px[0] as i32 - px[1] as i32).abs() <= 1);
            assert!((px[1] as i32 - px[2] as i32).abs() <= 1);
        }
        assert!(adjust_saturation(&img, -0.5).is_err());
    }

    #[test]
    fn saturation_scales_s_channel() {
        // A pixel with S = 0.4 scaled by 1.5 reads S = 0.6.
        let (r, g, b) = hsv_to_rgb(30.0, 0.4, 1.0);
        let (_, s, _) = rgb_to_hsv(r, g, b);
        assert!((s - 0.4).abs() < 1e-12);
        let (r2, g2, b2) = hsv_to_rgb(30.0, (s * 1.5f64).clamp(0.0, 1.0), 1.0);
        let (_, s2, _) = rgb_to_hsv(r2, g2, b2);
        assert!((s2 - 0.6).abs() < 1e-12);
    }

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[
            (0.1, 0.5, 0.9),
            (1.0, 0.0, 0.0),
            (0.3, 0.3, 0.3),
            (0.0, 0.0, 0.0),
        ] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-9);
            assert!((g - g2).abs() < 1e-9);
            assert!((b - b2).abs() < 1e-9);
        }
    }

    #[test]
    fn enumerator_is_deterministic_with_golden_count() {
        let a = enumerate_combos(99, 128, 512);
        let b = enumerate_combos(99, 128, 512);
        assert_eq!(a, b);
        assert_eq!(a.len(), COMBO_COUNT);
        let c = enumerate_combos(100, 128, 512);
        assert_ne!(a, c);
    }

    #[test]
    fn enumerator_rotations_in_range() {
        for seed in 0..20u64 {
            for desc in enumerate_combos(seed, 128, 512) {
                for part in &desc.parts {
                    if let Effect::Rotation { degrees } = part {
                        assert!(
                            (10.0..=350.0).contains(degrees),
                            "rotation {degrees} out of range"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn enumerator_parameters_within_spec_ranges() {
        for desc in enumerate_combos(7, 128, 512) {
            for part in &desc.parts {
                match part {
                    Effect::Local(s) => {
                        assert!(s.validate(128, 512).is_ok());
                    }
                    Effect::GlobalBrightness { c, .. } => {
                        assert!((35..=75).contains(c));
                    }
                    Effect::Contrast { c } => assert!(*c > 0.0),
                    Effect::Saturation { c } => assert!(*c >= 0.0),
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn descriptor_outputs_preserve_shape() {
        let mut img = flat(96, 192, 0);
        for r in 0..96 {
            for c in 0..192 {
                for ch in 0..3 {
                    img.set(r, c, ch, ((r * 7 + c * 3 + ch * 11) % 256) as u8);
                }
            }
        }
        for desc in enumerate_combos(5, 96, 192) {
            let out = apply_descriptor(&img, &desc).unwrap();
            assert_eq!(out.height(), 96);
            assert_eq!(out.width(), 192);
        }
    }
}
