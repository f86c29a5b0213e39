//! Procedural synthetic world: a small multi-room building rendered as
//! panoramas whose appearance varies smoothly with the capture position,
//! so position is visually recoverable and rooms are chromatically
//! distinct. Serves as the desk-scale stand-in for a real indoor
//! dataset.

use crate::augment::hsv_to_rgb;
use crate::dataset::{Condition, Frame, Manifest, Pose};
use crate::error::{Error, Result};
use crate::imaging::{quantize_u8, PanoramicImage};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

/// Per-room rendering style: a base hue plus seed-derived phases.
#[derive(Debug, Clone, Copy)]
struct RoomStyle {
    hue_base: f64,
    phase: [f64; 5],
}

fn room_styles(n_rooms: usize, seed: u64) -> Vec<RoomStyle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_rooms)
        .map(|r| RoomStyle {
            hue_base: 360.0 * r as f64 / n_rooms as f64,
            phase: std::array::from_fn(|_| rng.random_range(0.0..TAU)),
        })
        .collect()
}

/// Render the panorama seen from `pose` inside a room. Pure in
/// (style, pose, size): equal poses yield identical images.
fn render_panorama(style: &RoomStyle, pose: &Pose, height: usize, width: usize) -> PanoramicImage {
    let (x, y) = (pose.x, pose.y);
    let mut pixels = Vec::with_capacity(height * width * 3);
    let hue = style.hue_base + 9.0 * (0.8 * x + 0.5 * y + style.phase[3]).sin();
    for row in 0..height {
        let v = row as f64 / height as f64;
        for col in 0..width {
            let u = col as f64 / width as f64;
            let b = 0.55
                + 0.18 * (TAU * 3.0 * u + 1.9 * x + style.phase[0]).sin()
                + 0.14 * (TAU * 2.0 * v + 1.3 * y + style.phase[1]).cos()
                + 0.08 * (TAU * 5.0 * u + 0.7 * x + 1.1 * y + style.phase[2]).sin();
            let s = 0.72 + 0.12 * (TAU * u + 0.9 * y + style.phase[4]).cos();
            let (r, g, bl) = hsv_to_rgb(hue, s.clamp(0.0, 1.0), b.clamp(0.05, 1.0));
            pixels.push(quantize_u8(r * 255.0));
            pixels.push(quantize_u8(g * 255.0));
            pixels.push(quantize_u8(bl * 255.0));
        }
    }
    PanoramicImage::from_raw(height, width, pixels).expect("well-formed buffer")
}

/// Which split a generated frame belongs to; splits use disjoint pose
/// offsets so their images never coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Split {
    Train,
    Test,
    Map,
}

impl Split {
    fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Map => "map",
        }
    }

    /// Pose offset (dx, dy) relative to the base grid, in grid units.
    fn offset(&self) -> (f64, f64) {
        match self {
            Split::Train => (0.0, 0.0),
            Split::Map => (0.5, 0.5),
            Split::Test => (0.25, 0.375),
        }
    }
}

/// Generate the synthetic world under `out_dir`: three disjoint splits
/// (train, test, map), each with `frames_per_room` frames per room laid
/// on a grid with the given spacing, rendered at `image_size` (height,
/// width). Deterministic per seed; manifests are written alongside the
/// images as `train.manifest`, `test.manifest` and `map.manifest`.
pub fn generate_synthetic_world(
    n_rooms: usize,
    frames_per_room: usize,
    grid_spacing: f64,
    image_size: (usize, usize),
    seed: u64,
    out_dir: &Path,
) -> Result<(Manifest, Manifest, Manifest)> {
    if n_rooms < 2 {
        return Err(Error::Argument(format!(
            "synthetic world needs at least 2 rooms, got {n_rooms}"
        )));
    }
    if frames_per_room < 4 {
        return Err(Error::Argument(format!(
            "synthetic world needs at least 4 frames per room, got {frames_per_room}"
        )));
    }
    if grid_spacing.is_nan() || grid_spacing <= 0.0 {
        return Err(Error::Argument(format!(
            "grid spacing must be positive, got {grid_spacing}"
        )));
    }
    let (height, width) = image_size;
    if height == 0 || width == 0 {
        return Err(Error::Argument("image size must be positive".into()));
    }

    let styles = room_styles(n_rooms, seed);
    let side = (frames_per_room as f64).sqrt().ceil() as usize;
    // Rooms are laid out along x with a generous gap so inter-room
    // distances dwarf intra-room ones.
    let room_step = 2.0 * side as f64 * grid_spacing;

    let mut manifests = Vec::with_capacity(3);
    for split in [Split::Train, Split::Test, Split::Map] {
        let split_dir = out_dir.join(split.name());
        std::fs::create_dir_all(&split_dir).map_err(|e| Error::io(&split_dir, e))?;
        let (dx, dy) = split.offset();

        let mut frames = Vec::with_capacity(n_rooms * frames_per_room);
        for (room_idx, style) in styles.iter().enumerate() {
            let origin_x = room_idx as f64 * room_step;
            for k in 0..frames_per_room {
                let (gi, gj) = (k % side, k / side);
                let pose = Pose::new(
                    origin_x + (gi as f64 + dx) * grid_spacing,
                    (gj as f64 + dy) * grid_spacing,
                    0.0,
                )?;
                let name = format!("room{room_idx}_{:04}.png", k);
                frames.push((room_idx, *style, pose, name));
            }
        }

        let written: Vec<Result<Frame>> = frames
            .par_iter()
            .map(|(room_idx, style, pose, name)| -> Result<Frame> {
                let img = render_panorama(style, pose, height, width);
                img.save(&split_dir.join(name))?;
                Ok(Frame {
                    image_path: PathBuf::from(format!("{}/{}", split.name(), name)),
                    pose: *pose,
                    room: format!("room{room_idx}"),
                    condition: Condition::Synthetic,
                    sequence: format!("synthetic_{}", split.name()),
                })
            })
            .collect();
        let frames = written.into_iter().collect::<Result<Vec<_>>>()?;
        let manifest = Manifest::from_frames(frames, out_dir.to_path_buf())?;
        manifest.write(&out_dir.join(format!("{}.manifest", split.name())), &[])?;
        manifests.push(manifest);
    }

    let map = manifests.pop().expect("three splits");
    let test = manifests.pop().expect("three splits");
    let train = manifests.pop().expect("three splits");
    Ok((train, test, map))
}
