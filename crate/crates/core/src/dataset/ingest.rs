//! Converter from COLD-style folder layouts to the manifest format.
//!
//! Expected source layout, one directory per sequence:
//!
//! ```text
//! src_dir/
//!   <sequence>/
//!     condition.txt   # cloudy | night | sunny | synthetic
//!     rooms.lst       # "<image-filename> <room-label>" per line
//!     t<stamp>_x<float>_y<float>_a<float>.jpeg|.png
//! ```
//!
//! Poses are embedded in the image file names (`x`, `y` in meters, `a`
//! the heading in radians), rooms come from `rooms.lst`, the lighting
//! condition from `condition.txt`, and the sequence label from the
//! directory name. Sequences and room entries are ingested in sorted /
//! file order, so reruns on unchanged input produce byte-identical
//! manifests.

use super::{Condition, Frame, Manifest, Pose};
use crate::error::{Error, Result};
use std::path::{Path, PathBuf};

/// Parse `x`, `y` and `a` components out of a COLD-style file name.
fn pose_from_filename(name: &str) -> Option<Pose> {
    let stem = name.rsplit_once('.').map(|(s, _)| s).unwrap_or(name);
    let mut x = None;
    let mut y = None;
    let mut a = None;
    for token in stem.split('_') {
        if let Some(v) = token.strip_prefix('x') {
            x = v.parse::<f64>().ok().or(x);
        } else if let Some(v) = token.strip_prefix('y') {
            y = v.parse::<f64>().ok().or(y);
        } else if let Some(v) = token.strip_prefix('a') {
            a = v.parse::<f64>().ok().or(a);
        }
    }
    match (x, y, a) {
        (Some(x), Some(y), Some(a)) => Pose::new(x, y, a).ok(),
        _ => None,
    }
}

/// Express `target` relative to `base` when possible, keeping it
/// absolute otherwise.
fn relative_to(target: &Path, base: &Path) -> PathBuf {
    match target.strip_prefix(base) {
        Ok(rel) => rel.to_path_buf(),
        Err(_) => target.to_path_buf(),
    }
}

/// Scan a COLD-style source tree and write a manifest to `out_manifest`.
/// Returns the manifest plus per-room frame counts in first-appearance
/// order.
pub fn ingest_cold_layout(
    src_dir: &Path,
    out_manifest: &Path,
) -> Result<(Manifest, Vec<(String, usize)>)> {
    if !src_dir.is_dir() {
        return Err(Error::Argument(format!(
            "source {} is not a directory",
            src_dir.display()
        )));
    }
    let manifest_dir = out_manifest
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();

    let mut seq_dirs: Vec<PathBuf> = std::fs::read_dir(src_dir)
        .map_err(|e| Error::io(src_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    seq_dirs.sort();
    if seq_dirs.is_empty() {
        return Err(Error::Argument(format!(
            "no sequence directories under {}",
            src_dir.display()
        )));
    }

    let mut frames = Vec::new();
    for seq_dir in &seq_dirs {
        let sequence = seq_dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("sequence")
            .to_string();

        let cond_path = seq_dir.join("condition.txt");
        let cond_text =
            std::fs::read_to_string(&cond_path).map_err(|e| Error::io(&cond_path, e))?;
        let condition: Condition = cond_text
            .trim()
            .parse()
            .map_err(|e| Error::format(&cond_path, e))?;

        let rooms_path = seq_dir.join("rooms.lst");
        let rooms_text =
            std::fs::read_to_string(&rooms_path).map_err(|e| Error::io(&rooms_path, e))?;
        for (idx, raw) in rooms_text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (file_name, room) =
                line.split_once(char::is_whitespace)
                    .ok_or_else(|| Error::ManifestParse {
                        path: rooms_path.clone(),
                        line: idx + 1,
                        message: format!("expected '<image> <room>', got '{line}'"),
                    })?;
            let room = room.trim();
            if room.is_empty() {
                return Err(Error::ManifestParse {
                    path: rooms_path.clone(),
                    line: idx + 1,
                    message: "room label is empty".into(),
                });
            }
            let image_abs = seq_dir.join(file_name);
            if !image_abs.is_file() {
                return Err(Error::ManifestParse {
                    path: rooms_path.clone(),
                    line: idx + 1,
                    message: format!("image file {} does not exist", image_abs.display()),
                });
            }
            let pose = pose_from_filename(file_name).ok_or_else(|| Error::ManifestParse {
                path: rooms_path.clone(),
                line: idx + 1,
                message: format!("file name '{file_name}' carries no x/y/a pose fields"),
            })?;
            frames.push(Frame {
                image_path: relative_to(&image_abs, &manifest_dir),
                pose,
                room: room.to_string(),
                condition,
                sequence: sequence.clone(),
            });
        }
    }

    if frames.is_empty() {
        return Err(Error::Argument(format!(
            "no frames found under {}",
            src_dir.display()
        )));
    }

    let manifest = Manifest::from_frames(frames, manifest_dir)?;
    manifest.write(out_manifest, &[])?;

    let counts = manifest
        .rooms()
        .into_iter()
        .map(|(room, idx)| (room, idx.len()))
        .collect();
    Ok((manifest, counts))
}
