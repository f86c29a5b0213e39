//! Pose-annotated image manifests, metric pair labelling and stratified
//! pair sampling.
//!
//! A manifest models the map as an ordered list of (image, pose, room)
//! triples together with `k_b`, the maximum pairwise planar distance
//! between capture points in the building, which normalizes the metric
//! labels. The on-disk format is line-delimited UTF-8, one frame per
//! line:
//!
//! ```text
//! image=<relpath>\tx=<float>\ty=<float>\ttheta=<float>\troom=<string>\tcondition=<cloudy|night|sunny|synthetic>\tsequence=<string>
//! ```
//!
//! with an optional `kb=<float>` header line. Blank lines and lines
//! starting with `#` are ignored.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub mod ingest;

/// Robot pose at a capture point: planar position in meters plus heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Heading in radians, normalized into [-pi, pi).
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() || !theta.is_finite() {
            return Err(Error::Argument(format!(
                "pose components must be finite, got ({x}, {y}, {theta})"
            )));
        }
        let mut t = theta.rem_euclid(2.0 * std::f64::consts::PI);
        if t >= std::f64::consts::PI {
            t -= 2.0 * std::f64::consts::PI;
        }
        Ok(Self { x, y, theta: t })
    }

    /// Planar Euclidean distance; heading is ignored.
    pub fn planar_distance(&self, other: &Pose) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Capture illumination class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    Cloudy,
    Night,
    Sunny,
    Synthetic,
}

impl FromStr for Condition {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cloudy" => Ok(Condition::Cloudy),
            "night" => Ok(Condition::Night),
            "sunny" => Ok(Condition::Sunny),
            "synthetic" => Ok(Condition::Synthetic),
            other => Err(format!(
                "unknown condition '{other}' (expected cloudy|night|sunny|synthetic)"
            )),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Condition::Cloudy => "cloudy",
            Condition::Night => "night",
            Condition::Sunny => "sunny",
            Condition::Synthetic => "synthetic",
        };
        f.write_str(s)
    }
}

/// One dataset record: an image reference plus pose, room, lighting
/// condition and source sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Path to the image, relative to the manifest location unless absolute.
    pub image_path: PathBuf,
    pub pose: Pose,
    pub room: String,
    pub condition: Condition,
    pub sequence: String,
}

impl Frame {
    /// Copy of the frame pointing at a different image file; pose, room,
    /// condition and sequence are carried over unchanged.
    pub fn with_image_path(&self, image_path: impl Into<PathBuf>) -> Frame {
        Frame {
            image_path: image_path.into(),
            ..self.clone()
        }
    }
}

/// An ordered frame list plus the building constant `k_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    frames: Vec<Frame>,
    k_b: f64,
    base_dir: PathBuf,
}

impl Manifest {
    /// Build a manifest from frames, computing `k_b`. `base_dir` is the
    /// directory image paths resolve against.
    pub fn from_frames(frames: Vec<Frame>, base_dir: PathBuf) -> Result<Self> {
        let k_b = compute_kb(&frames)?;
        Ok(Self {
            frames,
            k_b,
            base_dir,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn k_b(&self) -> f64 {
        self.k_b
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    /// Absolute (or base-joined) path of a frame's image file.
    pub fn resolve_image(&self, frame: &Frame) -> PathBuf {
        if frame.image_path.is_absolute() {
            frame.image_path.clone()
        } else {
            self.base_dir.join(&frame.image_path)
        }
    }

    /// Frame indices grouped by room label, in first-appearance order.
    pub fn rooms(&self) -> Vec<(String, Vec<usize>)> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, f) in self.frames.iter().enumerate() {
            if !groups.contains_key(&f.room) {
                order.push(f.room.clone());
            }
            groups.entry(f.room.clone()).or_default().push(i);
        }
        order
            .into_iter()
            .map(|r| {
                let idx = groups.remove(&r).unwrap_or_default();
                (r, idx)
            })
            .collect()
    }

    /// Serialize to the line-delimited format, `kb` header first.
    /// `comments` become leading `#` lines.
    pub fn write(&self, path: &Path, comments: &[String]) -> Result<()> {
        let mut out = String::new();
        for c in comments {
            out.push_str("# ");
            out.push_str(c);
            out.push('\n');
        }
        out.push_str(&format!("kb={}\n", self.k_b));
        for f in &self.frames {
            out.push_str(&format!(
                "image={}\tx={}\ty={}\ttheta={}\troom={}\tcondition={}\tsequence={}\n",
                f.image_path.display(),
                f.pose.x,
                f.pose.y,
                f.pose.theta,
                f.room,
                f.condition,
                f.sequence
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Parse a manifest file. `k_b` is taken from the header when present
/// and computed from the poses otherwise.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut frames = Vec::new();
    let mut stored_kb: Option<f64> = None;

    let parse_err = |line: usize, message: String| Error::ManifestParse {
        path: path.to_path_buf(),
        line,
        message,
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(v) = line.strip_prefix("kb=") {
            stored_kb = Some(
                v.parse::<f64>()
                    .map_err(|e| parse_err(line_no, format!("bad kb value '{v}': {e}")))?,
            );
            continue;
        }
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        for part in line.split('\t') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| parse_err(line_no, format!("field '{part}' is not key=value")))?;
            fields.insert(key, value);
        }
        let get = |key: &str| -> Result<&str> {
            fields
                .get(key)
                .copied()
                .ok_or_else(|| parse_err(line_no, format!("missing field '{key}'")))
        };
        let float = |key: &str| -> Result<f64> {
            get(key)?
                .parse::<f64>()
                .map_err(|e| parse_err(line_no, format!("bad {key} value: {e}")))
        };
        let pose = Pose::new(float("x")?, float("y")?, float("theta")?)
            .map_err(|e| parse_err(line_no, e.to_string()))?;
        let room = get("room")?.to_string();
        if room.is_empty() {
            return Err(parse_err(line_no, "room label is empty".into()));
        }
        let condition: Condition = get("condition")?
            .parse()
            .map_err(|e| parse_err(line_no, e))?;
        frames.push(Frame {
            image_path: PathBuf::from(get("image")?),
            pose,
            room,
            condition,
            sequence: get("sequence")?.to_string(),
        });
    }

    if frames.is_empty() {
        return Err(parse_err(0, "manifest holds no frames".into()));
    }
    let k_b = match stored_kb {
        Some(v) => v,
        None => compute_kb(&frames)?,
    };
    Ok(Manifest {
        frames,
        k_b,
        base_dir,
    })
}

/// Maximum pairwise planar distance over the frames' capture points.
pub fn compute_kb(frames: &[Frame]) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::Argument(
            "compute_kb needs at least one frame".into(),
        ));
    }
    let mut max = 0.0f64;
    for i in 0..frames.len() {
        for j in (i + 1)..frames.len() {
            let d = frames[i].pose.planar_distance(&frames[j].pose);
            if d > max {
                max = d;
            }
        }
    }
    Ok(max)
}

/// Similarity label for a pair: normalized planar distance when both
/// frames share a room (clipped to [0, 1]), exactly 1 otherwise.
pub fn label_metric(p_i: &Pose, p_j: &Pose, r_i: &str, r_j: &str, k_b: f64) -> Result<f64> {
    if k_b.is_nan() || k_b <= 0.0 {
        return Err(Error::Argument(format!("k_b must be positive, got {k_b}")));
    }
    if r_i != r_j {
        return Ok(1.0);
    }
    Ok((p_i.planar_distance(p_j) / k_b).min(1.0))
}

/// Which labelling a sampled pair list carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairTask {
    /// 0 if the frames share a room, 1 if not.
    RoomBinary,
    /// Normalized-distance labels for global localization.
    Metric,
}

impl FromStr for PairTask {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "room_binary" => Ok(PairTask::RoomBinary),
            "metric" => Ok(PairTask::Metric),
            other => Err(format!(
                "unknown task '{other}' (expected room_binary|metric)"
            )),
        }
    }
}

/// A training pair: two frame indices and a similarity label in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSpec {
    pub i: usize,
    pub j: usize,
    pub label: f64,
}

/// Draw a stratified pair sample: exactly `round(n_pairs * ratio_same)`
/// same-room pairs, the rest with frames in different rooms. The list
/// order is shuffled; everything is a deterministic function of the seed.
pub fn sample_pairs(
    manifest: &Manifest,
    n_pairs: usize,
    ratio_same: f64,
    task: PairTask,
    seed: u64,
) -> Result<Vec<PairSpec>> {
    if n_pairs == 0 {
        return Err(Error::Argument("n_pairs must be at least 1".into()));
    }
    if ratio_same.is_nan() || ratio_same <= 0.0 || ratio_same >= 1.0 {
        return Err(Error::Argument(format!(
            "ratio_same must lie in (0, 1), got {ratio_same}"
        )));
    }
    if manifest.len() < 2 {
        return Err(Error::Argument(
            "pair sampling needs at least two frames".into(),
        ));
    }
    let frames = manifest.frames();
    let rooms = manifest.rooms();
    let n_same = (n_pairs as f64 * ratio_same).round() as usize;
    let n_diff = n_pairs - n_same;

    if n_same > 0 && !rooms.iter().any(|(_, idx)| idx.len() >= 2) {
        return Err(Error::Argument(
            "no room holds two frames; same-room pairs are impossible".into(),
        ));
    }
    if n_diff > 0 && rooms.len() < 2 {
        return Err(Error::Argument(
            "manifest holds a single room; different-room pairs are impossible".into(),
        ));
    }

    let label_of = |i: usize, j: usize| -> Result<f64> {
        match task {
            PairTask::RoomBinary => Ok(if frames[i].room == frames[j].room {
                0.0
            } else {
                1.0
            }),
            PairTask::Metric => label_metric(
                &frames[i].pose,
                &frames[j].pose,
                &frames[i].room,
                &frames[j].room,
                manifest.k_b(),
            ),
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n_pairs);

    for _ in 0..n_same {
        let (i, j) = loop {
            let i = rng.random_range(0..frames.len());
            let members = rooms
                .iter()
                .find(|(r, _)| *r == frames[i].room)
                .map(|(_, idx)| idx.as_slice())
                .expect("room of an existing frame");
            if members.len() < 2 {
                continue;
            }
            let j = loop {
                let j = members[rng.random_range(0..members.len())];
                if j != i {
                    break j;
                }
            };
            break (i, j);
        };
        pairs.push(PairSpec {
            i,
            j,
            label: label_of(i, j)?,
        });
    }

    for _ in 0..n_diff {
        let (i, j) = loop {
            let i = rng.random_range(0..frames.len());
            let j = rng.random_range(0..frames.len());
            if frames[i].room != frames[j].room {
                break (i, j);
            }
        };
        pairs.push(PairSpec {
            i,
            j,
            label: label_of(i, j)?,
        });
    }

    pairs.shuffle(&mut rng);
    Ok(pairs)
}

/// Select `target` frames at evenly spaced indices along the sequence
/// order, preserving order. `target = len` is the identity.
pub fn subsample_map(manifest: &Manifest, target: usize) -> Result<Manifest> {
    let n = manifest.len();
    if target == 0 || target > n {
        return Err(Error::Argument(format!(
            "subsample target {target} outside [1, {n}]"
        )));
    }
    let indices: Vec<usize> = if target == 1 {
        vec![0]
    } else {
        let mut idx: Vec<usize> = (0..target)
            .map(|k| (k as f64 * (n - 1) as f64 / (target - 1) as f64).round() as usize)
            .collect();
        idx.dedup();
        idx
    };
    let frames = indices
        .into_iter()
        .map(|i| manifest.frames()[i].clone())
        .collect();
    Manifest::from_frames(frames, manifest.base_dir().to_path_buf())
}
