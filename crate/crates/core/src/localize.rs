//! Descriptor maps, nearest-descriptor retrieval and evaluation of both
//! localization tasks, plus a procedural synthetic world for desk-scale
//! end-to-end runs.

use crate::dataset::{Condition, Manifest, PairSpec, Pose};
use crate::error::{Error, Result};
use crate::imaging::{load_panorama, to_network_input, NormalizedImage};
use crate::model::{distance, Descriptor, SiameseModel};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::Path;

pub mod synthetic;

const MAP_MAGIC: &[u8; 8] = b"PLOCVMA1";

/// One stored map entry: descriptor, capture pose and room label.
#[derive(Debug, Clone, PartialEq)]
pub struct MapEntry {
    pub descriptor: Descriptor,
    pub pose: Pose,
    pub room: String,
}

/// The visual map: an ordered set of (descriptor, pose, room) entries
/// queried by nearest-descriptor retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualMap {
    entries: Vec<MapEntry>,
    descriptor_dim: usize,
    source: String,
}

impl VisualMap {
    pub fn new(entries: Vec<MapEntry>, source: impl Into<String>) -> Result<Self> {
        let first_dim = entries
            .first()
            .map(|e| e.descriptor.len())
            .ok_or_else(|| Error::Argument("visual map needs at least one entry".into()))?;
        if entries.iter().any(|e| e.descriptor.len() != first_dim) {
            return Err(Error::Argument(
                "visual map entries have mixed descriptor lengths".into(),
            ));
        }
        Ok(Self {
            entries,
            descriptor_dim: first_dim,
            source: source.into(),
        })
    }

    pub fn entries(&self) -> &[MapEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn descriptor_dim(&self) -> usize {
        self.descriptor_dim
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Binary serialization: header, then per entry the descriptor as
    /// f32 LE, the pose as three f64 LE and the room label.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAP_MAGIC);
        let header = format!(
            "dim={}\ncount={}\nsource={}\n",
            self.descriptor_dim,
            self.entries.len(),
            self.source
        );
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(header.as_bytes());
        for e in &self.entries {
            for v in e.descriptor.values() {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            buf.extend_from_slice(&e.pose.x.to_le_bytes());
            buf.extend_from_slice(&e.pose.y.to_le_bytes());
            buf.extend_from_slice(&e.pose.theta.to_le_bytes());
            buf.extend_from_slice(&(e.room.len() as u16).to_le_bytes());
            buf.extend_from_slice(e.room.as_bytes());
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let fail = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
        if bytes.len() < 12 || &bytes[..8] != MAP_MAGIC {
            return Err(fail("not a visual map file"));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut pos = 12 + header_len;
        if bytes.len() < pos {
            return Err(fail("truncated header"));
        }
        let header = std::str::from_utf8(&bytes[12..pos]).map_err(|_| fail("bad header"))?;
        let mut dim = None;
        let mut count = None;
        let mut source = String::new();
        for line in header.lines() {
            match line.split_once('=') {
                Some(("dim", v)) => dim = v.parse::<usize>().ok(),
                Some(("count", v)) => count = v.parse::<usize>().ok(),
                Some(("source", v)) => source = v.to_string(),
                _ => {}
            }
        }
        let (dim, count) = match (dim, count) {
            (Some(d), Some(c)) => (d, c),
            _ => return Err(fail("header misses dim/count")),
        };
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let need = dim * 4 + 24 + 2;
            if bytes.len() < pos + need {
                return Err(fail("truncated entry"));
            }
            let mut values = Vec::with_capacity(dim);
            for k in 0..dim {
                let off = pos + k * 4;
                values.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64);
            }
            pos += dim * 4;
            let x = f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
            let y = f64::from_le_bytes(bytes[pos + 8..pos + 16].try_into().unwrap());
            let theta = f64::from_le_bytes(bytes[pos + 16..pos + 24].try_into().unwrap());
            pos += 24;
            let room_len = u16::from_le_bytes(bytes[pos..pos + 2].try_into().unwrap()) as usize;
            pos += 2;
            if bytes.len() < pos + room_len {
                return Err(fail("truncated room label"));
            }
            let room = std::str::from_utf8(&bytes[pos..pos + room_len])
                .map_err(|_| fail("bad room label"))?
                .to_string();
            pos += room_len;
            entries.push(MapEntry {
                descriptor: Descriptor::new(values)?,
                pose: Pose::new(x, y, theta)?,
                room,
            });
        }
        VisualMap::new(entries, source)
    }
}

/// Embed every frame of a manifest, in order.
pub fn build_map(model: &SiameseModel, map_frames: &Manifest) -> Result<VisualMap> {
    if map_frames.is_empty() {
        return Err(Error::Argument("map manifest is empty".into()));
    }
    let (h, w) = (
        model.backbone_config().input_height,
        model.backbone_config().input_width,
    );
    let entries: Vec<Result<MapEntry>> = map_frames
        .frames()
        .par_iter()
        .map(|frame| -> Result<MapEntry> {
            let img = load_panorama(&map_frames.resolve_image(frame), h, w)?;
            let descriptor = model.forward(&to_network_input(&img))?;
            Ok(MapEntry {
                descriptor,
                pose: frame.pose,
                room: frame.room.clone(),
            })
        })
        .collect();
    let entries = entries.into_iter().collect::<Result<Vec<_>>>()?;
    VisualMap::new(entries, "manifest")
}

/// Exhaustive nearest-descriptor scan. Ties resolve to the lowest index.
pub fn retrieve(map: &VisualMap, query: &Descriptor) -> Result<(usize, Pose, f64)> {
    if query.len() != map.descriptor_dim() {
        return Err(Error::Argument(format!(
            "query dimension {} does not match map dimension {}",
            query.len(),
            map.descriptor_dim()
        )));
    }
    let mut best_idx = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, entry) in map.entries.iter().enumerate() {
        let d = distance(query, &entry.descriptor)?;
        if d < best_d {
            best_d = d;
            best_idx = i;
        }
    }
    Ok((best_idx, map.entries[best_idx].pose, best_d))
}

/// Room-discrimination accuracies plus the raw confusion counts.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomReport {
    pub n_same: usize,
    pub n_diff: usize,
    pub correct_same: usize,
    pub correct_diff: usize,
    pub threshold: f64,
}

impl RoomReport {
    pub fn total(&self) -> usize {
        self.n_same + self.n_diff
    }

    pub fn global_accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.correct_same + self.correct_diff) as f64 / self.total() as f64
    }

    pub fn same_accuracy(&self) -> f64 {
        if self.n_same == 0 {
            return 0.0;
        }
        self.correct_same as f64 / self.n_same as f64
    }

    pub fn diff_accuracy(&self) -> f64 {
        if self.n_diff == 0 {
            return 0.0;
        }
        self.correct_diff as f64 / self.n_diff as f64
    }

    /// Line-delimited record form.
    pub fn record(&self) -> String {
        format!(
            "threshold={}\tn_same={}\tn_diff={}\tcorrect_same={}\tcorrect_diff={}\tglobal_accuracy={:.6}\tsame_accuracy={:.6}\tdiff_accuracy={:.6}\n",
            self.threshold,
            self.n_same,
            self.n_diff,
            self.correct_same,
            self.correct_diff,
            self.global_accuracy(),
            self.same_accuracy(),
            self.diff_accuracy()
        )
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        format!(
            "room discrimination (threshold {:.3})\n\
             global accuracy    {:>8.2}%  ({}/{})\n\
             same-room accuracy {:>8.2}%  ({}/{})\n\
             diff-room accuracy {:>8.2}%  ({}/{})\n",
            self.threshold,
            self.global_accuracy() * 100.0,
            self.correct_same + self.correct_diff,
            self.total(),
            self.same_accuracy() * 100.0,
            self.correct_same,
            self.n_same,
            self.diff_accuracy() * 100.0,
            self.correct_diff,
            self.n_diff,
        )
    }
}

/// Judge pre-computed descriptor pairs: predict same-room when the
/// descriptor distance falls under the threshold. `truth_same` is true
/// for pairs captured in one room.
pub fn eval_room_descriptors(
    pairs: &[(Descriptor, Descriptor, bool)],
    threshold: f64,
) -> Result<RoomReport> {
    if pairs.is_empty() {
        return Err(Error::Argument("room evaluation needs pairs".into()));
    }
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::Argument(format!(
            "threshold must be positive, got {threshold}"
        )));
    }
    let mut report = RoomReport {
        n_same: 0,
        n_diff: 0,
        correct_same: 0,
        correct_diff: 0,
        threshold,
    };
    for (a, b, truth_same) in pairs {
        let predict_same = distance(a, b)? < threshold;
        if *truth_same {
            report.n_same += 1;
            if predict_same {
                report.correct_same += 1;
            }
        } else {
            report.n_diff += 1;
            if !predict_same {
                report.correct_diff += 1;
            }
        }
    }
    Ok(report)
}

/// Judge image pairs directly (loads nothing; images are supplied).
pub fn eval_room_pairs(
    model: &SiameseModel,
    pairs: &[(NormalizedImage, NormalizedImage, bool)],
    threshold: f64,
) -> Result<RoomReport> {
    let descriptors: Vec<Result<(Descriptor, Descriptor, bool)>> = pairs
        .par_iter()
        .map(|(a, b, t)| Ok((model.forward(a)?, model.forward(b)?, *t)))
        .collect();
    let descriptors = descriptors.into_iter().collect::<Result<Vec<_>>>()?;
    eval_room_descriptors(&descriptors, threshold)
}

/// Judge sampled pair specs against a manifest, computing each distinct
/// frame's descriptor once.
pub fn eval_room(
    model: &SiameseModel,
    manifest: &Manifest,
    pairs: &[PairSpec],
    threshold: f64,
) -> Result<RoomReport> {
    if pairs.is_empty() {
        return Err(Error::Argument("room evaluation needs pairs".into()));
    }
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::Argument(format!(
            "threshold must be positive, got {threshold}"
        )));
    }
    let (h, w) = (
        model.backbone_config().input_height,
        model.backbone_config().input_width,
    );
    let mut needed: Vec<usize> = pairs.iter().flat_map(|p| [p.i, p.j]).collect();
    needed.sort_unstable();
    needed.dedup();
    let descriptors: Vec<Result<(usize, Descriptor)>> = needed
        .par_iter()
        .map(|&i| -> Result<(usize, Descriptor)> {
            let frame = &manifest.frames()[i];
            let img = load_panorama(&manifest.resolve_image(frame), h, w)?;
            Ok((i, model.forward(&to_network_input(&img))?))
        })
        .collect();
    let mut by_index: BTreeMap<usize, Descriptor> = BTreeMap::new();
    for r in descriptors {
        let (i, d) = r?;
        by_index.insert(i, d);
    }

    let mut report = RoomReport {
        n_same: 0,
        n_diff: 0,
        correct_same: 0,
        correct_diff: 0,
        threshold,
    };
    for p in pairs {
        let truth_same = manifest.frames()[p.i].room == manifest.frames()[p.j].room;
        let predict_same = distance(&by_index[&p.i], &by_index[&p.j])? < threshold;
        if truth_same {
            report.n_same += 1;
            if predict_same {
                report.correct_same += 1;
            }
        } else {
            report.n_diff += 1;
            if !predict_same {
                report.correct_diff += 1;
            }
        }
    }
    Ok(report)
}

/// Per-condition localization error statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionStats {
    pub condition: Condition,
    pub count: usize,
    pub mean_error: f64,
    pub median_error: f64,
}

/// Localization evaluation: per-condition and global error aggregates
/// plus the raw per-frame match indices and errors.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationReport {
    pub per_condition: Vec<ConditionStats>,
    pub global_mean: f64,
    pub global_median: f64,
    pub match_indices: Vec<usize>,
    pub errors: Vec<f64>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

impl LocalizationReport {
    pub fn record(&self) -> String {
        let mut s = String::new();
        for c in &self.per_condition {
            s.push_str(&format!(
                "condition={}\tcount={}\tmean_error={:.6}\tmedian_error={:.6}\n",
                c.condition, c.count, c.mean_error, c.median_error
            ));
        }
        s.push_str(&format!(
            "condition=all\tcount={}\tmean_error={:.6}\tmedian_error={:.6}\n",
            self.errors.len(),
            self.global_mean,
            self.global_median
        ));
        s
    }

    pub fn table(&self) -> String {
        let mut s = String::from("localization error (m)\n");
        s.push_str("condition   count    mean    median\n");
        for c in &self.per_condition {
            s.push_str(&format!(
                "{:<10} {:>6} {:>8.4} {:>8.4}\n",
                c.condition.to_string(),
                c.count,
                c.mean_error,
                c.median_error
            ));
        }
        s.push_str(&format!(
            "{:<10} {:>6} {:>8.4} {:>8.4}\n",
            "all",
            self.errors.len(),
            self.global_mean,
            self.global_median
        ));
        s
    }
}

/// Localize every test frame against the map and aggregate the planar
/// pose errors per lighting condition.
pub fn eval_localization(
    model: &SiameseModel,
    map: &VisualMap,
    test_frames: &Manifest,
) -> Result<LocalizationReport> {
    if map.is_empty() {
        return Err(Error::Argument("visual map is empty".into()));
    }
    if test_frames.is_empty() {
        return Err(Error::Argument("test manifest is empty".into()));
    }
    if map.descriptor_dim() != model.descriptor_dim() {
        return Err(Error::Argument(format!(
            "map descriptor dimension {} does not match model dimension {}",
            map.descriptor_dim(),
            model.descriptor_dim()
        )));
    }
    let (h, w) = (
        model.backbone_config().input_height,
        model.backbone_config().input_width,
    );
    let results: Vec<Result<(usize, f64, Condition)>> = test_frames
        .frames()
        .par_iter()
        .map(|frame| -> Result<(usize, f64, Condition)> {
            let img = load_panorama(&test_frames.resolve_image(frame), h, w)?;
            let descriptor = model.forward(&to_network_input(&img))?;
            let (idx, pose, _) = retrieve(map, &descriptor)?;
            Ok((idx, pose.planar_distance(&frame.pose), frame.condition))
        })
        .collect();

    let mut match_indices = Vec::with_capacity(test_frames.len());
    let mut errors = Vec::with_capacity(test_frames.len());
    let mut grouped: BTreeMap<Condition, Vec<f64>> = BTreeMap::new();
    for r in results {
        let (idx, err, cond) = r?;
        match_indices.push(idx);
        errors.push(err);
        grouped.entry(cond).or_default().push(err);
    }

    let per_condition = grouped
        .into_iter()
        .map(|(condition, mut errs)| {
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            errs.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
            ConditionStats {
                condition,
                count: errs.len(),
                mean_error: mean,
                median_error: median(&errs),
            }
        })
        .collect::<Vec<_>>();

    let global_mean = errors.iter().sum::<f64>() / errors.len() as f64;
    let mut sorted = errors.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    Ok(LocalizationReport {
        per_condition,
        global_mean,
        global_median: median(&sorted),
        match_indices,
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Frame;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::path::PathBuf;

    fn desc(v: &[f64]) -> Descriptor {
        Descriptor::new(v.to_vec()).unwrap()
    }

    fn entry(v: &[f64], x: f64, room: &str) -> MapEntry {
        MapEntry {
            descriptor: desc(v),
            pose: Pose::new(x, 0.0, 0.0).unwrap(),
            room: room.into(),
        }
    }

    #[test]
    fn retrieve_single_entry_and_exact_hit() {
        let map = VisualMap::new(vec![entry(&[1.0, 0.0], 2.0, "a")], "t").unwrap();
        let (i, pose, d) = retrieve(&map, &desc(&[9.0, 9.0])).unwrap();
        assert_eq!(i, 0);
        assert_eq!(pose.x, 2.0);
        assert!(d > 0.0);

        let map = VisualMap::new(
            vec![
                entry(&[0.0, 0.0], 0.0, "a"),
                entry(&[1.0, 1.0], 1.0, "a"),
                entry(&[2.0, 2.0], 2.0, "b"),
            ],
            "t",
        )
        .unwrap();
        let (i, _, d) = retrieve(&map, &desc(&[1.0, 1.0])).unwrap();
        assert_eq!(i, 1);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn retrieve_breaks_ties_toward_lowest_index() {
        let map = VisualMap::new(
            vec![
                entry(&[5.0], 0.0, "a"),
                entry(&[1.0], 1.0, "a"),
                entry(&[1.0], 2.0, "a"),
            ],
            "t",
        )
        .unwrap();
        let (i, _, _) = retrieve(&map, &desc(&[1.0])).unwrap();
        assert_eq!(i, 1);
    }

    #[test]
    fn retrieve_matches_exhaustive_oracle_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let n = rng.random_range(1..200);
            let dim = rng.random_range(1..6);
            let entries: Vec<MapEntry> = (0..n)
                .map(|k| {
                    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                    entry(&v, k as f64, "r")
                })
                .collect();
            let map = VisualMap::new(entries, "t").unwrap();
            let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let query = desc(&q);

            // independent oracle: plain scan with explicit arithmetic
            let mut best = (0usize, f64::INFINITY);
            for (i, e) in map.entries().iter().enumerate() {
                let d: f64 = e
                    .descriptor
                    .values()
                    .iter()
                    .zip(query.values())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if d < best.1 {
                    best = (i, d);
                }
            }
            let (i, pose, d) = retrieve(&map, &query).unwrap();
            assert_eq!(i, best.0);
            assert_eq!(d, best.1);
            assert_eq!(pose.x, best.0 as f64);
        }
    }

    #[test]
    fn retrieve_rejects_dimension_mismatch() {
        let map = VisualMap::new(vec![entry(&[1.0, 2.0], 0.0, "a")], "t").unwrap();
        assert!(retrieve(&map, &desc(&[1.0])).is_err());
    }

    #[test]
    fn room_report_from_descriptor_pairs() {
        // perfectly separated: same-room pairs at distance 0, different
        // rooms at distance 1 (the margin)
        let same = (desc(&[0.0, 0.0]), desc(&[0.0, 0.0]), true);
        let diff = (desc(&[0.0, 0.0]), desc(&[1.0, 0.0]), false);
        let pairs = vec![same.clone(), same.clone(), diff.clone(), diff.clone()];
        let r = eval_room_descriptors(&pairs, 0.5).unwrap();
        assert_eq!(r.global_accuracy(), 1.0);
        assert_eq!(r.same_accuracy(), 1.0);
        assert_eq!(r.diff_accuracy(), 1.0);
        assert_eq!(r.total(), 4);

        // inverted truth: everything is judged wrong
        let inverted = vec![
            (same.0.clone(), same.1.clone(), false),
            (diff.0.clone(), diff.1.clone(), true),
        ];
        let r = eval_room_descriptors(&inverted, 0.5).unwrap();
        assert_eq!(r.global_accuracy(), 0.0);

        assert!(eval_room_descriptors(&[], 0.5).is_err());
        assert!(eval_room_descriptors(&pairs, 0.0).is_err());
    }

    #[test]
    fn room_report_strata_recombine_to_global() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pairs: Vec<(Descriptor, Descriptor, bool)> = (0..500)
            .map(|_| {
                let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                (desc(&a), desc(&b), rng.random_range(0..2) == 0)
            })
            .collect();
        let r = eval_room_descriptors(&pairs, 0.7).unwrap();
        let weighted = (r.same_accuracy() * r.n_same as f64 + r.diff_accuracy() * r.n_diff as f64)
            / r.total() as f64;
        assert!((weighted - r.global_accuracy()).abs() < 1e-9);
    }

    #[test]
    fn map_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let map = VisualMap::new(
            vec![
                entry(&[0.25, -1.5, 3.0], 1.0, "corridor"),
                entry(&[9.0, 0.125, -2.0], 2.0, "office"),
            ],
            "unit-test",
        )
        .unwrap();
        let p1 = dir.path().join("m1.vmap");
        map.save(&p1).unwrap();
        let loaded = VisualMap::load(&p1).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.source(), "unit-test");
        assert_eq!(loaded.entries()[1].room, "office");

        let p2 = dir.path().join("m2.vmap");
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    /// Self-retrieval must produce zero error; a single-entry map forces
    /// the match.
    #[test]
    fn localization_self_and_forced_match() {
        use crate::imaging::PanoramicImage;
        use crate::model::{build_model, BackboneConfig, BackboneKind, HeadConfig};

        let dir = tempfile::tempdir().unwrap();
        // two distinct frames on disk
        for (name, fill) in [("a.png", 40u8), ("b.png", 200u8)] {
            PanoramicImage::filled(16, 64, [fill, fill / 2, fill / 3])
                .unwrap()
                .save(&dir.path().join(name))
                .unwrap();
        }
        let frames = vec![
            Frame {
                image_path: PathBuf::from("a.png"),
                pose: Pose::new(0.0, 0.0, 0.0).unwrap(),
                room: "r0".into(),
                condition: Condition::Cloudy,
                sequence: "s".into(),
            },
            Frame {
                image_path: PathBuf::from("b.png"),
                pose: Pose::new(3.0, 4.0, 0.0).unwrap(),
                room: "r0".into(),
                condition: Condition::Night,
                sequence: "s".into(),
            },
        ];
        let manifest = Manifest::from_frames(frames, dir.path().to_path_buf()).unwrap();
        let model = build_model(
            BackboneConfig::new(BackboneKind::Simple1, 16, 64),
            HeadConfig::new(16, 8, 4).unwrap(),
            11,
        )
        .unwrap();

        let map = build_map(&model, &manifest).unwrap();
        assert_eq!(map.len(), 2);
        let report = eval_localization(&model, &map, &manifest).unwrap();
        assert_eq!(report.global_mean, 0.0);
        assert_eq!(report.match_indices, vec![0, 1]);

        // single-entry map at (0,0): the frame at (3,4) errs by 5 m
        let single = VisualMap::new(vec![map.entries()[0].clone()], "t").unwrap();
        let report = eval_localization(&model, &single, &manifest).unwrap();
        assert_eq!(report.errors[0], 0.0);
        assert!((report.errors[1] - 5.0).abs() < 1e-12);
        // per-condition means recombine to the global mean
        let weighted: f64 = report
            .per_condition
            .iter()
            .map(|c| c.mean_error * c.count as f64)
            .sum::<f64>()
            / report.errors.len() as f64;
        assert!((weighted - report.global_mean).abs() < 1e-9);
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]), 2.5);
        assert_eq!(median(&[7.0]), 7.0);
    }
}
