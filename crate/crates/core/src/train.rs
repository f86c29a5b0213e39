//! SGD-with-momentum training over sampled pairs, with deterministic
//! seeding, per-epoch statistics, checkpointing and a finite-difference
//! gradient checker.
//!
//! Determinism contract: a fixed (seed, config, manifest) reproduces
//! losses and checkpoints exactly. Per-pair gradients inside a batch may
//! be computed in parallel, but they are always reduced in pair order,
//! so results do not depend on the worker count.

use crate::dataset::{sample_pairs, Manifest, PairTask};
use crate::error::{Error, Result};
use crate::imaging::{load_panorama, to_network_input, NormalizedImage};
use crate::model::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::model::{contrastive_loss, distance, Gradients, SiameseModel};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

/// Upper bound on pair gradients held in memory at once.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub pairs_per_epoch: usize,
    pub ratio_same: f64,
    pub alpha: f64,
    pub task: PairTask,
    pub seed: u64,
    /// Draw a fresh pair sample every epoch (a fixed sample is reused
    /// otherwise).
    pub resample_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            batch_size: 16,
            epochs: 1,
            pairs_per_epoch: 1000,
            ratio_same: 0.5,
            alpha: 1.0,
            task: PairTask::Metric,
            seed: 0,
            resample_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Argument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Argument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be at least 1".into()));
        }
        if self.ratio_same.is_nan() || self.ratio_same <= 0.0 || self.ratio_same >= 1.0 {
            return Err(Error::Argument(format!(
                "ratio_same must lie in (0, 1), got {}",
                self.ratio_same
            )));
        }
        if self.pairs_per_epoch == 0 && self.epochs > 0 {
            return Err(Error::Argument("pairs_per_epoch must be at least 1".into()));
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(Error::Argument(format!(
                "margin must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub n_same: usize,
    pub n_diff: usize,
    pub seconds: f64,
}

/// Classical momentum update in gradient-accumulation form:
/// `v' = mu * v + g`, `p' = p - lr * v'`.
pub fn sgd_step(
    param: &mut [f64],
    grad: &[f64],
    velocity: &mut [f64],
    lr: f64,
    mu: f64,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != velocity.len() {
        return Err(Error::Argument(format!(
            "sgd_step length mismatch: param {}, grad {}, velocity {}",
            param.len(),
            grad.len(),
            velocity.len()
        )));
    }
    for i in 0..param.len() {
        velocity[i] = mu * velocity[i] + grad[i];
        param[i] -= lr * velocity[i];
    }
    Ok(())
}

/// Stable seed derivation for per-epoch sampling streams (splitmix64).
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Load a frame's image at the model input size, normalized.
fn load_input(
    manifest: &Manifest,
    frame_idx: usize,
    height: usize,
    width: usize,
) -> Result<NormalizedImage> {
    let frame = &manifest.frames()[frame_idx];
    let img = load_panorama(&manifest.resolve_image(frame), height, width)?;
    Ok(to_network_input(&img))
}

/// Train the model over `config.epochs` epochs of stratified pairs.
///
/// Writes `initial.ckpt` before the first update and `epoch_NNN.ckpt`
/// after every epoch, plus a `train_stats.tsv` record per epoch.
/// Returns the trained model and the per-epoch statistics.
pub fn train(
    model: SiameseModel,
    manifest: &Manifest,
    config: &TrainConfig,
    checkpoint_dir: &Path,
) -> Result<(SiameseModel, Vec<EpochStats>)> {
    config.validate()?;
    if manifest.is_empty() {
        return Err(Error::Argument("training manifest is empty".into()));
    }
    std::fs::create_dir_all(checkpoint_dir).map_err(|e| Error::io(checkpoint_dir, e))?;

    let mut model = model;
    let meta = |epoch: usize| {
        CheckpointMeta::new(config.alpha, config.seed)
            .with_extra("epoch", epoch)
            .with_extra(
                "task",
                match config.task {
                    PairTask::RoomBinary => "room_binary",
                    PairTask::Metric => "metric",
                },
            )
    };
    save_checkpoint(&model, &meta(0), &checkpoint_dir.join("initial.ckpt"))?;

    let (in_h, in_w) = (
        model.backbone_config().input_height,
        model.backbone_config().input_width,
    );
    let mut velocity: Vec<Vec<f64>> = Vec::new();
    model.visit_params(&mut |_, _, data| velocity.push(vec![0.0; data.len()]));

    let mut image_cache: HashMap<usize, Arc<NormalizedImage>> = HashMap::new();
    let mut stats = Vec::with_capacity(config.epochs);
    let mut stats_lines = String::new();

    for epoch in 1..=config.epochs {
        let t0 = Instant::now();
        let epoch_seed = derive_seed(
            config.seed,
            if config.resample_each_epoch {
                epoch as u64
            } else {
                1
            },
        );
        let pairs = sample_pairs(
            manifest,
            config.pairs_per_epoch,
            config.ratio_same,
            config.task,
            epoch_seed,
        )?;

        // Load every image this epoch touches, in parallel, index order.
        let mut missing: Vec<usize> = pairs
            .iter()
            .flat_map(|p| [p.i, p.j])
            .filter(|i| !image_cache.contains_key(i))
            .collect();
        missing.sort_unstable();
        missing.dedup();
        let loaded: Vec<(usize, Result<NormalizedImage>)> = missing
            .par_iter()
            .map(|&i| (i, load_input(manifest, i, in_h, in_w)))
            .collect();
        for (i, res) in loaded {
            image_cache.insert(i, Arc::new(res?));
        }

        let mut loss_sum = 0.0f64;
        for (batch_idx, batch) in pairs.chunks(config.batch_size).enumerate() {
            let mut acc: Option<Gradients> = None;
            for chunk in batch.chunks(GRAD_CHUNK) {
                let results: Vec<Result<(Gradients, f64)>> = chunk
                    .par_iter()
                    .map(|p| {
                        let a = image_cache.get(&p.i).expect("cached").clone();
                        let b = image_cache.get(&p.j).expect("cached").clone();
                        model.backward((&a, &b), p.label, config.alpha)
                    })
                    .collect();
                for r in results {
                    let (g, l) = r?;
                    if !l.is_finite() || !g.is_finite() {
                        return Err(Error::Training(format!(
                            "non-finite loss or gradient in epoch {epoch}, batch {batch_idx}"
                        )));
                    }
                    loss_sum += l;
                    match acc.as_mut() {
                        None => acc = Some(g),
                        Some(a) => a.add_assign(&g),
                    }
                }
            }
            let mut grads = acc.expect("batches are non-empty");
            grads.scale(1.0 / batch.len() as f64);

            let mut slot = 0usize;
            let tensors = grads.tensors();
            let velocity_ref = &mut velocity;
            let mut sgd_err: Option<Error> = None;
            model.visit_params_mut(&mut |_, _, param| {
                if sgd_err.is_none() {
                    if let Err(e) = sgd_step(
                        param,
                        &tensors[slot],
                        &mut velocity_ref[slot],
                        config.learning_rate,
                        config.momentum,
                    ) {
                        sgd_err = Some(e);
                    }
                }
                slot += 1;
            });
            if let Some(e) = sgd_err {
                return Err(e);
            }
        }

        let n_same = pairs
            .iter()
            .filter(|p| manifest.frames()[p.i].room == manifest.frames()[p.j].room)
            .count();
        let epoch_stats = EpochStats {
            epoch,
            mean_loss: loss_sum / pairs.len() as f64,
            n_same,
            n_diff: pairs.len() - n_same,
            seconds: t0.elapsed().as_secs_f64(),
        };
        save_checkpoint(
            &model,
            &meta(epoch),
            &checkpoint_dir.join(format!("epoch_{epoch:03}.ckpt")),
        )?;
        stats_lines.push_str(&format!(
            "epoch={}\tmean_loss={}\tn_same={}\tn_diff={}\tseconds={:.3}\n",
            epoch_stats.epoch,
            epoch_stats.mean_loss,
            epoch_stats.n_same,
            epoch_stats.n_diff,
            epoch_stats.seconds
        ));
        stats.push(epoch_stats);
    }

    let stats_path = checkpoint_dir.join("train_stats.tsv");
    std::fs::write(&stats_path, stats_lines).map_err(|e| Error::io(&stats_path, e))?;
    Ok((model, stats))
}

/// Compare analytic parameter gradients against central finite
/// differences on `n_params` randomly chosen parameters; returns the
/// worst relative error. When both gradients vanish the error is zero.
pub fn gradient_check(
    model: &mut SiameseModel,
    pair: (&NormalizedImage, &NormalizedImage, f64),
    alpha: f64,
    eps: f64,
    n_params: usize,
    seed: u64,
) -> Result<f64> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Argument(format!("eps must be positive, got {eps}")));
    }
    if n_params == 0 {
        return Err(Error::Argument("n_params must be at least 1".into()));
    }
    let (img0, img1, y) = pair;
    let (grads, _) = model.backward((img0, img1), y, alpha)?;

    // Flat offsets of each tensor in visit order.
    let mut offsets = Vec::with_capacity(grads.tensors().len());
    let mut total = 0usize;
    for t in grads.tensors() {
        offsets.push(total);
        total += t.len();
    }
    let analytic_at = |flat: usize| -> f64 {
        let t = match offsets.binary_search(&flat) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        grads.tensors()[t][flat - offsets[t]]
    };

    let pair_loss = |m: &SiameseModel| -> Result<f64> {
        let d0 = m.forward(img0)?;
        let d1 = m.forward(img1)?;
        contrastive_loss(distance(&d0, &d1)?, y, alpha)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_params {
        let idx = rng.random_range(0..total);
        let orig = model.param_at(idx).expect("index in range");
        model.set_param_at(idx, orig + eps);
        let up = pair_loss(model)?;
        model.set_param_at(idx, orig - eps);
        let down = pair_loss(model)?;
        model.set_param_at(idx, orig);

        let numeric = (up - down) / (2.0 * eps);
        let analytic = analytic_at(idx);
        let scale = analytic.abs().max(numeric.abs());
        let rel = if scale < 1e-12 {
            0.0
        } else {
            (analytic - numeric).abs() / scale
        };
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}
