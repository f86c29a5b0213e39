//! Cross-module integration: ingest -> sample -> train -> evaluate on a
//! small world, the augmented-corpus contract, and property tests for
//! the invariants that hold across the whole parameter space.

use panoloc::augment::{apply_descriptor, augment_corpus, enumerate_combos, COMBO_COUNT};
use panoloc::dataset::{load_manifest, sample_pairs, subsample_map, PairTask};
use panoloc::imaging::{rotate_panorama, PanoramicImage};
use panoloc::localize::synthetic::generate_synthetic_world;
use panoloc::localize::{build_map, eval_localization, eval_room};
use panoloc::model::{build_model, contrastive_loss, BackboneConfig, BackboneKind, HeadConfig};
use panoloc::train::{train, TrainConfig};
use proptest::prelude::*;

#[test]
fn synthetic_world_supports_the_full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (train_m, test_m, map_m) =
        generate_synthetic_world(2, 9, 0.5, (16, 64), 3, dir.path()).unwrap();

    let model = build_model(
        BackboneConfig::new(BackboneKind::Simple1, 16, 64),
        HeadConfig::new(32, 16, 4).unwrap(),
        3,
    )
    .unwrap();
    let config = TrainConfig {
        epochs: 3,
        pairs_per_epoch: 60,
        batch_size: 8,
        seed: 3,
        ..TrainConfig::default()
    };
    let (model, stats) = train(model, &train_m, &config, &dir.path().join("ckpt")).unwrap();
    assert_eq!(stats.len(), 3);

    // reload the final checkpoint and confirm it evaluates identically
    let (reloaded, _) = panoloc::model::checkpoint::load_checkpoint(
        &dir.path().join("ckpt").join("epoch_003.ckpt"),
    )
    .unwrap();

    let pairs = sample_pairs(&test_m, 60, 0.5, PairTask::RoomBinary, 8).unwrap();
    let live = eval_room(&model, &test_m, &pairs, 0.5).unwrap();
    assert_eq!(live.total(), 60);

    let sub = subsample_map(&map_m, 9).unwrap();
    let vmap = build_map(&reloaded, &sub).unwrap();
    assert_eq!(vmap.len(), 9);
    let report = eval_localization(&reloaded, &vmap, &test_m).unwrap();
    assert_eq!(report.errors.len(), test_m.len());
    assert!(report.global_mean.is_finite());
}

#[test]
fn augment_corpus_contract_on_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("w");
    let (train_m, _, _) = generate_synthetic_world(2, 4, 0.5, (64, 128), 5, &world).unwrap();
    let two_frames = panoloc::dataset::Manifest::from_frames(
        train_m.frames()[..2].to_vec(),
        train_m.base_dir().to_path_buf(),
    )
    .unwrap();

    let out = dir.path().join("aug");
    let augmented = augment_corpus(&two_frames, 13, &out).unwrap();
    assert_eq!(augmented.len(), 2 * (COMBO_COUNT + 1));

    // poses and rooms pass through unchanged
    for (i, frame) in augmented.frames().iter().enumerate() {
        let src = &two_frames.frames()[i / (COMBO_COUNT + 1)];
        assert_eq!(frame.pose, src.pose);
        assert_eq!(frame.room, src.room);
        assert!(augmented.resolve_image(frame).is_file());
    }

    // the emitted manifest file reloads to the same record list
    let reloaded = load_manifest(&out.join("augmented.manifest")).unwrap();
    assert_eq!(reloaded.frames(), augmented.frames());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Rotation never changes a channel histogram, whatever the angle.
    #[test]
    fn prop_rotation_preserves_histograms(seed in 0u64..500, degrees in 0.0f64..360.0) {
        let img = {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let px: Vec<u8> = (0..24 * 48 * 3).map(|_| rng.random_range(0..=255)).collect();
            PanoramicImage::from_raw(24, 48, px).unwrap()
        };
        let rot = rotate_panorama(&img, degrees);
        prop_assert_eq!(img.channel_histograms(), rot.channel_histograms());
    }

    /// Every enumerated augmentation keeps the image shape; u8 storage
    /// keeps the range by construction.
    #[test]
    fn prop_augmentations_preserve_shape(seed in 0u64..200) {
        let img = {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let px: Vec<u8> = (0..96 * 128 * 3).map(|_| rng.random_range(0..=255)).collect();
            PanoramicImage::from_raw(96, 128, px).unwrap()
        };
        let descriptors = enumerate_combos(seed, 96, 128);
        prop_assert_eq!(descriptors.len(), COMBO_COUNT);
        // spot-check a third of the grid per case to keep runtime sane
        for desc in descriptors.iter().step_by(3) {
            let out = apply_descriptor(&img, desc).unwrap();
            prop_assert_eq!((out.height(), out.width()), (96, 128));
        }
    }

    /// The loss is non-negative over its whole domain and vanishes only
    /// where the contract says it may.
    #[test]
    fn prop_contrastive_loss_nonnegative(
        d in 0.0f64..10.0,
        y in 0.0f64..=1.0,
        alpha in 0.001f64..5.0,
    ) {
        let l = contrastive_loss(d, y, alpha).unwrap();
        prop_assert!(l >= 0.0);
        if l == 0.0 {
            let pull_vanishes = y == 1.0 || d == 0.0;
            let push_vanishes = y == 0.0 || d >= alpha;
            prop_assert!(pull_vanishes && push_vanishes,
                "zero loss off the contract: d={}, y={}, alpha={}", d, y, alpha);
        }
    }

    /// Metric labels are symmetric, bounded and exactly 1 across rooms.
    #[test]
    fn prop_metric_labels_bounded_symmetric(
        ax in -50.0f64..50.0, ay in -50.0f64..50.0,
        bx in -50.0f64..50.0, by in -50.0f64..50.0,
        kb in 0.1f64..100.0,
        same_room in proptest::bool::ANY,
    ) {
        use panoloc::dataset::{label_metric, Pose};
        let a = Pose::new(ax, ay, 0.0).unwrap();
        let b = Pose::new(bx, by, 0.0).unwrap();
        let (ra, rb) = if same_room { ("r", "r") } else { ("r", "s") };
        let ab = label_metric(&a, &b, ra, rb, kb).unwrap();
        let ba = label_metric(&b, &a, rb, ra, kb).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        if !same_room {
            prop_assert_eq!(ab, 1.0);
        } else if ab == 0.0 {
            prop_assert!(ax == bx && ay == by);
        }
    }

    /// Stratified sampling hits the requested split exactly for every
    /// seed and admissible ratio.
    #[test]
    fn prop_sampling_counts_exact(
        seed in 0u64..1000,
        n in 10usize..400,
        ratio in 0.05f64..0.95,
    ) {
        use panoloc::dataset::{Condition, Frame, Manifest, Pose};
        use std::path::PathBuf;
        let frames: Vec<Frame> = (0..12)
            .map(|i| Frame {
                image_path: PathBuf::from(format!("{i}.png")),
                pose: Pose::new(i as f64, 0.0, 0.0).unwrap(),
                room: format!("room{}", i / 4),
                condition: Condition::Cloudy,
                sequence: "p".into(),
            })
            .collect();
        let manifest = Manifest::from_frames(frames, PathBuf::from(".")).unwrap();
        let pairs = sample_pairs(&manifest, n, ratio, PairTask::RoomBinary, seed).unwrap();
        let same = pairs.iter().filter(|p| p.label == 0.0).count();
        prop_assert_eq!(same, (n as f64 * ratio).round() as usize);
        prop_assert_eq!(pairs.len(), n);
    }
}
