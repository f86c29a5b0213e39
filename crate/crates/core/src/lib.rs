//! Siamese descriptor networks for panoramic place recognition and
//! indoor robot localization.
//!
//! The crate covers the full pipeline:
//!
//! - [`imaging`] – the canonical 8-bit RGB panorama type, loading,
//!   cyclic rotation and network-input normalization.
//! - [`augment`] – photometric and geometric augmentation effects
//!   (local light spots, global brightness, sharpen/blur, contrast,
//!   equalization, saturation, rotation) plus a deterministic
//!   combined-effect enumerator and a corpus emitter.
//! - [`dataset`] – pose-annotated image manifests, metric pair
//!   labelling normalized by the maximum inter-image distance, and
//!   stratified same/different-room pair sampling.
//! - [`model`] – the Siamese network itself: configurable
//!   convolutional backbones, a fully-connected flattening head,
//!   Euclidean descriptor comparison, the contrastive loss and its
//!   analytic gradients.
//! - [`train`] – SGD-with-momentum training over sampled pairs with
//!   per-epoch checkpointing and a finite-difference gradient checker.
//! - [`localize`] – descriptor maps, nearest-descriptor retrieval,
//!   room-discrimination and localization-error evaluation, and a
//!   procedural synthetic world for desk-scale end-to-end runs.
//!
//! All stochastic operations are keyed by explicit integer seeds; two
//! runs with identical inputs and seeds produce identical outputs,
//! including byte-identical checkpoints.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod imaging;
pub mod localize;
pub mod model;
pub mod train;

pub use error::{Error, Result};
