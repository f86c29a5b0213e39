//! The Siamese network: configurable convolutional backbones, a
//! fully-connected flattening head, Euclidean descriptor comparison,
//! the contrastive loss and analytic gradients.
//!
//! Both branches of the Siamese structure reference one parameter set;
//! weight sharing is structural, so [`SiameseModel::backward`] simply
//! accumulates both branches' contributions into the same gradient
//! tensors. All arithmetic is f64; checkpoints store parameters as
//! little-endian f32 with named shapes.

use crate::error::{Error, Result};
use crate::imaging::NormalizedImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

pub mod checkpoint;
pub mod layers;
pub mod loss;

pub use loss::{contrastive_loss, distance, loss_gradient_wrt_descriptors};

use layers::{BatchNorm2d, Conv2d, Linear, MaxPool2d, PoolCache, Tensor3};

/// Feature-extraction architecture selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneKind {
    Simple1,
    Simple2,
    AlexNet,
    Vgg11,
    Vgg13,
    Vgg16,
    Vgg19,
    Vgg11Bn,
    Vgg13Bn,
    Vgg16Bn,
    Vgg19Bn,
}

impl BackboneKind {
    pub fn name(&self) -> &'static str {
        match self {
            BackboneKind::Simple1 => "simple1",
            BackboneKind::Simple2 => "simple2",
            BackboneKind::AlexNet => "alexnet",
            BackboneKind::Vgg11 => "vgg11",
            BackboneKind::Vgg13 => "vgg13",
            BackboneKind::Vgg16 => "vgg16",
            BackboneKind::Vgg19 => "vgg19",
            BackboneKind::Vgg11Bn => "vgg11_bn",
            BackboneKind::Vgg13Bn => "vgg13_bn",
            BackboneKind::Vgg16Bn => "vgg16_bn",
            BackboneKind::Vgg19Bn => "vgg19_bn",
        }
    }
}

impl FromStr for BackboneKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "simple1" => Ok(BackboneKind::Simple1),
            "simple2" => Ok(BackboneKind::Simple2),
            "alexnet" => Ok(BackboneKind::AlexNet),
            "vgg11" => Ok(BackboneKind::Vgg11),
            "vgg13" => Ok(BackboneKind::Vgg13),
            "vgg16" => Ok(BackboneKind::Vgg16),
            "vgg19" => Ok(BackboneKind::Vgg19),
            "vgg11_bn" => Ok(BackboneKind::Vgg11Bn),
            "vgg13_bn" => Ok(BackboneKind::Vgg13Bn),
            "vgg16_bn" => Ok(BackboneKind::Vgg16Bn),
            "vgg19_bn" => Ok(BackboneKind::Vgg19Bn),
            other => Err(format!("unknown backbone '{other}'")),
        }
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Backbone configuration: architecture, expected input size, optional
/// per-channel input standardization and an optional pretrained-parameter
/// file in the checkpoint tensor format.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub input_height: usize,
    pub input_width: usize,
    /// Per-channel mean subtracted from the [0,1] input at the model
    /// boundary. Plain /255 scaling when unset.
    pub channel_mean: Option<[f64; 3]>,
    /// Per-channel divisor applied after mean subtraction.
    pub channel_std: Option<[f64; 3]>,
    pub pretrained_weights: Option<PathBuf>,
}

impl BackboneConfig {
    pub fn new(kind: BackboneKind, input_height: usize, input_width: usize) -> Self {
        Self {
            kind,
            input_height,
            input_width,
            channel_mean: None,
            channel_std: None,
            pretrained_weights: None,
        }
    }

    pub fn with_standardization(mut self, mean: [f64; 3], std: [f64; 3]) -> Result<Self> {
        if std.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return Err(Error::Argument(format!(
                "channel std must be positive, got {std:?}"
            )));
        }
        self.channel_mean = Some(mean);
        self.channel_std = Some(std);
        Ok(self)
    }
}

/// Widths of the three fully-connected flattening layers; the last is
/// the descriptor dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadConfig {
    pub layer_sizes: [usize; 3],
}

impl HeadConfig {
    pub fn new(l1: usize, l2: usize, l3: usize) -> Result<Self> {
        if l1 == 0 || l2 == 0 || l3 == 0 {
            return Err(Error::Argument(format!(
                "head layer sizes must be positive, got ({l1}, {l2}, {l3})"
            )));
        }
        Ok(Self {
            layer_sizes: [l1, l2, l3],
        })
    }

    pub fn descriptor_dim(&self) -> usize {
        self.layer_sizes[2]
    }
}

/// A descriptor vector emitted by one branch for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor(Vec<f64>);

impl Descriptor {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("descriptor holds non-finite values".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One backbone stage.
#[derive(Debug, Clone)]
pub(crate) enum BackboneLayer {
    Conv(Conv2d),
    Norm(BatchNorm2d),
    Relu,
    Pool(MaxPool2d),
}

/// Items of an architecture plan before parameters exist.
#[derive(Debug, Clone, Copy)]
enum PlanItem {
    Conv {
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bn: bool,
    },
    Pool {
        k: usize,
        stride: usize,
    },
}

fn conv3(out_c: usize, bn: bool) -> PlanItem {
    PlanItem::Conv {
        out_c,
        k: 3,
        stride: 1,
        pad: 1,
        bn,
    }
}

fn vgg_plan(channels: &[&[usize]], bn: bool) -> Vec<PlanItem> {
    let mut plan = Vec::new();
    for group in channels {
        for &c in *group {
            plan.push(conv3(c, bn));
        }
        plan.push(PlanItem::Pool { k: 2, stride: 2 });
    }
    plan
}

fn backbone_plan(kind: BackboneKind) -> Vec<PlanItem> {
    // The simple nets keep the flatten width tractable with stride-2
    // 3x3 convolutions followed by a single 2x2 max pool.
    let simple = |channels: [usize; 3]| -> Vec<PlanItem> {
        let mut plan: Vec<PlanItem> = channels
            .iter()
            .map(|&c| PlanItem::Conv {
                out_c: c,
                k: 3,
                stride: 2,
                pad: 1,
                bn: false,
            })
            .collect();
        plan.push(PlanItem::Pool { k: 2, stride: 2 });
        plan
    };
    match kind {
        BackboneKind::Simple1 => simple([3, 8, 16]),
        BackboneKind::Simple2 => simple([3, 16, 32]),
        BackboneKind::AlexNet => vec![
            PlanItem::Conv {
                out_c: 64,
                k: 11,
                stride: 4,
                pad: 2,
                bn: false,
            },
            PlanItem::Pool { k: 3, stride: 2 },
            PlanItem::Conv {
                out_c: 192,
                k: 5,
                stride: 1,
                pad: 2,
                bn: false,
            },
            PlanItem::Pool { k: 3, stride: 2 },
            conv3(384, false),
            conv3(256, false),
            conv3(256, false),
            PlanItem::Pool { k: 3, stride: 2 },
        ],
        BackboneKind::Vgg11 | BackboneKind::Vgg11Bn => vgg_plan(
            &[&[64], &[128], &[256, 256], &[512, 512], &[512, 512]],
            matches!(kind, BackboneKind::Vgg11Bn),
        ),
        BackboneKind::Vgg13 | BackboneKind::Vgg13Bn => vgg_plan(
            &[
                &[64, 64],
                &[128, 128],
                &[256, 256],
                &[512, 512],
                &[512, 512],
            ],
            matches!(kind, BackboneKind::Vgg13Bn),
        ),
        BackboneKind::Vgg16 | BackboneKind::Vgg16Bn => vgg_plan(
            &[
                &[64, 64],
                &[128, 128],
                &[256, 256, 256],
                &[512, 512, 512],
                &[512, 512, 512],
            ],
            matches!(kind, BackboneKind::Vgg16Bn),
        ),
        BackboneKind::Vgg19 | BackboneKind::Vgg19Bn => vgg_plan(
            &[
                &[64, 64],
                &[128, 128],
                &[256, 256, 256, 256],
                &[512, 512, 512, 512],
                &[512, 512, 512, 512],
            ],
            matches!(kind, BackboneKind::Vgg19Bn),
        ),
    }
}

/// Read-only parameter visitor: (name, shape, data).
pub type ParamVisitor<'a> = dyn FnMut(&str, &[usize], &[f64]) + 'a;
/// Mutable parameter visitor: (name, shape, data).
pub type ParamVisitorMut<'a> = dyn FnMut(&str, &[usize], &mut [f64]) + 'a;

/// The shared-parameter Siamese network.
#[derive(Debug, Clone)]
pub struct SiameseModel {
    backbone_cfg: BackboneConfig,
    head_cfg: HeadConfig,
    layers: Vec<BackboneLayer>,
    head: [Linear; 3],
    flatten_dim: usize,
    init_seed: u64,
}

/// Per-branch activations kept for the backward pass.
pub struct ForwardCache {
    bb_inputs: Vec<Tensor3>,
    pool_caches: Vec<Option<PoolCache>>,
    bn_caches: Vec<Option<layers::BnCache>>,
    flat: Vec<f64>,
    head_pre: [Vec<f64>; 2],
    head_act: [Vec<f64>; 2],
}

/// Gradient tensors aligned with [`SiameseModel::visit_params`] order.
#[derive(Debug, Clone)]
pub struct Gradients {
    tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_of(model: &SiameseModel) -> Self {
        let mut tensors = Vec::new();
        model.visit_params(&mut |_, _, data| tensors.push(vec![0.0; data.len()]));
        Self { tensors }
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        debug_assert_eq!(self.tensors.len(), other.tensors.len());
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            for x in t.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn pair_mut(&mut self, base: usize) -> (&mut [f64], &mut [f64]) {
        let (a, b) = self.tensors.split_at_mut(base + 1);
        (&mut a[base], &mut b[0])
    }
}

/// Construct a Siamese model with seed-keyed He-uniform initialization
/// (zero biases). When the backbone config names a pretrained file its
/// tensors overwrite the matching parameters.
pub fn build_model(backbone: BackboneConfig, head: HeadConfig, seed: u64) -> Result<SiameseModel> {
    if backbone.input_height == 0 || backbone.input_width == 0 {
        return Err(Error::Argument("input dimensions must be positive".into()));
    }
    let plan = backbone_plan(backbone.kind);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut layers_vec: Vec<BackboneLayer> = Vec::new();
    let (mut c, mut h, mut w) = (3usize, backbone.input_height, backbone.input_width);
    for item in plan {
        match item {
            PlanItem::Conv {
                out_c,
                k,
                stride,
                pad,
                bn,
            } => {
                let conv = Conv2d::init(c, out_c, k, stride, pad, &mut rng);
                let (oh, ow) = conv.out_hw(h, w);
                if oh == 0 || ow == 0 {
                    return Err(Error::Argument(format!(
                        "{} collapses a {}x{} input to zero size",
                        backbone.kind, backbone.input_height, backbone.input_width
                    )));
                }
                layers_vec.push(BackboneLayer::Conv(conv));
                c = out_c;
                h = oh;
                w = ow;
                if bn {
                    layers_vec.push(BackboneLayer::Norm(BatchNorm2d::init(c)));
                }
                layers_vec.push(BackboneLayer::Relu);
            }
            PlanItem::Pool { k, stride } => {
                let pool = MaxPool2d { k, stride };
                let (oh, ow) = pool.out_hw(h, w);
                if oh == 0 || ow == 0 {
                    return Err(Error::Argument(format!(
                        "{} collapses a {}x{} input to zero size",
                        backbone.kind, backbone.input_height, backbone.input_width
                    )));
                }
                layers_vec.push(BackboneLayer::Pool(pool));
                h = oh;
                w = ow;
            }
        }
    }
    let flatten_dim = c * h * w;
    let [l1, l2, l3] = head.layer_sizes;
    let head_layers = [
        Linear::init(flatten_dim, l1, &mut rng),
        Linear::init(l1, l2, &mut rng),
        Linear::init(l2, l3, &mut rng),
    ];

    let mut model = SiameseModel {
        backbone_cfg: backbone,
        head_cfg: head,
        layers: layers_vec,
        head: head_layers,
        flatten_dim,
        init_seed: seed,
    };

    if let Some(path) = model.backbone_cfg.pretrained_weights.clone() {
        let tensors = checkpoint::read_named_tensors(&path)?;
        model.load_named_tensors(&tensors)?;
    }
    Ok(model)
}

impl SiameseModel {
    pub fn backbone_config(&self) -> &BackboneConfig {
        &self.backbone_cfg
    }

    pub fn head_config(&self) -> &HeadConfig {
        &self.head_cfg
    }

    pub fn descriptor_dim(&self) -> usize {
        self.head_cfg.descriptor_dim()
    }

    pub fn flatten_dim(&self) -> usize {
        self.flatten_dim
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    /// Visit every parameter tensor in a stable order with its name and shape.
    pub fn visit_params(&self, f: &mut ParamVisitor) {
        let mut conv_i = 0usize;
        let mut bn_i = 0usize;
        for layer in &self.layers {
            match layer {
                BackboneLayer::Conv(cv) => {
                    f(
                        &format!("backbone.conv{conv_i}.weight"),
                        &[cv.out_c, cv.in_c, cv.k, cv.k],
                        &cv.weight,
                    );
                    f(
                        &format!("backbone.conv{conv_i}.bias"),
                        &[cv.out_c],
                        &cv.bias,
                    );
                    conv_i += 1;
                }
                BackboneLayer::Norm(bn) => {
                    f(
                        &format!("backbone.bn{bn_i}.gamma"),
                        &[bn.channels],
                        &bn.gamma,
                    );
                    f(&format!("backbone.bn{bn_i}.beta"), &[bn.channels], &bn.beta);
                    bn_i += 1;
                }
                _ => {}
            }
        }
        for (i, fc) in self.head.iter().enumerate() {
            f(
                &format!("head.fc{i}.weight"),
                &[fc.out_f, fc.in_f],
                &fc.weight,
            );
            f(&format!("head.fc{i}.bias"), &[fc.out_f], &fc.bias);
        }
    }

    /// Mutable variant of [`Self::visit_params`], same order.
    pub fn visit_params_mut(&mut self, f: &mut ParamVisitorMut) {
        let mut conv_i = 0usize;
        let mut bn_i = 0usize;
        for layer in &mut self.layers {
            match layer {
                BackboneLayer::Conv(cv) => {
                    let shape = [cv.out_c, cv.in_c, cv.k, cv.k];
                    f(
                        &format!("backbone.conv{conv_i}.weight"),
                        &shape,
                        &mut cv.weight,
                    );
                    f(
                        &format!("backbone.conv{conv_i}.bias"),
                        &[shape[0]],
                        &mut cv.bias,
                    );
                    conv_i += 1;
                }
                BackboneLayer::Norm(bn) => {
                    let c = bn.channels;
                    f(&format!("backbone.bn{bn_i}.gamma"), &[c], &mut bn.gamma);
                    f(&format!("backbone.bn{bn_i}.beta"), &[c], &mut bn.beta);
                    bn_i += 1;
                }
                _ => {}
            }
        }
        for (i, fc) in self.head.iter_mut().enumerate() {
            let shape = [fc.out_f, fc.in_f];
            f(&format!("head.fc{i}.weight"), &shape, &mut fc.weight);
            f(&format!("head.fc{i}.bias"), &[shape[0]], &mut fc.bias);
        }
    }

    /// Total number of scalar parameters.
    pub fn param_scalar_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, _, data| n += data.len());
        n
    }

    /// Read one scalar parameter by flat index over the visit order.
    pub fn param_at(&self, flat_index: usize) -> Option<f64> {
        let mut remaining = flat_index;
        let mut found = None;
        self.visit_params(&mut |_, _, data| {
            if found.is_none() {
                if remaining < data.len() {
                    found = Some(data[remaining]);
                    remaining = usize::MAX;
                } else {
                    remaining -= data.len();
                }
            }
        });
        found
    }

    /// Overwrite one scalar parameter by flat index over the visit order.
    pub fn set_param_at(&mut self, flat_index: usize, value: f64) -> bool {
        let mut remaining = flat_index;
        let mut done = false;
        self.visit_params_mut(&mut |_, _, data| {
            if !done {
                if remaining < data.len() {
                    data[remaining] = value;
                    done = true;
                } else {
                    remaining -= data.len();
                }
            }
        });
        done
    }

    /// Copy named tensors over the current parameters. Every tensor in
    /// `tensors` must exist in the model with an identical shape; the
    /// first mismatch is reported by name.
    pub fn load_named_tensors(&mut self, tensors: &[checkpoint::NamedTensor]) -> Result<()> {
        for (name, shape, data) in tensors {
            let mut applied = false;
            let mut err: Option<Error> = None;
            self.visit_params_mut(&mut |pname, pshape, pdata| {
                if pname == name && err.is_none() && !applied {
                    if pshape != shape.as_slice() {
                        err = Some(Error::Checkpoint(format!(
                            "tensor '{name}' has shape {shape:?}, model expects {pshape:?}"
                        )));
                        return;
                    }
                    pdata.copy_from_slice(data);
                    applied = true;
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            if !applied {
                return Err(Error::Checkpoint(format!(
                    "tensor '{name}' does not exist in a {} model",
                    self.backbone_cfg.kind
                )));
            }
        }
        Ok(())
    }

    fn check_input(&self, input: &NormalizedImage) -> Result<()> {
        if input.height() != self.backbone_cfg.input_height
            || input.width() != self.backbone_cfg.input_width
        {
            return Err(Error::Argument(format!(
                "input is {}x{}, model expects {}x{}",
                input.height(),
                input.width(),
                self.backbone_cfg.input_height,
                self.backbone_cfg.input_width
            )));
        }
        Ok(())
    }

    /// Input conversion: channel-major [0,1] values, optionally
    /// standardized per channel.
    fn input_tensor(&self, input: &NormalizedImage) -> Tensor3 {
        let mut x = Tensor3::from_normalized(input);
        if let (Some(mean), Some(std)) = (
            self.backbone_cfg.channel_mean,
            self.backbone_cfg.channel_std,
        ) {
            x.standardize_channels(&mean, &std);
        }
        x
    }

    /// Embed one image into a descriptor. Deterministic; both Siamese
    /// branches are this same function over the shared parameters.
    pub fn forward(&self, input: &NormalizedImage) -> Result<Descriptor> {
        self.check_input(input)?;
        let (desc, _) = self.run_branch(self.input_tensor(input), false);
        Descriptor::new(desc)
    }

    /// Forward pass that keeps every intermediate needed by backward.
    pub fn forward_cached(&self, input: &NormalizedImage) -> Result<(Descriptor, ForwardCache)> {
        self.check_input(input)?;
        let (desc, cache) = self.run_branch(self.input_tensor(input), true);
        Ok((Descriptor::new(desc)?, cache.expect("cache requested")))
    }

    fn run_branch(&self, input: Tensor3, keep: bool) -> (Vec<f64>, Option<ForwardCache>) {
        let mut bb_inputs: Vec<Tensor3> = Vec::new();
        let mut pool_caches: Vec<Option<PoolCache>> = Vec::new();
        let mut bn_caches: Vec<Option<layers::BnCache>> = Vec::new();

        let mut x = input;
        for layer in &self.layers {
            if keep {
                bb_inputs.push(x.clone());
            }
            let (next, pool_cache, bn_cache) = match layer {
                BackboneLayer::Conv(cv) => (cv.forward(&x), None, None),
                BackboneLayer::Norm(bn) => {
                    let (out, cache) = bn.forward(&x);
                    (out, None, Some(cache))
                }
                BackboneLayer::Relu => (layers::relu_tensor(&x), None, None),
                BackboneLayer::Pool(p) => {
                    let (out, cache) = p.forward(&x);
                    (out, Some(cache), None)
                }
            };
            if keep {
                pool_caches.push(pool_cache);
                bn_caches.push(bn_cache);
            }
            x = next;
        }

        let flat = x.into_data();
        let z1 = self.head[0].forward(&flat);
        let a1 = layers::relu_vec(&z1);
        let z2 = self.head[1].forward(&a1);
        let a2 = layers::relu_vec(&z2);
        let desc = self.head[2].forward(&a2);

        let cache = if keep {
            Some(ForwardCache {
                bb_inputs,
                pool_caches,
                bn_caches,
                flat,
                head_pre: [z1, z2],
                head_act: [a1, a2],
            })
        } else {
            None
        };
        (desc, cache)
    }

    /// Gradients of the contrastive loss with respect to every shared
    /// parameter for one training pair, plus the loss value. Both
    /// branches' contributions are summed (weight sharing).
    pub fn backward(
        &self,
        pair: (&NormalizedImage, &NormalizedImage),
        y: f64,
        alpha: f64,
    ) -> Result<(Gradients, f64)> {
        let (desc0, cache0) = self.forward_cached(pair.0)?;
        let (desc1, cache1) = self.forward_cached(pair.1)?;
        let d = distance(&desc0, &desc1)?;
        let loss = contrastive_loss(d, y, alpha)?;
        let (g0, g1) = loss_gradient_wrt_descriptors(&desc0, &desc1, y, alpha)?;

        let mut grads = Gradients::zeros_of(self);
        self.backprop_branch(&cache0, &g0, &mut grads);
        self.backprop_branch(&cache1, &g1, &mut grads);
        Ok((grads, loss))
    }

    /// Backpropagate one branch, accumulating into `grads` (aligned with
    /// the visit order: backbone tensors first, then head).
    fn backprop_branch(&self, cache: &ForwardCache, g_desc: &[f64], grads: &mut Gradients) {
        // Tensor slot bookkeeping mirrors visit_params exactly.
        let mut slot = 0usize;
        let mut layer_slots: Vec<Option<usize>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            match layer {
                BackboneLayer::Conv(_) | BackboneLayer::Norm(_) => {
                    layer_slots.push(Some(slot));
                    slot += 2;
                }
                _ => layer_slots.push(None),
            }
        }
        let head_slot0 = slot;

        // Head backward: fc2 <- relu <- fc1 <- relu <- fc0.
        let (gw, gb) = grads.pair_mut(head_slot0 + 4);
        let ga2 = self.head[2].backward(&cache.head_act[1], g_desc, gw, gb);
        let gz2 = layers::relu_backward_vec(&cache.head_pre[1], &ga2);
        let (gw, gb) = grads.pair_mut(head_slot0 + 2);
        let ga1 = self.head[1].backward(&cache.head_act[0], &gz2, gw, gb);
        let gz1 = layers::relu_backward_vec(&cache.head_pre[0], &ga1);
        let (gw, gb) = grads.pair_mut(head_slot0);
        let gflat = self.head[0].backward(&cache.flat, &gz1, gw, gb);

        // Unflatten into the last backbone output shape.
        let (oc, oh, ow) = self.output_shape();
        let mut gx = Tensor3::from_data(oc, oh, ow, gflat);

        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.bb_inputs[i];
            gx = match layer {
                BackboneLayer::Conv(cv) => {
                    let base = layer_slots[i].expect("conv has a slot");
                    let (gw, gb) = grads.pair_mut(base);
                    cv.backward(x, &gx, gw, gb)
                }
                BackboneLayer::Norm(bn) => {
                    let base = layer_slots[i].expect("norm has a slot");
                    let (gg, gbeta) = grads.pair_mut(base);
                    bn.backward(
                        x,
                        cache.bn_caches[i].as_ref().expect("bn cache"),
                        &gx,
                        gg,
                        gbeta,
                    )
                }
                BackboneLayer::Relu => layers::relu_backward_tensor(x, &gx),
                BackboneLayer::Pool(p) => {
                    p.backward(x, cache.pool_caches[i].as_ref().expect("pool cache"), &gx)
                }
            };
        }
    }

    /// (channels, height, width) of the backbone output feature map.
    pub fn output_shape(&self) -> (usize, usize, usize) {
        let (mut c, mut h, mut w) = (
            3usize,
            self.backbone_cfg.input_height,
            self.backbone_cfg.input_width,
        );
        for layer in &self.layers {
            match layer {
                BackboneLayer::Conv(cv) => {
                    let (oh, ow) = cv.out_hw(h, w);
                    c = cv.out_c;
                    h = oh;
                    w = ow;
                }
                BackboneLayer::Pool(p) => {
                    let (oh, ow) = p.out_hw(h, w);
                    h = oh;
                    w = ow;
                }
                _ => {}
            }
        }
        (c, h, w)
    }
}
