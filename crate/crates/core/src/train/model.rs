//! Encoders, projector and classification heads.
//!
//! An encoder is an ordered list of parameterized blocks followed by global
//! average pooling. Parameters live in a [`ParamStore`] under
//! `encoder.b{i}.*`, `projector.l{i}.*` and `head.*`, which is how freezing
//! and checkpointing address them.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use candle_core::{ModuleT, Tensor};
use candle_nn::{batch_norm, conv2d, conv2d_no_bias, linear, BatchNorm, Conv2d, Conv2dConfig, Linear, Module, VarBuilder};
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::params::ParamStore;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderKind {
    #[serde(rename = "tiny_cnn")]
    TinyCnn,
    #[serde(rename = "resnet18")]
    Resnet18,
    #[serde(rename = "mobilenetv3_small")]
    MobilenetV3Small,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::TinyCnn => "tiny_cnn",
            EncoderKind::Resnet18 => "resnet18",
            EncoderKind::MobilenetV3Small => "mobilenetv3_small",
        }
    }

    /// Representation size fixed by the architecture, if any.
    pub fn fixed_dim(self) -> Option<usize> {
        match self {
            EncoderKind::TinyCnn => None,
            EncoderKind::Resnet18 => Some(512),
            EncoderKind::MobilenetV3Small => Some(576),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny_cnn" => Ok(EncoderKind::TinyCnn),
            "resnet18" => Ok(EncoderKind::Resnet18),
            "mobilenetv3_small" => Ok(EncoderKind::MobilenetV3Small),
            _ => Err(Error::InvalidArgument(format!("unknown encoder '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderKind,
    pub representation_dim: usize,
    pub projector_widths: Vec<usize>,
    /// Checkpoint whose `encoder.*` tensors initialize the encoder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::tiny_cnn(32)
    }
}

impl ModelSpec {
    pub fn tiny_cnn(representation_dim: usize) -> Self {
        Self {
            encoder: EncoderKind::TinyCnn,
            representation_dim,
            projector_widths: vec![768, 768, 768],
            pretrained: None,
            seed: 0,
        }
    }

    /// The desk-scale encoder: tiny_cnn with a 16-dimensional
    /// representation, narrow enough that a random encoder is a weak
    /// linear-probe baseline on the synthetic data.
    pub fn desk() -> Self {
        Self::tiny_cnn(16)
    }

    pub fn resnet18() -> Self {
        Self {
            encoder: EncoderKind::Resnet18,
            representation_dim: 512,
            ..Self::tiny_cnn(512)
        }
    }

    pub fn mobilenetv3_small() -> Self {
        Self {
            encoder: EncoderKind::MobilenetV3Small,
            representation_dim: 576,
            ..Self::tiny_cnn(576)
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.projector_widths.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.encoder.fixed_dim() {
            if self.representation_dim != d {
                return Err(Error::InvalidArgument(format!(
                    "{} produces {d}-dimensional representations, not {}",
                    self.encoder, self.representation_dim
                )));
            }
        }
        if self.representation_dim == 0 {
            return Err(Error::InvalidArgument("representation_dim must be > 0".into()));
        }
        if self.projector_widths.is_empty() || self.projector_widths.contains(&0) {
            return Err(Error::InvalidArgument("projector widths must be non-empty and positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Act {
    None,
    Relu,
    Hswish,
}

fn relu6(x: &Tensor) -> candle_core::Result<Tensor> {
    x.clamp(0f32, 6f32)
}

fn hard_sigmoid(x: &Tensor) -> candle_core::Result<Tensor> {
    relu6(&(x + 3.0)?)? / 6.0
}

impl Act {
    fn apply(self, x: Tensor) -> candle_core::Result<Tensor> {
        match self {
            Act::None => Ok(x),
            Act::Relu => x.relu(),
            Act::Hswish => x.mul(&hard_sigmoid(&x)?),
        }
    }
}

struct ConvBnAct {
    conv: Conv2d,
    bn: BatchNorm,
    act: Act,
}

impl ConvBnAct {
    #[allow(clippy::too_many_arguments)]
    fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        act: Act,
        vb: VarBuilder,
    ) -> candle_core::Result<Self> {
        let cfg = Conv2dConfig {
            padding,
            stride,
            groups,
            ..Default::default()
        };
        Ok(Self {
            conv: conv2d_no_bias(c_in, c_out, k, cfg, vb.pp("conv"))?,
            bn: batch_norm(c_out, 1e-5, vb.pp("bn"))?,
            act,
        })
    }
}

impl ModuleT for ConvBnAct {
    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        self.act.apply(self.bn.forward_t(&self.conv.forward(x)?, train)?)
    }
}

struct ResStem {
    conv: ConvBnAct,
}

impl ModuleT for ResStem {
    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        // Inputs to the pool are post-ReLU, so zero padding acts like -inf padding.
        let x = self.conv.forward_t(x, train)?;
        x.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?.max_pool2d_with_stride(3, 2)
    }
}

struct BasicBlock {
    c1: ConvBnAct,
    c2: ConvBnAct,
    down: Option<ConvBnAct>,
}

impl BasicBlock {
    fn new(c_in: usize, c_out: usize, stride: usize, vb: VarBuilder) -> candle_core::Result<Self> {
        let down = if stride != 1 || c_in != c_out {
            Some(ConvBnAct::new(c_in, c_out, 1, stride, 0, 1, Act::None, vb.pp("down"))?)
        } else {
            None
        };
        Ok(Self {
            c1: ConvBnAct::new(c_in, c_out, 3, stride, 1, 1, Act::Relu, vb.pp("c1"))?,
            c2: ConvBnAct::new(c_out, c_out, 3, 1, 1, 1, Act::None, vb.pp("c2"))?,
            down,
        })
    }
}

impl ModuleT for BasicBlock {
    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let y = self.c2.forward_t(&self.c1.forward_t(x, train)?, train)?;
        let skip = match &self.down {
            Some(d) => d.forward_t(x, train)?,
            None => x.clone(),
        };
        (y + skip)?.relu()
    }
}

struct SqueezeExcite {
    fc1: Conv2d,
    fc2: Conv2d,
}

impl SqueezeExcite {
    fn new(c: usize, squeeze: usize, vb: VarBuilder) -> candle_core::Result<Self> {
        Ok(Self {
            fc1: conv2d(c, squeeze, 1, Default::default(), vb.pp("fc1"))?,
            fc2: conv2d(squeeze, c, 1, Default::default(), vb.pp("fc2"))?,
        })
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let s = x.mean_keepdim(3)?.mean_keepdim(2)?;
        let s = hard_sigmoid(&self.fc2.forward(&self.fc1.forward(&s)?.relu()?)?)?;
        x.broadcast_mul(&s)
    }
}

fn make_divisible(v: usize, divisor: usize) -> usize {
    let new_v = ((v + divisor / 2) / divisor * divisor).max(divisor);
    if (new_v as f64) < 0.9 * v as f64 {
        new_v + divisor
    } else {
        new_v
    }
}

/// Inverted residual block with optional squeeze-and-excitation.
struct Bneck {
    expand: Option<ConvBnAct>,
    dw: ConvBnAct,
    se: Option<SqueezeExcite>,
    project: ConvBnAct,
    residual: bool,
}

impl Bneck {
    #[allow(clippy::too_many_arguments)]
    fn new(
        c_in: usize,
        k: usize,
        exp: usize,
        c_out: usize,
        se: bool,
        act: Act,
        stride: usize,
        vb: VarBuilder,
    ) -> candle_core::Result<Self> {
        let expand = if exp != c_in {
            Some(ConvBnAct::new(c_in, exp, 1, 1, 0, 1, act, vb.pp("expand"))?)
        } else {
            None
        };
        let se = if se {
            Some(SqueezeExcite::new(exp, make_divisible(exp / 4, 8), vb.pp("se"))?)
        } else {
            None
        };
        Ok(Self {
            expand,
            dw: ConvBnAct::new(exp, exp, k, stride, k / 2, exp, act, vb.pp("dw"))?,
            se,
            project: ConvBnAct::new(exp, c_out, 1, 1, 0, 1, Act::None, vb.pp("project"))?,
            residual: stride == 1 && c_in == c_out,
        })
    }
}

impl ModuleT for Bneck {
    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let mut y = match &self.expand {
            Some(e) => e.forward_t(x, train)?,
            None => x.clone(),
        };
        y = self.dw.forward_t(&y, train)?;
        if let Some(se) = &self.se {
            y = se.forward(&y)?;
        }
        y = self.project.forward_t(&y, train)?;
        if self.residual {
            y = (y + x)?;
        }
        Ok(y)
    }
}

type Block = Box<dyn ModuleT + Send + Sync>;

pub struct Encoder {
    kind: EncoderKind,
    dim: usize,
    blocks: Vec<Block>,
}

impl Encoder {
    pub fn new(spec: &ModelSpec, vb: VarBuilder) -> Result<Self> {
        spec.validate()?;
        let mut blocks: Vec<Block> = Vec::new();
        let b = |i: usize| vb.pp(format!("b{i}"));
        match spec.encoder {
            EncoderKind::TinyCnn => {
                let d = spec.representation_dim;
                let layers = [(3, 16, 4, 4, 0), (16, 32, 3, 2, 1), (32, 32, 3, 2, 1), (32, d, 3, 2, 1)];
                for (i, (ci, co, k, s, p)) in layers.into_iter().enumerate() {
                    blocks.push(Box::new(ConvBnAct::new(ci, co, k, s, p, 1, Act::Relu, b(i))?));
                }
            }
            EncoderKind::Resnet18 => {
                blocks.push(Box::new(ResStem {
                    conv: ConvBnAct::new(3, 64, 7, 2, 3, 1, Act::Relu, b(0))?,
                }));
                let mut c_in = 64;
                for (stage, c_out) in [64, 128, 256, 512].into_iter().enumerate() {
                    for j in 0..2 {
                        let stride = if stage > 0 && j == 0 { 2 } else { 1 };
                        let i = blocks.len();
                        blocks.push(Box::new(BasicBlock::new(c_in, c_out, stride, b(i))?));
                        c_in = c_out;
                    }
                }
            }
            EncoderKind::MobilenetV3Small => {
                blocks.push(Box::new(ConvBnAct::new(3, 16, 3, 2, 1, 1, Act::Hswish, b(0))?));
                use Act::{Hswish as HS, Relu as RE};
                let cfg = [
                    (3, 16, 16, true, RE, 2),
                    (3, 72, 24, false, RE, 2),
                    (3, 88, 24, false, RE, 1),
                    (5, 96, 40, true, HS, 2),
                    (5, 240, 40, true, HS, 1),
                    (5, 240, 40, true, HS, 1),
                    (5, 120, 48, true, HS, 1),
                    (5, 144, 48, true, HS, 1),
                    (5, 288, 96, true, HS, 2),
                    (5, 576, 96, true, HS, 1),
                    (5, 576, 96, true, HS, 1),
                ];
                let mut c_in = 16;
                for (k, exp, c_out, se, act, s) in cfg {
                    let i = blocks.len();
                    blocks.push(Box::new(Bneck::new(c_in, k, exp, c_out, se, act, s, b(i))?));
                    c_in = c_out;
                }
                let i = blocks.len();
                blocks.push(Box::new(ConvBnAct::new(96, 576, 1, 1, 0, 1, Act::Hswish, b(i))?));
            }
        }
        Ok(Self {
            kind: spec.encoder,
            dim: spec.representation_dim,
            blocks,
        })
    }

    pub fn kind(&self) -> EncoderKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Parameter-name prefix of block `i`.
    pub fn block_prefix(i: usize) -> String {
        format!("encoder.b{i}.")
    }

    /// Runs blocks `0..trainable_from` in inference mode without gradient
    /// tracking and the remaining blocks with `train`, then pools globally.
    pub fn forward_t(&self, x: &Tensor, train: bool, trainable_from: usize) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, block) in self.blocks.iter().enumerate() {
            if i < trainable_from {
                h = block.forward_t(&h, false)?;
                if i + 1 == trainable_from {
                    h = h.detach();
                }
            } else {
                h = block.forward_t(&h, train)?;
            }
        }
        Ok(h.mean_keepdim(3)?.mean_keepdim(2)?.flatten_from(1)?)
    }
}

pub struct Projector {
    layers: Vec<(Linear, Option<BatchNorm>)>,
}

impl Projector {
    pub const PREFIX: &'static str = "projector.";

    pub fn new(d_in: usize, widths: &[usize], vb: VarBuilder) -> Result<Self> {
        let mut layers = Vec::new();
        let mut d = d_in;
        for (i, &w) in widths.iter().enumerate() {
            let vb = vb.pp(format!("l{i}"));
            let lin = linear(d, w, vb.pp("fc"))?;
            let bn = if i + 1 < widths.len() {
                Some(batch_norm(w, 1e-5, vb.pp("bn"))?)
            } else {
                None
            };
            layers.push((lin, bn));
            d = w;
        }
        Ok(Self { layers })
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut h = x.clone();
        for (lin, bn) in &self.layers {
            h = lin.forward(&h)?;
            if let Some(bn) = bn {
                h = bn.forward_t(&h, train)?.relu()?;
            }
        }
        Ok(h)
    }
}

/// Encoder plus projector, as used during pretraining.
pub struct SslModel {
    spec: ModelSpec,
    store: ParamStore,
    encoder: Encoder,
    projector: Projector,
}

impl SslModel {
    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// Representations `(N, D_h)`.
    pub fn represent(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.encoder.forward_t(x, train, 0)
    }

    /// Projected embeddings `(N, last projector width)`.
    pub fn embed(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.projector.forward_t(&self.represent(x, train)?, train)
    }

    /// Restores a model from a checkpoint written by pretraining.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let spec = ModelSpec {
            pretrained: None,
            ..ckpt.model_spec.clone()
        };
        let model = build_model_random(&spec)?;
        model.store.load(&ckpt.tensors, false)?;
        Ok(model)
    }

    pub fn to_checkpoint(&self, step: u64, config: serde_json::Value) -> Result<Checkpoint> {
        Ok(Checkpoint {
            model_spec: self.spec.clone(),
            tensors: self.store.snapshot()?,
            step,
            config,
        })
    }
}

fn build_model_random(spec: &ModelSpec) -> Result<SslModel> {
    spec.validate()?;
    let store = ParamStore::new(spec.seed);
    let vb = store.var_builder();
    let encoder = Encoder::new(spec, vb.pp("encoder"))?;
    let projector = Projector::new(spec.representation_dim, &spec.projector_widths, vb.pp("projector"))?;
    Ok(SslModel {
        spec: spec.clone(),
        store,
        encoder,
        projector,
    })
}

/// Builds an encoder + projector with seeded initialization. A pretrained
/// checkpoint, when given, must provide every encoder tensor.
pub fn build_model(spec: &ModelSpec) -> Result<SslModel> {
    let model = build_model_random(spec)?;
    if let Some(path) = &spec.pretrained {
        let ckpt = Checkpoint::load(path)?;
        let encoder_only = ckpt
            .tensors
            .iter()
            .filter(|(k, _)| k.starts_with("encoder."))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let names: Vec<String> = model
            .store
            .vars()
            .into_iter()
            .map(|(k, _)| k)
            .filter(|k| k.starts_with("encoder."))
            .collect();
        for n in &names {
            if !ckpt.tensors.contains_key(n) {
                return Err(Error::Checkpoint(format!(
                    "{} does not match a {} encoder: missing {n}",
                    path.display(),
                    spec.encoder
                )));
            }
        }
        model.store.load(&encoder_only, true)?;
    }
    Ok(model)
}

/// Which encoder blocks train during fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unfreeze {
    /// Head only.
    None,
    All,
    /// The last `k` encoder blocks plus the head.
    LastK(usize),
}

impl Unfreeze {
    pub fn trainable_from(self, num_blocks: usize) -> usize {
        match self {
            Unfreeze::None => num_blocks,
            Unfreeze::All => 0,
            Unfreeze::LastK(k) => num_blocks.saturating_sub(k),
        }
    }
}

/// Encoder with a linear classification head: one logit for binary tasks,
/// one per class otherwise.
pub struct Classifier {
    store: ParamStore,
    encoder: Encoder,
    head: Linear,
    n_outputs: usize,
}

impl Classifier {
    pub const HEAD_PREFIX: &'static str = "head.";

    /// Copies the encoder weights of `model` into a fresh classifier whose
    /// head is initialized from `head_seed`.
    pub fn from_model(model: &SslModel, n_classes: usize, head_seed: u64) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::InvalidArgument(format!("need >= 2 classes, got {n_classes}")));
        }
        let n_outputs = if n_classes == 2 { 1 } else { n_classes };
        let store = ParamStore::new(head_seed);
        let vb = store.var_builder();
        let encoder = Encoder::new(model.spec(), vb.pp("encoder"))?;
        let head = linear(model.spec().representation_dim, n_outputs, vb.pp("head"))?;
        let encoder_tensors = model
            .store
            .snapshot()?
            .into_iter()
            .filter(|(k, _)| k.starts_with("encoder."))
            .collect();
        store.load(&encoder_tensors, true)?;
        Ok(Self {
            store,
            encoder,
            head,
            n_outputs,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.forward_t(x, false, 0)
    }

    pub fn head_forward(&self, features: &Tensor) -> Result<Tensor> {
        Ok(self.head.forward(features)?)
    }

    pub fn forward_t(&self, x: &Tensor, train: bool, unfreeze: Unfreeze) -> Result<Tensor> {
        let from = unfreeze.trainable_from(self.encoder.num_blocks());
        self.head_forward(&self.encoder.forward_t(x, train, from)?)
    }

    /// Prefixes of the parameters that train under `unfreeze`.
    pub fn trainable_prefixes(&self, unfreeze: Unfreeze) -> Vec<String> {
        let from = unfreeze.trainable_from(self.encoder.num_blocks());
        let mut p: Vec<String> = (from..self.encoder.num_blocks()).map(Encoder::block_prefix).collect();
        p.push(Self::HEAD_PREFIX.to_string());
        p
    }
}
