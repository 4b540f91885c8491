//! Backbones emitting C3, C4 and C5.
//!
//! The ResNet-50/101 shapes exist for parameter and FLOP accounting only;
//! they register every tensor of the torchvision v1.5 trunk (stride on the
//! 3×3 convolution, affine norm pairs per convolution) but cannot run. The
//! tiny backbone is a small trainable network built from the same
//! `group_norm → relu → conv` nodes as the cores.

use crate::analysis::flops::ConvRecord;
use crate::blocks::{Conv, ConvNode};
use crate::error::{Error, Result};
use crate::params::{Binding, Registry};
use crate::tensor::kernels::conv_out_size;
use crate::tensor::{Scalar, Tape, Var};
use serde::{Deserialize, Serialize};

/// Parameters excluded from optimizer updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreezeSet {
    /// Everything trains.
    #[default]
    None,
    /// Stem, first stage and every normalization layer.
    Standard,
    /// The whole backbone.
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResNetDepth {
    #[serde(rename = "50")]
    R50,
    #[serde(rename = "101")]
    R101,
}

impl ResNetDepth {
    pub fn stage_depths(self) -> [usize; 4] {
        match self {
            ResNetDepth::R50 => [3, 4, 6, 3],
            ResNetDepth::R101 => [3, 4, 23, 3],
        }
    }
}

fn default_widths() -> [usize; 3] {
    [64, 128, 256]
}

fn two() -> usize {
    2
}

fn default_stem() -> usize {
    32
}

fn default_groups() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TinySpec {
    /// Channels of C3, C4 and C5.
    #[serde(default = "default_widths")]
    pub widths: [usize; 3],
    /// Residual blocks per stage.
    #[serde(default = "two")]
    pub blocks: usize,
    #[serde(default = "default_stem")]
    pub stem_width: usize,
    #[serde(default = "default_groups")]
    pub norm_groups: usize,
    #[serde(default)]
    pub freeze: FreezeSet,
}

impl Default for TinySpec {
    fn default() -> Self {
        TinySpec {
            widths: default_widths(),
            blocks: two(),
            stem_width: default_stem(),
            norm_groups: default_groups(),
            freeze: FreezeSet::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackboneConfig {
    ResnetShape {
        depth: ResNetDepth,
        #[serde(default = "standard_freeze")]
        freeze: FreezeSet,
    },
    Tiny(TinySpec),
}

fn standard_freeze() -> FreezeSet {
    FreezeSet::Standard
}

/// Backbone entry of a model file: a bare name (`"resnet50-shape"`,
/// `"resnet101-shape"`, `"tiny"`) or a tagged object.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BackboneEntry", into = "BackboneEntry")]
pub struct BackboneSpec(pub BackboneConfig);

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum BackboneEntry {
    Name(String),
    Config(BackboneConfig),
}

impl TryFrom<BackboneEntry> for BackboneSpec {
    type Error = Error;

    fn try_from(e: BackboneEntry) -> Result<Self> {
        match e {
            BackboneEntry::Config(c) => Ok(BackboneSpec(c)),
            BackboneEntry::Name(n) => BackboneSpec::from_name(&n),
        }
    }
}

impl From<BackboneSpec> for BackboneEntry {
    fn from(s: BackboneSpec) -> Self {
        match &s.0 {
            BackboneConfig::ResnetShape {
                depth: ResNetDepth::R50,
                freeze: FreezeSet::Standard,
            } => BackboneEntry::Name("resnet50-shape".into()),
            BackboneConfig::ResnetShape {
                depth: ResNetDepth::R101,
                freeze: FreezeSet::Standard,
            } => BackboneEntry::Name("resnet101-shape".into()),
            BackboneConfig::Tiny(t) if *t == TinySpec::default() => BackboneEntry::Name("tiny".into()),
            _ => BackboneEntry::Config(s.0),
        }
    }
}

impl BackboneSpec {
    pub fn resnet50() -> Self {
        BackboneSpec(BackboneConfig::ResnetShape {
            depth: ResNetDepth::R50,
            freeze: FreezeSet::Standard,
        })
    }

    pub fn resnet101() -> Self {
        BackboneSpec(BackboneConfig::ResnetShape {
            depth: ResNetDepth::R101,
            freeze: FreezeSet::Standard,
        })
    }

    pub fn tiny(spec: TinySpec) -> Self {
        BackboneSpec(BackboneConfig::Tiny(spec))
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "resnet50-shape" => Ok(Self::resnet50()),
            "resnet101-shape" => Ok(Self::resnet101()),
            "tiny" => Ok(Self::tiny(TinySpec::default())),
            other => Err(Error::config(format!("unknown backbone `{other}`"))),
        }
    }

    pub fn label(&self) -> String {
        match &self.0 {
            BackboneConfig::ResnetShape {
                depth: ResNetDepth::R50,
                ..
            } => "R50".into(),
            BackboneConfig::ResnetShape {
                depth: ResNetDepth::R101,
                ..
            } => "R101".into(),
            BackboneConfig::Tiny(_) => "tiny".into(),
        }
    }

    pub fn out_channels(&self) -> [usize; 3] {
        match &self.0 {
            BackboneConfig::ResnetShape { .. } => [512, 1024, 2048],
            BackboneConfig::Tiny(t) => t.widths,
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self.0, BackboneConfig::Tiny(_))
    }
}

impl std::fmt::Display for ResNetDepth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ResNetDepth::R50 => f.write_str("50"),
            ResNetDepth::R101 => f.write_str("101"),
        }
    }
}

/// Torchvision-style bottleneck trunk, registered for counting.
#[derive(Clone, Debug)]
pub struct ResNetShape {
    pub depth: ResNetDepth,
}

const RESNET_WIDTHS: [usize; 4] = [64, 128, 256, 512];

fn conv_bn(reg: &mut Registry, prefix: &str, in_c: usize, out_c: usize, k: usize) -> Result<()> {
    reg.conv(&format!("{prefix}.conv"), out_c, in_c, k, false)?;
    reg.norm(&format!("{prefix}.bn"), out_c)?;
    Ok(())
}

impl ResNetShape {
    fn register(reg: &mut Registry, depth: ResNetDepth) -> Result<Self> {
        conv_bn(reg, "backbone.stem", 3, 64, 7)?;
        let mut in_c = 64;
        for (s, (&blocks, &width)) in depth.stage_depths().iter().zip(&RESNET_WIDTHS).enumerate() {
            let out_c = width * 4;
            for b in 0..blocks {
                let p = format!("backbone.res{}.block{b}", s + 2);
                conv_bn(reg, &format!("{p}.conv1"), in_c, width, 1)?;
                conv_bn(reg, &format!("{p}.conv2"), width, width, 3)?;
                conv_bn(reg, &format!("{p}.conv3"), width, out_c, 1)?;
                if b == 0 {
                    conv_bn(reg, &format!("{p}.downsample"), in_c, out_c, 1)?;
                }
                in_c = out_c;
            }
        }
        Ok(ResNetShape { depth })
    }

    fn freeze(reg: &mut Registry, set: FreezeSet) {
        match set {
            FreezeSet::None => {}
            FreezeSet::All => reg.freeze_where(|d| d.name.starts_with("backbone.")),
            FreezeSet::Standard => reg.freeze_where(|d| {
                d.name.starts_with("backbone.stem.")
                    || d.name.starts_with("backbone.res2.")
                    || (d.name.starts_with("backbone.") && d.name.contains(".bn."))
            }),
        }
    }

    fn trace(&self, h: usize, w: usize, out: &mut Vec<ConvRecord>) -> Result<[(usize, usize); 3]> {
        let mut rec = |in_c, out_c, kernel, stride, (h, w): (usize, usize)| -> Result<(usize, usize)> {
            let pad = kernel / 2;
            let size = |len| conv_out_size(len, kernel, stride, pad).ok_or(Error::EmptyOutput { op: "backbone" });
            let (oh, ow) = (size(h)?, size(w)?);
            out.push(ConvRecord {
                in_c,
                out_c,
                kernel,
                stride,
                out_h: oh,
                out_w: ow,
            });
            Ok((oh, ow))
        };
        let stem = rec(3, 64, 7, 2, (h, w))?;
        let pool = |len: usize| conv_out_size(len, 3, 2, 1).ok_or(Error::EmptyOutput { op: "backbone" });
        let mut size = (pool(stem.0)?, pool(stem.1)?);
        let mut in_c = 64;
        let mut outs = Vec::new();
        for (s, (&blocks, &width)) in self.depth.stage_depths().iter().zip(&RESNET_WIDTHS).enumerate() {
            let out_c = width * 4;
            let stride = if s == 0 { 1 } else { 2 };
            for b in 0..blocks {
                let st = if b == 0 { stride } else { 1 };
                let a = rec(in_c, width, 1, 1, size)?;
                let m = rec(width, width, 3, st, a)?;
                let e = rec(width, out_c, 1, 1, m)?;
                if b == 0 {
                    rec(in_c, out_c, 1, st, size)?;
                }
                size = e;
                in_c = out_c;
            }
            outs.push(size);
        }
        Ok([outs[1], outs[2], outs[3]])
    }
}

#[derive(Clone, Debug)]
struct BasicBlock {
    a: ConvNode,
    b: ConvNode,
}

#[derive(Clone, Debug)]
struct TinyStage {
    transition: Option<ConvNode>,
    blocks: Vec<BasicBlock>,
}

/// Stride-32 network: a plain 3×3 stride-2 convolution, two stride-2 nodes,
/// then three stages of residual blocks (each later stage opens with a
/// stride-2 node) emitting C3, C4 and C5.
#[derive(Clone, Debug)]
pub struct TinyBackbone {
    pub spec: TinySpec,
    stem: Conv,
    stem_nodes: [ConvNode; 2],
    stages: Vec<TinyStage>,
}

impl TinyBackbone {
    fn register(reg: &mut Registry, spec: &TinySpec) -> Result<Self> {
        if spec.blocks == 0 {
            return Err(Error::config("tiny backbone needs at least one block per stage"));
        }
        let g = spec.norm_groups;
        let [w3, w4, w5] = spec.widths;
        let stem = Conv::register(reg, "backbone.stem.conv", 3, spec.stem_width, 3, 2)?;
        let n1 = ConvNode::register(reg, "backbone.stem.node1", spec.stem_width, w3, 3, 2, g)?;
        let n2 = ConvNode::register(reg, "backbone.stem.node2", w3, w3, 3, 2, g)?;
        let mut stages = Vec::new();
        let mut in_c = w3;
        for (s, &width) in [w3, w4, w5].iter().enumerate() {
            let p = format!("backbone.stage{}", s + 1);
            let transition = if s == 0 {
                None
            } else {
                Some(ConvNode::register(reg, &format!("{p}.trans"), in_c, width, 3, 2, g)?)
            };
            let blocks = (0..spec.blocks)
                .map(|j| {
                    Ok(BasicBlock {
                        a: ConvNode::register(reg, &format!("{p}.block{j}.a"), width, width, 3, 1, g)?,
                        b: ConvNode::register(reg, &format!("{p}.block{j}.b"), width, width, 3, 1, g)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(TinyStage { transition, blocks });
            in_c = width;
        }
        Ok(TinyBackbone {
            spec: spec.clone(),
            stem,
            stem_nodes: [n1, n2],
            stages,
        })
    }

    /// Closed-form parameter count.
    pub fn param_count(spec: &TinySpec) -> usize {
        let [w3, w4, w5] = spec.widths;
        let mut n = Conv::param_count(3, spec.stem_width, 3)
            + ConvNode::param_count(spec.stem_width, w3, 3)
            + ConvNode::param_count(w3, w3, 3);
        n += ConvNode::param_count(w3, w4, 3) + ConvNode::param_count(w4, w5, 3);
        for w in [w3, w4, w5] {
            n += spec.blocks * 2 * ConvNode::param_count(w, w, 3);
        }
        n
    }

    fn freeze(reg: &mut Registry, set: FreezeSet) {
        match set {
            FreezeSet::None => {}
            FreezeSet::All => reg.freeze_where(|d| d.name.starts_with("backbone.")),
            FreezeSet::Standard => reg.freeze_where(|d| {
                d.name.starts_with("backbone.stem.")
                    || d.name.starts_with("backbone.stage1.")
                    || (d.name.starts_with("backbone.") && d.name.contains(".norm."))
            }),
        }
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, image: Var) -> Result<[Var; 3]> {
        let s = tape.shape(image);
        if s.c != 3 {
            return Err(Error::ChannelMismatch {
                op: "backbone",
                expected: 3,
                got: s.c,
            });
        }
        if !s.h.is_multiple_of(32) || !s.w.is_multiple_of(32) || s.h == 0 || s.w == 0 {
            return Err(Error::invalid(
                "backbone",
                format!("image size {}x{} is not a positive multiple of 32", s.h, s.w),
            ));
        }
        let mut x = self.stem.forward(tape, p, image)?;
        for node in &self.stem_nodes {
            x = node.forward(tape, p, x)?;
        }
        let mut outs = Vec::with_capacity(3);
        for stage in &self.stages {
            if let Some(t) = &stage.transition {
                x = t.forward(tape, p, x)?;
            }
            for b in &stage.blocks {
                let a = b.a.forward(tape, p, x)?;
                let r = b.b.forward(tape, p, a)?;
                x = tape.add(x, r)?;
            }
            outs.push(x);
        }
        Ok([outs[0], outs[1], outs[2]])
    }

    fn trace(&self, h: usize, w: usize, out: &mut Vec<ConvRecord>) -> Result<[(usize, usize); 3]> {
        let mut size = self.stem.trace(h, w, out)?;
        for node in &self.stem_nodes {
            size = node.trace(size.0, size.1, out)?;
        }
        let mut outs = Vec::with_capacity(3);
        for stage in &self.stages {
            if let Some(t) = &stage.transition {
                size = t.trace(size.0, size.1, out)?;
            }
            for b in &stage.blocks {
                b.a.trace(size.0, size.1, out)?;
                b.b.trace(size.0, size.1, out)?;
            }
            outs.push(size);
        }
        Ok([outs[0], outs[1], outs[2]])
    }
}

#[derive(Clone, Debug)]
pub enum Backbone {
    ResNet(ResNetShape),
    Tiny(Box<TinyBackbone>),
}

impl Backbone {
    /// Registers the backbone's parameters under `backbone.` and applies
    /// its freeze set.
    pub fn register(reg: &mut Registry, spec: &BackboneSpec) -> Result<Self> {
        match &spec.0 {
            BackboneConfig::ResnetShape { depth, freeze } => {
                let b = ResNetShape::register(reg, *depth)?;
                ResNetShape::freeze(reg, *freeze);
                Ok(Backbone::ResNet(b))
            }
            BackboneConfig::Tiny(t) => {
                let b = TinyBackbone::register(reg, t)?;
                TinyBackbone::freeze(reg, t.freeze);
                Ok(Backbone::Tiny(Box::new(b)))
            }
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, image: Var) -> Result<[Var; 3]> {
        match self {
            Backbone::Tiny(b) => b.forward(tape, p, image),
            Backbone::ResNet(r) => Err(Error::config(format!(
                "resnet{}-shape is a counting-only backbone and cannot run",
                r.depth
            ))),
        }
    }

    /// Convolutions executed on an `h × w` image; returns C3–C5 sizes.
    pub fn trace(&self, h: usize, w: usize, out: &mut Vec<ConvRecord>) -> Result<[(usize, usize); 3]> {
        match self {
            Backbone::Tiny(b) => b.trace(h, w, out),
            Backbone::ResNet(r) => r.trace(h, w, out),
        }
    }
}
