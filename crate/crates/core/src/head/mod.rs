//! RetinaNet-style one-stage head shared across pyramid levels, with
//! anchors, matching, the focal and smooth-L1 losses normalized per
//! feature map, decoding with per-class NMS, and a COCO-style AP evaluator.
//!
//! Output channels are anchor-major: channel `a·K + k` holds the logit of
//! class `k` for anchor `a`, and channel `4a + j` its `j`-th box delta.

pub mod anchors;
pub mod boxes;
pub mod eval;
pub mod infer;
pub mod loss;

pub use anchors::{AnchorConfig, LevelAnchors};
pub use boxes::{BoxCoder, Label};
pub use eval::{evaluate_ap, ApReport, GroundTruth};
pub use infer::{decode_and_nms, write_detections_csv, Detection, DetectionSet, InferConfig};
pub use loss::{detection_loss, LevelLoss, LossBreakdown, LossConfig};

use crate::analysis::flops::ConvRecord;
use crate::blocks::{Conv, GN_EPS};
use crate::error::{Error, Result};
use crate::params::{Binding, Init, ParamId, Registry};
use crate::pyramid::Pyramid;
use crate::tensor::{Scalar, Tape, Var};
use serde::{Deserialize, Serialize};

fn one() -> usize {
    1
}

fn default_classes() -> usize {
    80
}

fn default_prior() -> f64 {
    0.01
}

fn default_groups() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    /// Hidden layers per subnet.
    #[serde(rename = "C", default = "one")]
    pub hidden_layers: usize,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    /// Kernel size of the two output convolutions.
    #[serde(default = "one")]
    pub final_kernel: usize,
    /// Foreground prior that sets the initial classification bias.
    #[serde(default = "default_prior")]
    pub prior: f64,
    #[serde(default = "default_groups")]
    pub norm_groups: usize,
}

impl Default for HeadSpec {
    fn default() -> Self {
        HeadSpec {
            hidden_layers: 1,
            num_classes: default_classes(),
            final_kernel: 1,
            prior: default_prior(),
            norm_groups: default_groups(),
        }
    }
}

impl HeadSpec {
    pub fn with_layers(mut self, c: usize) -> Self {
        self.hidden_layers = c;
        self
    }

    pub fn with_classes(mut self, k: usize) -> Self {
        self.num_classes = k;
        self
    }

    pub fn with_final_kernel(mut self, k: usize) -> Self {
        self.final_kernel = k;
        self
    }

    pub fn validate(&self, feature_size: usize) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::config("head needs at least one class"));
        }
        if self.final_kernel.is_multiple_of(2) {
            return Err(Error::config("head final kernel must be odd"));
        }
        if !(self.prior > 0.0 && self.prior < 1.0) {
            return Err(Error::config("head prior must lie in (0, 1)"));
        }
        if self.norm_groups == 0 || !feature_size.is_multiple_of(self.norm_groups) {
            return Err(Error::config(format!(
                "head feature size {feature_size} not divisible into {} norm groups",
                self.norm_groups
            )));
        }
        Ok(())
    }

    /// Closed-form parameter count for `feature_size` input channels and
    /// `anchors` anchors per location.
    pub fn param_count(&self, feature_size: usize, anchors: usize) -> usize {
        let hidden = Conv::param_count(feature_size, feature_size, 3) + 2 * feature_size;
        let k = self.final_kernel;
        2 * self.hidden_layers * hidden
            + Conv::param_count(feature_size, anchors * self.num_classes, k)
            + Conv::param_count(feature_size, anchors * 4, k)
    }
}

/// `conv3×3 → group_norm → relu`.
#[derive(Clone, Debug)]
struct HiddenLayer {
    conv: Conv,
    gamma: ParamId,
    beta: ParamId,
    groups: usize,
}

impl HiddenLayer {
    fn register(reg: &mut Registry, prefix: &str, c: usize, groups: usize) -> Result<Self> {
        let conv = Conv::register(reg, &format!("{prefix}.conv"), c, c, 3, 1)?;
        let (gamma, beta) = reg.norm(&format!("{prefix}.norm"), c)?;
        Ok(HiddenLayer {
            conv,
            gamma,
            beta,
            groups,
        })
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, x: Var) -> Result<Var> {
        let y = self.conv.forward(tape, p, x)?;
        let n = tape.group_norm(y, p[self.gamma], p[self.beta], self.groups, GN_EPS)?;
        Ok(tape.relu(n))
    }
}

#[derive(Clone, Debug)]
struct Subnet {
    hidden: Vec<HiddenLayer>,
    out: Conv,
}

impl Subnet {
    fn register(reg: &mut Registry, prefix: &str, spec: &HeadSpec, feature: usize, out_c: usize) -> Result<Self> {
        let hidden = (0..spec.hidden_layers)
            .map(|i| HiddenLayer::register(reg, &format!("{prefix}.hidden{i}"), feature, spec.norm_groups))
            .collect::<Result<Vec<_>>>()?;
        let out = Conv::register(reg, &format!("{prefix}.out"), feature, out_c, spec.final_kernel, 1)?;
        Ok(Subnet { hidden, out })
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, mut x: Var) -> Result<Var> {
        for h in &self.hidden {
            x = h.forward(tape, p, x)?;
        }
        self.out.forward(tape, p, x)
    }

    fn trace(&self, h: usize, w: usize, out: &mut Vec<ConvRecord>) -> Result<()> {
        for l in &self.hidden {
            l.conv.trace(h, w, out)?;
        }
        self.out.trace(h, w, out).map(|_| ())
    }
}

/// Raw head outputs of one level.
#[derive(Clone, Copy, Debug)]
pub struct LevelOutput {
    pub cls: Var,
    pub boxes: Var,
}

#[derive(Clone, Debug)]
pub struct Head {
    pub spec: HeadSpec,
    pub feature_size: usize,
    pub anchors: AnchorConfig,
    cls: Subnet,
    reg: Subnet,
}

impl Head {
    pub fn register(reg: &mut Registry, prefix: &str, spec: &HeadSpec, feature_size: usize) -> Result<Self> {
        spec.validate(feature_size)?;
        let anchors = AnchorConfig::default();
        let a = anchors.per_location();
        let cls = Subnet::register(reg, &format!("{prefix}.cls"), spec, feature_size, a * spec.num_classes)?;
        let bias = -((1.0 - spec.prior) / spec.prior).ln();
        reg.set_init(cls.out.bias, Init::Constant(bias));
        let boxes = Subnet::register(reg, &format!("{prefix}.box"), spec, feature_size, a * 4)?;
        Ok(Head {
            spec: spec.clone(),
            feature_size,
            anchors,
            cls,
            reg: boxes,
        })
    }

    pub fn cls_bias(&self) -> ParamId {
        self.cls.out.bias
    }

    pub fn final_params(&self) -> [ParamId; 4] {
        [
            self.cls.out.weight,
            self.cls.out.bias,
            self.reg.out.weight,
            self.reg.out.bias,
        ]
    }

    /// Applies the shared subnets to every level.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Binding,
        pyr: &Pyramid<Var>,
    ) -> Result<Pyramid<LevelOutput>> {
        let mut outs = Vec::with_capacity(pyr.len());
        for (_, &x) in pyr.iter() {
            let c = tape.shape(x).c;
            if c != self.feature_size {
                return Err(Error::ChannelMismatch {
                    op: "head",
                    expected: self.feature_size,
                    got: c,
                });
            }
            let cls = self.cls.forward(tape, p, x)?;
            let boxes = self.reg.forward(tape, p, x)?;
            outs.push(LevelOutput { cls, boxes });
        }
        Ok(Pyramid::new(pyr.min_level(), outs))
    }

    pub fn trace(&self, sizes: &[(usize, usize)], out: &mut Vec<ConvRecord>) -> Result<()> {
        for &(h, w) in sizes {
            self.cls.trace(h, w, out)?;
            self.reg.trace(h, w, out)?;
        }
        Ok(())
    }
}
