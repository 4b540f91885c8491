//! Building blocks shared by every core: the pre-normalized convolution
//! node, the bottleneck self-processing layer, the top-down and bottom-up
//! residual operations, and the stem that turns backbone maps C3–C5 into
//! the initial P3–P7 pyramid.

use crate::analysis::flops::ConvRecord;
use crate::error::{Error, Result};
use crate::params::{Binding, ParamId, Registry};
use crate::pyramid::Pyramid;
use crate::tensor::kernels::conv_out_size;
use crate::tensor::{Scalar, Tape, Var};

pub const GN_EPS: f64 = 1e-5;

fn expect_channels<T: Scalar>(tape: &Tape<T>, x: Var, op: &'static str, expected: usize) -> Result<()> {
    let got = tape.shape(x).c;
    if got != expected {
        return Err(Error::ChannelMismatch { op, expected, got });
    }
    Ok(())
}

/// Convolution with bias, no normalization or activation. Padding is
/// `kernel / 2`.
#[derive(Clone, Debug)]
pub struct Conv {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv {
    pub fn register(
        reg: &mut Registry,
        prefix: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        let (weight, bias) = reg.conv(prefix, out_c, in_c, kernel, true)?;
        Ok(Conv {
            in_c,
            out_c,
            kernel,
            stride,
            weight,
            bias: bias.expect("bias requested"),
        })
    }

    pub fn param_count(in_c: usize, out_c: usize, kernel: usize) -> usize {
        out_c * in_c * kernel * kernel + out_c
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, x: Var) -> Result<Var> {
        tape.conv2d(x, p[self.weight], Some(p[self.bias]), self.stride, self.kernel / 2)
    }

    pub fn out_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let pad = self.kernel / 2;
        let err = || Error::EmptyOutput { op: "conv2d" };
        Ok((
            conv_out_size(h, self.kernel, self.stride, pad).ok_or_else(err)?,
            conv_out_size(w, self.kernel, self.stride, pad).ok_or_else(err)?,
        ))
    }

    pub fn trace(&self, h: usize, w: usize, out: &mut Vec<ConvRecord>) -> Result<(usize, usize)> {
        let (oh, ow) = self.out_size(h, w)?;
        out.push(ConvRecord {
            in_c: self.in_c,
            out_c: self.out_c,
            kernel: self.kernel,
            stride: self.stride,
            out_h: oh,
            out_w: ow,
        });
        Ok((oh, ow))
    }
}

/// `group_norm → relu → conv`, the pink node of every residual branch.
#[derive(Clone, Debug)]
pub struct ConvNode {
    pub conv: Conv,
    pub groups: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl ConvNode {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        reg: &mut Registry,
        prefix: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
    ) -> Result<Self> {
        if groups == 0 || !in_c.is_multiple_of(groups) {
            return Err(Error::config(format!(
                "{prefix}: {in_c} channels not divisible into {groups} norm groups"
            )));
        }
        let (gamma, beta) = reg.norm(&format!("{prefix}.norm"), in_c)?;
        let conv = Conv::register(reg, &format!("{prefix}.conv"), in_c, out_c, kernel, stride)?;
        Ok(ConvNode {
            conv,
            groups,
            gamma,
            beta,
        })
    }

    /// `2·in_c + out_c·in_c·k² + out_c`.
    pub fn param_count(in_c: usize, out_c: usize, kernel: usize) -> usize {
        2 * in_c + Conv::param_count(in_c, out_c, kernel)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, x: Var) -> Result<Var> {
        let n = tape.group_norm(x, p[self.gamma], p[self.beta], self.groups, GN_EPS)?;
        let a = tape.relu(n);
        self.conv.forward(tape, p, a)
    }

    pub fn final_params(&self) -> [ParamId; 2] {
        [self.conv.weight, self.conv.bias]
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.gamma, self.beta, self.conv.weight, self.conv.bias]
    }

    pub fn trace(&self, h: usize, w: usize, out: &mut Vec<ConvRecord>) -> Result<(usize, usize)> {
        self.conv.trace(h, w, out)
    }
}

/// 1×1 reduce, 3×3 (with the given stride), 1×1 expand.
#[derive(Clone, Debug)]
pub struct Squeeze {
    pub reduce: ConvNode,
    pub mid: ConvNode,
    pub expand: ConvNode,
}

impl Squeeze {
    fn register(
        reg: &mut Registry,
        prefix: &str,
        feature: usize,
        hidden: usize,
        stride: usize,
        groups: usize,
    ) -> Result<Self> {
        Ok(Squeeze {
            reduce: ConvNode::register(reg, &format!("{prefix}.reduce"), feature, hidden, 1, 1, groups)?,
            mid: ConvNode::register(reg, &format!("{prefix}.mid"), hidden, hidden, 3, stride, groups)?,
            expand: ConvNode::register(reg, &format!("{prefix}.expand"), hidden, feature, 1, 1, groups)?,
        })
    }

    fn param_count(feature: usize, hidden: usize) -> usize {
        ConvNode::param_count(feature, hidden, 1)
            + ConvNode::param_count(hidden, hidden, 3)
            + ConvNode::param_count(hidden, feature, 1)
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, x: Var) -> Result<Var> {
        let r = self.reduce.forward(tape, p, x)?;
        let m = self.mid.forward(tape, p, r)?;
        self.expand.forward(tape, p, m)
    }

    fn params(&self) -> Vec<ParamId> {
        [&self.reduce, &self.mid, &self.expand]
            .iter()
            .flat_map(|n| n.params())
            .collect()
    }

    fn trace(&self, h: usize, w: usize, out: &mut Vec<ConvRecord>) -> Result<(usize, usize)> {
        let (h, w) = self.reduce.trace(h, w, out)?;
        let (h, w) = self.mid.trace(h, w, out)?;
        self.expand.trace(h, w, out)
    }
}

/// Self-processing layer: `p + expand(mid(reduce(p)))`.
#[derive(Clone, Debug)]
pub struct BottleneckBlock {
    pub feature_size: usize,
    pub hidden_size: usize,
    pub branch: Squeeze,
}

impl BottleneckBlock {
    pub fn register(
        reg: &mut Registry,
        prefix: &str,
        feature_size: usize,
        hidden_size: usize,
        groups: usize,
    ) -> Result<Self> {
        Ok(BottleneckBlock {
            feature_size,
            hidden_size,
            branch: Squeeze::register(reg, prefix, feature_size, hidden_size, 1, groups)?,
        })
    }

    pub fn param_count(feature_size: usize, hidden_size: usize) -> usize {
        Squeeze::param_count(feature_size, hidden_size)
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, x: Var) -> Result<Var> {
        expect_channels(tape, x, "bottleneck", self.feature_size)?;
        let r = self.branch.forward(tape, p, x)?;
        tape.add(x, r)
    }

    pub fn residual_final(&self) -> [ParamId; 2] {
        self.branch.expand.final_params()
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.branch.params()
    }

    pub fn trace(&self, h: usize, w: usize, out: &mut Vec<ConvRecord>) -> Result<()> {
        self.branch.trace(h, w, out).map(|_| ())
    }
}

/// `P_l + resize(projection(P_{l+1}), size(P_l))`.
#[derive(Clone, Debug)]
pub struct TopDownOp {
    pub feature_size: usize,
    pub projection: ConvNode,
}

impl TopDownOp {
    pub fn register(reg: &mut Registry, prefix: &str, feature_size: usize, groups: usize) -> Result<Self> {
        Ok(TopDownOp {
            feature_size,
            projection: ConvNode::register(reg, &format!("{prefix}.proj"), feature_size, feature_size, 1, 1, groups)?,
        })
    }

    pub fn param_count(feature_size: usize) -> usize {
        ConvNode::param_count(feature_size, feature_size, 1)
    }

    /// Residual branch alone: the projected, resized coarser map.
    pub fn residual<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, p_l: Var, p_coarse: Var) -> Result<Var> {
        expect_channels(tape, p_l, "top_down", self.feature_size)?;
        expect_channels(tape, p_coarse, "top_down", self.feature_size)?;
        let target = tape.shape(p_l);
        let proj = self.projection.forward(tape, p, p_coarse)?;
        tape.resize(proj, target.h, target.w)
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, p_l: Var, p_coarse: Var) -> Result<Var> {
        let r = self.residual(tape, p, p_l, p_coarse)?;
        tape.add(p_l, r)
    }

    pub fn residual_final(&self) -> [ParamId; 2] {
        self.projection.final_params()
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.projection.params().to_vec()
    }

    pub fn trace(&self, coarse: (usize, usize), out: &mut Vec<ConvRecord>) -> Result<()> {
        self.projection.trace(coarse.0, coarse.1, out).map(|_| ())
    }
}

/// `P_l + expand(mid_stride2(reduce(P_{l-1})))`.
#[derive(Clone, Debug)]
pub struct BottomUpOp {
    pub feature_size: usize,
    pub branch: Squeeze,
}

impl BottomUpOp {
    pub fn register(
        reg: &mut Registry,
        prefix: &str,
        feature_size: usize,
        hidden_size: usize,
        groups: usize,
    ) -> Result<Self> {
        Ok(BottomUpOp {
            feature_size,
            branch: Squeeze::register(reg, prefix, feature_size, hidden_size, 2, groups)?,
        })
    }

    pub fn param_count(feature_size: usize, hidden_size: usize) -> usize {
        Squeeze::param_count(feature_size, hidden_size)
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, p_l: Var, p_fine: Var) -> Result<Var> {
        expect_channels(tape, p_l, "bottom_up", self.feature_size)?;
        expect_channels(tape, p_fine, "bottom_up", self.feature_size)?;
        let (sl, sf) = (tape.shape(p_l), tape.shape(p_fine));
        let reduced = (conv_out_size(sf.h, 3, 2, 1), conv_out_size(sf.w, 3, 2, 1));
        if reduced != (Some(sl.h), Some(sl.w)) {
            return Err(Error::invalid(
                "bottom_up",
                format!(
                    "finer map {}x{} does not reduce to target {}x{}",
                    sf.h, sf.w, sl.h, sl.w
                ),
            ));
        }
        let r = self.branch.forward(tape, p, p_fine)?;
        tape.add(p_l, r)
    }

    pub fn residual_final(&self) -> [ParamId; 2] {
        self.branch.expand.final_params()
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.branch.params()
    }

    pub fn trace(&self, fine: (usize, usize), out: &mut Vec<ConvRecord>) -> Result<()> {
        self.branch.trace(fine.0, fine.1, out).map(|_| ())
    }
}

/// Weighted fusion node of the BiFPN baseline: inputs are resized to the
/// target resolution, combined by fast normalized fusion and passed through
/// a bottleneck-shaped stack of nodes (no skip connection).
#[derive(Clone, Debug)]
pub struct FusionNode {
    pub feature_size: usize,
    pub arity: usize,
    pub weights: ParamId,
    pub eps: f64,
    pub branch: Squeeze,
}

impl FusionNode {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        reg: &mut Registry,
        prefix: &str,
        arity: usize,
        feature_size: usize,
        hidden_size: usize,
        groups: usize,
        eps: f64,
    ) -> Result<Self> {
        if arity < 2 {
            return Err(Error::config(format!("{prefix}: fusion needs at least 2 inputs")));
        }
        let weights = reg.register(
            format!("{prefix}.fusion.weight"),
            crate::tensor::Shape::vector(arity),
            crate::params::Init::Constant(1.0),
        )?;
        Ok(FusionNode {
            feature_size,
            arity,
            weights,
            eps,
            branch: Squeeze::register(reg, prefix, feature_size, hidden_size, 1, groups)?,
        })
    }

    pub fn param_count(arity: usize, feature_size: usize, hidden_size: usize) -> usize {
        arity + Squeeze::param_count(feature_size, hidden_size)
    }

    pub fn apply<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Binding,
        inputs: &[Var],
        target: (usize, usize),
    ) -> Result<Var> {
        if inputs.len() != self.arity {
            return Err(Error::invalid(
                "fusion",
                format!("{} inputs for a node of arity {}", inputs.len(), self.arity),
            ));
        }
        let mut resized = Vec::with_capacity(inputs.len());
        for &x in inputs {
            expect_channels(tape, x, "fusion", self.feature_size)?;
            resized.push(tape.resize(x, target.0, target.1)?);
        }
        let fused = tape.fuse(&resized, p[self.weights], self.eps)?;
        self.branch.forward(tape, p, fused)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = vec![self.weights];
        ids.extend(self.branch.params());
        ids
    }

    pub fn trace(&self, target: (usize, usize), out: &mut Vec<ConvRecord>) -> Result<()> {
        self.branch.trace(target.0, target.1, out).map(|_| ())
    }
}

/// Linear 1×1 laterals for C3–C5 plus two stride-2 3×3 convolutions on C5
/// (ReLU in between) for P6 and P7.
#[derive(Clone, Debug)]
pub struct PyramidStem {
    pub feature_size: usize,
    pub laterals: [Conv; 3],
    pub p6: Conv,
    pub p7: Conv,
}

impl PyramidStem {
    pub fn register(reg: &mut Registry, prefix: &str, in_channels: [usize; 3], feature_size: usize) -> Result<Self> {
        let lateral = |reg: &mut Registry, i: usize| {
            Conv::register(
                reg,
                &format!("{prefix}.lateral{}", i + 3),
                in_channels[i],
                feature_size,
                1,
                1,
            )
        };
        let laterals = [lateral(reg, 0)?, lateral(reg, 1)?, lateral(reg, 2)?];
        let p6 = Conv::register(reg, &format!("{prefix}.p6"), in_channels[2], feature_size, 3, 2)?;
        let p7 = Conv::register(reg, &format!("{prefix}.p7"), feature_size, feature_size, 3, 2)?;
        Ok(PyramidStem {
            feature_size,
            laterals,
            p6,
            p7,
        })
    }

    pub fn param_count(in_channels: [usize; 3], feature_size: usize) -> usize {
        in_channels
            .iter()
            .map(|&c| Conv::param_count(c, feature_size, 1))
            .sum::<usize>()
            + Conv::param_count(in_channels[2], feature_size, 3)
            + Conv::param_count(feature_size, feature_size, 3)
    }

    pub fn build<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, c3: Var, c4: Var, c5: Var) -> Result<Pyramid<Var>> {
        let mut maps = Vec::with_capacity(5);
        for (conv, c) in self.laterals.iter().zip([c3, c4, c5]) {
            expect_channels(tape, c, "stem", conv.in_c)?;
            maps.push(conv.forward(tape, p, c)?);
        }
        let p6 = self.p6.forward(tape, p, c5)?;
        let a = tape.relu(p6);
        let p7 = self.p7.forward(tape, p, a)?;
        maps.push(p6);
        maps.push(p7);
        Ok(Pyramid::new(3, maps))
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.laterals
            .iter()
            .chain([&self.p6, &self.p7])
            .flat_map(|c| [c.weight, c.bias])
            .collect()
    }

    /// Records the stem convolutions given C3–C5 spatial sizes.
    pub fn trace(&self, sizes: [(usize, usize); 3], out: &mut Vec<ConvRecord>) -> Result<Vec<(usize, usize)>> {
        let mut levels = Vec::with_capacity(5);
        for (conv, (h, w)) in self.laterals.iter().zip(sizes) {
            levels.push(conv.trace(h, w, out)?);
        }
        let p6 = self.p6.trace(sizes[2].0, sizes[2].1, out)?;
        let p7 = self.p7.trace(p6.0, p6.1, out)?;
        levels.push(p6);
        levels.push(p7);
        Ok(levels)
    }
}
