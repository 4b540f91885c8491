//! Focal classification loss and smooth-L1 box loss, each summed per
//! pyramid level and divided by that level's positive-anchor count
//! (at least one) over the batch.

use super::anchors::LevelAnchors;
use super::boxes::{match_anchors, BoxCoder, Label, MatcherConfig};
use super::eval::GroundTruth;
use super::LevelOutput;
use crate::error::{Error, Result};
use crate::pyramid::Pyramid;
use crate::tensor::{Scalar, Tape, Tensor, Var};
use serde::Serialize;

#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    pub alpha: f64,
    pub gamma: f64,
    /// Transition point of the smooth-L1 box loss.
    pub beta: f64,
    pub matcher: MatcherConfig,
    pub coder: BoxCoder,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.25,
            gamma: 2.0,
            beta: 0.1,
            matcher: MatcherConfig::default(),
            coder: BoxCoder::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelLoss {
    pub level: usize,
    /// Normalized classification term.
    pub cls: f64,
    /// Normalized box term.
    pub box_loss: f64,
    pub positives: usize,
    /// `max(1, positives)`.
    pub divisor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub levels: Vec<LevelLoss>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn cls(&self) -> f64 {
        self.levels.iter().map(|l| l.cls).sum()
    }

    pub fn box_loss(&self) -> f64 {
        self.levels.iter().map(|l| l.box_loss).sum()
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Focal loss of one logit and its derivative.
pub fn focal(z: f64, positive: bool, alpha: f64, gamma: f64) -> (f64, f64) {
    let p = sigmoid(z);
    let q = sigmoid(-z);
    if positive {
        let log_p = -softplus(-z);
        let m = alpha * q.powf(gamma);
        (-m * log_p, m * (gamma * p * log_p - q))
    } else {
        let log_q = -softplus(z);
        let m = (1.0 - alpha) * p.powf(gamma);
        (-m * log_q, m * (p - gamma * q * log_q))
    }
}

/// Smooth-L1 of one residual and its derivative.
pub fn smooth_l1(d: f64, beta: f64) -> (f64, f64) {
    if d.abs() < beta {
        (0.5 * d * d / beta, d / beta)
    } else {
        (d.abs() - 0.5 * beta, d.signum())
    }
}

/// Matches one image's ground truth against all levels' anchors jointly
/// and splits the labels per level.
pub fn assign_labels(anchors: &[LevelAnchors], gt: &GroundTruth, cfg: &MatcherConfig) -> Result<Vec<Vec<Label>>> {
    let all: Vec<_> = anchors.iter().flat_map(|a| a.boxes.iter().copied()).collect();
    let labels = match_anchors(&all, &gt.boxes, &gt.classes, cfg)?;
    let mut out = Vec::with_capacity(anchors.len());
    let mut start = 0;
    for a in anchors {
        out.push(labels[start..start + a.len()].to_vec());
        start += a.len();
    }
    Ok(out)
}

/// Records the total detection loss on `tape` as a scalar whose partials
/// with respect to every level's outputs were computed analytically.
pub fn detection_loss<T: Scalar>(
    tape: &mut Tape<T>,
    outputs: &Pyramid<LevelOutput>,
    anchors: &[LevelAnchors],
    gts: &[GroundTruth],
    num_classes: usize,
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    if anchors.len() != outputs.len() {
        return Err(Error::invalid("detection_loss", "one anchor set per level required"));
    }
    let labels = gts
        .iter()
        .map(|g| assign_labels(anchors, g, &cfg.matcher))
        .collect::<Result<Vec<_>>>()?;

    let mut inputs = Vec::new();
    let mut partials = Vec::new();
    let mut levels = Vec::new();
    let mut total = 0.0;
    for (li, ((level, out), anc)) in outputs.iter().zip(anchors).enumerate() {
        let cls = tape.value(out.cls);
        let boxes = tape.value(out.boxes);
        let (cs, bs) = (cls.shape(), boxes.shape());
        let a = anc.per_location;
        if cs.n != gts.len() || cs.c != a * num_classes || (cs.h, cs.w) != (anc.h, anc.w) {
            return Err(Error::invalid(
                "detection_loss",
                format!("level {level}: classification output {cs} does not match anchors"),
            ));
        }
        if bs.n != cs.n || bs.c != 4 * a || (bs.h, bs.w) != (cs.h, cs.w) {
            return Err(Error::invalid(
                "detection_loss",
                format!("level {level}: box output {bs} does not match anchors"),
            ));
        }
        let plane = cs.h * cs.w;
        let mut dcls = vec![0.0f64; cls.numel()];
        let mut dbox = vec![0.0f64; boxes.numel()];
        let (mut cls_sum, mut box_sum, mut positives) = (0.0, 0.0, 0usize);
        for (b, gt) in gts.iter().enumerate() {
            for (i, label) in labels[b][li].iter().enumerate() {
                if *label == Label::Ignore {
                    continue;
                }
                let (y, x, ai) = anc.position(i);
                let pix = y * cs.w + x;
                let target = match *label {
                    Label::Positive { class, .. } => Some(class),
                    _ => None,
                };
                for k in 0..num_classes {
                    let idx = (b * cs.c + ai * num_classes + k) * plane + pix;
                    let (l, g) = focal(cls.data()[idx].f64(), target == Some(k), cfg.alpha, cfg.gamma);
                    cls_sum += l;
                    dcls[idx] = g;
                }
                if let Label::Positive { gt: j, .. } = *label {
                    positives += 1;
                    let t = cfg.coder.encode(&gt.boxes[j], &anc.boxes[i]);
                    for (c, tc) in t.iter().enumerate() {
                        let idx = (b * bs.c + 4 * ai + c) * plane + pix;
                        let (l, g) = smooth_l1(boxes.data()[idx].f64() - tc, cfg.beta);
                        box_sum += l;
                        dbox[idx] = g;
                    }
                }
            }
        }
        let divisor = positives.max(1) as f64;
        let to_tensor =
            |shape, d: Vec<f64>| Tensor::from_vec(shape, d.into_iter().map(|v| T::of(v / divisor)).collect());
        partials.push(to_tensor(cs, dcls)?);
        partials.push(to_tensor(bs, dbox)?);
        inputs.push(out.cls);
        inputs.push(out.boxes);
        let entry = LevelLoss {
            level,
            cls: cls_sum / divisor,
            box_loss: box_sum / divisor,
            positives,
            divisor,
        };
        total += entry.cls + entry.box_loss;
        levels.push(entry);
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("detection_loss".into()));
    }
    let var = tape.scalar_fn(T::of(total), inputs, partials)?;
    Ok((var, LossBreakdown { levels, total }))
}
