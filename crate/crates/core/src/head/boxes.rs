//! Box geometry, the centre/log-size delta parameterization and the
//! anchor matcher.

use super::anchors::BoxXyxy;
use crate::error::{Error, Result};

pub fn area(b: &BoxXyxy) -> f64 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

pub fn iou(a: &BoxXyxy, b: &BoxXyxy) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Encodes boxes as `(dx, dy, dw, dh)` relative to an anchor with unit
/// weights; decoding clamps the log-size deltas.
#[derive(Clone, Copy, Debug)]
pub struct BoxCoder {
    pub clamp: f64,
}

impl Default for BoxCoder {
    fn default() -> Self {
        BoxCoder {
            clamp: (1000.0f64 / 16.0).ln(),
        }
    }
}

fn centre(b: &BoxXyxy) -> (f64, f64, f64, f64) {
    let w = b[2] - b[0];
    let h = b[3] - b[1];
    (b[0] + 0.5 * w, b[1] + 0.5 * h, w, h)
}

impl BoxCoder {
    pub fn encode(&self, gt: &BoxXyxy, anchor: &BoxXyxy) -> [f64; 4] {
        let (ax, ay, aw, ah) = centre(anchor);
        let (gx, gy, gw, gh) = centre(gt);
        [(gx - ax) / aw, (gy - ay) / ah, (gw / aw).ln(), (gh / ah).ln()]
    }

    pub fn decode(&self, d: &[f64; 4], anchor: &BoxXyxy) -> BoxXyxy {
        let (ax, ay, aw, ah) = centre(anchor);
        let cx = ax + d[0] * aw;
        let cy = ay + d[1] * ah;
        let w = aw * d[2].min(self.clamp).exp();
        let h = ah * d[3].min(self.clamp).exp();
        [cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h]
    }
}

/// Training target of one anchor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Label {
    Negative,
    Ignore,
    Positive { class: usize, gt: usize },
}

#[derive(Clone, Copy, Debug)]
pub struct MatcherConfig {
    pub positive: f64,
    pub negative: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig {
            positive: 0.5,
            negative: 0.4,
        }
    }
}

/// Labels each anchor: IoU ≥ `positive` with its best ground truth →
/// positive, IoU < `negative` → negative, otherwise ignored. Every ground
/// truth also claims its single highest-IoU anchor (first on ties).
pub fn match_anchors(
    anchors: &[BoxXyxy],
    gt_boxes: &[BoxXyxy],
    gt_classes: &[usize],
    cfg: &MatcherConfig,
) -> Result<Vec<Label>> {
    if gt_boxes.len() != gt_classes.len() {
        return Err(Error::invalid(
            "match_anchors",
            "one class per ground-truth box required",
        ));
    }
    if let Some(b) = gt_boxes.iter().find(|b| !(b[2] > b[0] && b[3] > b[1])) {
        return Err(Error::invalid(
            "match_anchors",
            format!("degenerate ground-truth box {b:?}"),
        ));
    }
    let mut best_gt = vec![(0.0f64, usize::MAX); anchors.len()];
    let mut best_anchor = vec![(-1.0f64, usize::MAX); gt_boxes.len()];
    for (i, a) in anchors.iter().enumerate() {
        for (j, g) in gt_boxes.iter().enumerate() {
            let v = iou(a, g);
            if v > best_gt[i].0 || best_gt[i].1 == usize::MAX {
                best_gt[i] = (v, j);
            }
            if v > best_anchor[j].0 {
                best_anchor[j] = (v, i);
            }
        }
    }
    let mut labels: Vec<Label> = best_gt
        .iter()
        .map(|&(v, j)| {
            if j == usize::MAX || v < cfg.negative {
                Label::Negative
            } else if v >= cfg.positive {
                Label::Positive {
                    class: gt_classes[j],
                    gt: j,
                }
            } else {
                Label::Ignore
            }
        })
        .collect();
    for (j, &(v, i)) in best_anchor.iter().enumerate() {
        if i != usize::MAX && v > 0.0 {
            labels[i] = Label::Positive {
                class: gt_classes[j],
                gt: j,
            };
        }
    }
    Ok(labels)
}
