//! COCO-style average precision: 101-point interpolated precision, ten IoU
//! thresholds from 0.50 to 0.95, greedy highest-score-first matching.

use super::anchors::BoxXyxy;
use super::boxes::iou;
use super::infer::DetectionSet;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub boxes: Vec<BoxXyxy>,
    pub classes: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ApReport {
    /// Mean over IoU 0.50:0.05:0.95.
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| 0.5 + 0.05 * i as f64)
}

/// AP of one class at one IoU threshold, or `None` without ground truth.
fn class_ap(preds: &[DetectionSet], gts: &[GroundTruth], class: usize, thresh: f64) -> Option<f64> {
    let npos: usize = gts
        .iter()
        .map(|g| g.classes.iter().filter(|&&c| c == class).count())
        .sum();
    if npos == 0 {
        return None;
    }
    let mut dets: Vec<(f64, usize, BoxXyxy)> = preds
        .iter()
        .flat_map(|s| {
            s.detections
                .iter()
                .filter(|d| d.class == class)
                .map(move |d| (d.score, s.image_id, d.bbox))
        })
        .collect();
    dets.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.boxes.len()]).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::with_capacity(dets.len());
    for (_, img, bbox) in &dets {
        let mut best = (thresh, None);
        if let Some(g) = gts.get(*img) {
            for (j, (gb, &gc)) in g.boxes.iter().zip(&g.classes).enumerate() {
                if gc != class || used[*img][j] {
                    continue;
                }
                let v = iou(bbox, gb);
                if v >= best.0 {
                    best = (v, Some(j));
                }
            }
        }
        match best.1 {
            Some(j) => {
                used[*img][j] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        curve.push((tp as f64 / npos as f64, tp as f64 / (tp + fp) as f64));
    }
    for i in (0..curve.len().saturating_sub(1)).rev() {
        curve[i].1 = curve[i].1.max(curve[i + 1].1);
    }
    let mut sum = 0.0;
    for r in 0..=100 {
        let target = r as f64 / 100.0;
        if let Some(&(_, p)) = curve.iter().find(|(rec, _)| *rec >= target - 1e-12) {
            sum += p;
        }
    }
    Some(sum / 101.0)
}

/// Averages over classes that have ground truth. `preds[i].image_id`
/// indexes `gts`. Returns zeros when no ground truth exists.
pub fn evaluate_ap(preds: &[DetectionSet], gts: &[GroundTruth]) -> ApReport {
    let mut classes: Vec<usize> = gts.iter().flat_map(|g| g.classes.iter().copied()).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return ApReport::default();
    }
    let at = |t: f64| -> f64 {
        let v: Vec<f64> = classes.iter().filter_map(|&c| class_ap(preds, gts, c, t)).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let per: Vec<f64> = iou_thresholds().iter().map(|&t| at(t)).collect();
    ApReport {
        ap: per.iter().sum::<f64>() / per.len() as f64,
        ap50: per[0],
        ap75: per[5],
    }
}
