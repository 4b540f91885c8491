//! Inference: sigmoid scores, per-level top-k, delta decoding, clipping
//! and greedy per-class non-maximum suppression.

use super::anchors::{BoxXyxy, LevelAnchors};
use super::boxes::{iou, BoxCoder};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use serde::Serialize;
use std::io::Write;

#[derive(Clone, Copy, Debug)]
pub struct InferConfig {
    pub score_thresh: f64,
    pub iou_thresh: f64,
    /// Candidates kept per level before NMS.
    pub topk: usize,
    pub max_detections: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            score_thresh: 0.05,
            iou_thresh: 0.5,
            topk: 1000,
            max_detections: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Detection {
    pub class: usize,
    pub score: f64,
    pub bbox: BoxXyxy,
}

/// Detections of one image, sorted by descending score.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DetectionSet {
    pub image_id: usize,
    pub detections: Vec<Detection>,
}

fn sort_desc(d: &mut [Detection]) {
    d.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.class.cmp(&b.class)));
}

/// Greedy NMS within each class. Input order breaks score ties.
pub fn nms(mut candidates: Vec<Detection>, iou_thresh: f64) -> Vec<Detection> {
    sort_desc(&mut candidates);
    let mut keep: Vec<Detection> = Vec::new();
    for c in candidates {
        if keep
            .iter()
            .all(|k| k.class != c.class || iou(&k.bbox, &c.bbox) <= iou_thresh)
        {
            keep.push(c);
        }
    }
    keep
}

/// Decodes the outputs of image `image` from every level. `cls` and
/// `boxes` hold one tensor per level in the head's channel layout.
#[allow(clippy::too_many_arguments)]
pub fn decode_and_nms<T: Scalar>(
    cls: &[&Tensor<T>],
    boxes: &[&Tensor<T>],
    anchors: &[LevelAnchors],
    image: usize,
    image_size: (usize, usize),
    num_classes: usize,
    cfg: &InferConfig,
) -> Result<DetectionSet> {
    if cls.len() != anchors.len() || boxes.len() != anchors.len() {
        return Err(Error::invalid("decode", "one output pair per anchor level required"));
    }
    let coder = BoxCoder::default();
    let (ih, iw) = (image_size.0 as f64, image_size.1 as f64);
    let mut candidates = Vec::new();
    for ((c, b), anc) in cls.iter().zip(boxes).zip(anchors) {
        let (cs, bs) = (c.shape(), b.shape());
        let a = anc.per_location;
        if cs.c != a * num_classes || bs.c != 4 * a || (cs.h, cs.w) != (anc.h, anc.w) || image >= cs.n {
            return Err(Error::invalid(
                "decode",
                format!("outputs {cs}/{bs} do not match anchors"),
            ));
        }
        let plane = cs.h * cs.w;
        let mut level: Vec<(f64, usize, usize)> = Vec::new();
        for i in 0..anc.len() {
            let (y, x, ai) = anc.position(i);
            let pix = y * cs.w + x;
            for k in 0..num_classes {
                let z = c.data()[(image * cs.c + ai * num_classes + k) * plane + pix].f64();
                let s = 1.0 / (1.0 + (-z).exp());
                if s > cfg.score_thresh {
                    level.push((s, i, k));
                }
            }
        }
        level.sort_by(|p, q| q.0.total_cmp(&p.0));
        level.truncate(cfg.topk);
        for (s, i, k) in level {
            let (y, x, ai) = anc.position(i);
            let pix = y * cs.w + x;
            let mut d = [0.0; 4];
            for (j, dj) in d.iter_mut().enumerate() {
                *dj = b.data()[(image * bs.c + 4 * ai + j) * plane + pix].f64();
            }
            let r = coder.decode(&d, &anc.boxes[i]);
            let bbox = [
                r[0].clamp(0.0, iw),
                r[1].clamp(0.0, ih),
                r[2].clamp(0.0, iw),
                r[3].clamp(0.0, ih),
            ];
            candidates.push(Detection {
                class: k,
                score: s,
                bbox,
            });
        }
    }
    let mut detections = nms(candidates, cfg.iou_thresh);
    detections.truncate(cfg.max_detections);
    Ok(DetectionSet {
        image_id: image,
        detections,
    })
}

/// Writes `image_id,class,score,x1,y1,x2,y2` rows.
pub fn write_detections_csv<W: Write>(w: W, sets: &[DetectionSet]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["image_id", "class", "score", "x1", "y1", "x2", "y2"])?;
    for s in sets {
        for d in &s.detections {
            wr.write_record([
                s.image_id.to_string(),
                d.class.to_string(),
                format!("{:.6}", d.score),
                format!("{:.3}", d.bbox[0]),
                format!("{:.3}", d.bbox[1]),
                format!("{:.3}", d.bbox[2]),
                format!("{:.3}", d.bbox[3]),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::AnchorConfig;
    use crate::tensor::Shape;

    fn det(class: usize, score: f64, bbox: BoxXyxy) -> Detection {
        Detection { class, score, bbox }
    }

    #[test]
    fn identical_boxes_collapse() {
        let b = [0.0, 0.0, 10.0, 10.0];
        let kept = nms(vec![det(0, 0.9, b), det(0, 0.8, b)], 0.5);
        assert_eq!(kept, vec![det(0, 0.9, b)]);
        let kept = nms(vec![det(0, 0.9, b), det(1, 0.8, b)], 0.5);
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn greedy_three_box_trace() {
        // A suppresses B (IoU 0.6); C overlaps B only, so it survives.
        let a = [0.0, 0.0, 10.0, 10.0];
        let b = [2.5, 0.0, 12.5, 10.0];
        let c = [12.0, 0.0, 22.0, 10.0];
        assert!((iou(&a, &b) - 0.6).abs() < 1e-12);
        assert!(iou(&a, &c) == 0.0 && iou(&b, &c) > 0.0);
        let kept = nms(vec![det(0, 0.7, b), det(0, 0.9, a), det(0, 0.8, c)], 0.5);
        assert_eq!(kept, vec![det(0, 0.9, a), det(0, 0.8, c)]);
    }

    #[test]
    fn decode_zero_deltas_recovers_anchor() {
        let anc = AnchorConfig::default().level(5, 2, 2);
        let mut cls = Tensor::<f64>::full(Shape::new(1, 9, 2, 2), -20.0);
        let idx = cls.index(0, 4, 1, 1);
        cls.data_mut()[idx] = 5.0;
        let boxes = Tensor::zeros(Shape::new(1, 36, 2, 2));
        let set = decode_and_nms(
            &[&cls],
            &[&boxes],
            std::slice::from_ref(&anc),
            0,
            (64, 64),
            1,
            &InferConfig::default(),
        )
        .unwrap();
        assert_eq!(set.detections.len(), 1);
        let i = (2 + 1) * 9 + 4;
        let want = anc.boxes[i].map(|v| v.clamp(0.0, 64.0));
        assert_eq!(set.detections[0].bbox, want);
    }

    #[test]
    fn csv_header_and_rows() {
        let sets = vec![DetectionSet {
            image_id: 3,
            detections: vec![det(1, 0.5, [1.0, 2.0, 3.0, 4.0])],
        }];
        let mut buf = Vec::new();
        write_detections_csv(&mut buf, &sets).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "image_id,class,score,x1,y1,x2,y2\n3,1,0.500000,1.000,2.000,3.000,4.000\n"
        );
    }
}
