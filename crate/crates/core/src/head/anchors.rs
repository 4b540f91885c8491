//! Anchor generation. Level `l` has stride `2^l` and base size `2^(l+2)`;
//! each location carries every (scale, aspect ratio) pair, ordered
//! scale-major. Anchors are centred on `(x·stride, y·stride)` and are
//! enumerated row by row, then column, then anchor index.

use serde::{Deserialize, Serialize};

pub type BoxXyxy = [f64; 4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub scales: Vec<f64>,
    /// Height over width.
    pub ratios: Vec<f64>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            scales: vec![1.0, 2f64.powf(1.0 / 3.0), 2f64.powf(2.0 / 3.0)],
            ratios: vec![0.5, 1.0, 2.0],
        }
    }
}

impl AnchorConfig {
    pub fn per_location(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }

    pub fn base_size(level: usize) -> f64 {
        (1u64 << (level + 2)) as f64
    }

    pub fn stride(level: usize) -> f64 {
        (1u64 << level) as f64
    }

    /// Anchor shapes `(w, h)` at one location of `level`.
    pub fn cell(&self, level: usize) -> Vec<(f64, f64)> {
        let base = Self::base_size(level);
        let mut out = Vec::with_capacity(self.per_location());
        for &s in &self.scales {
            let size = base * s;
            for &r in &self.ratios {
                out.push((size / r.sqrt(), size * r.sqrt()));
            }
        }
        out
    }

    pub fn level(&self, level: usize, h: usize, w: usize) -> LevelAnchors {
        let stride = Self::stride(level);
        let cell = self.cell(level);
        let mut boxes = Vec::with_capacity(h * w * cell.len());
        for y in 0..h {
            for x in 0..w {
                let (cx, cy) = (x as f64 * stride, y as f64 * stride);
                for &(aw, ah) in &cell {
                    boxes.push([cx - aw / 2.0, cy - ah / 2.0, cx + aw / 2.0, cy + ah / 2.0]);
                }
            }
        }
        LevelAnchors {
            level,
            h,
            w,
            per_location: cell.len(),
            boxes,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LevelAnchors {
    pub level: usize,
    pub h: usize,
    pub w: usize,
    pub per_location: usize,
    pub boxes: Vec<BoxXyxy>,
}

impl LevelAnchors {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// `(y, x, a)` of anchor `i`.
    pub fn position(&self, i: usize) -> (usize, usize, usize) {
        let a = i % self.per_location;
        let cell = i / self.per_location;
        (cell / self.w, cell % self.w, a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_geometry() {
        let cfg = AnchorConfig::default();
        let a = cfg.level(3, 4, 5);
        assert_eq!(a.len(), 9 * 4 * 5);
        let b = a.boxes[1];
        assert!(((b[2] - b[0]) - 32.0).abs() < 1e-12);
        assert!(((b[3] - b[1]) - 32.0).abs() < 1e-12);
        assert_eq!(a.position(9 * 7 + 2), (1, 2, 2));
        for (w, h) in cfg.cell(5) {
            assert!(((w * h).sqrt() - 128.0).abs() < 1e-9 || (w * h).sqrt() > 128.0);
        }
    }
}
