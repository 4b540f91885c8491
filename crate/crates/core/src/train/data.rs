//! Synthetic shapes detection dataset: filled rectangles, ellipses and
//! upright triangles of random colour on a noisy dark background. Every
//! shape touches all four sides of its box.

use crate::error::{Error, Result};
use crate::head::anchors::BoxXyxy;
use crate::head::GroundTruth;
use crate::tensor::{Scalar, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeClass {
    Rectangle,
    Ellipse,
    Triangle,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 3] = [ShapeClass::Rectangle, ShapeClass::Ellipse, ShapeClass::Triangle];

    pub fn id(self) -> usize {
        self as usize
    }

    /// Whether pixel centre `(px, py)` lies inside the shape drawn in `b`.
    fn contains(self, b: &BoxXyxy, px: f64, py: f64) -> bool {
        if px < b[0] || px > b[2] || py < b[1] || py > b[3] {
            return false;
        }
        let (w, h) = (b[2] - b[0], b[3] - b[1]);
        match self {
            ShapeClass::Rectangle => true,
            ShapeClass::Ellipse => {
                let dx = (px - (b[0] + w / 2.0)) / (w / 2.0);
                let dy = (py - (b[1] + h / 2.0)) / (h / 2.0);
                dx * dx + dy * dy <= 1.0
            }
            ShapeClass::Triangle => {
                let t = (py - b[1]) / h;
                (px - (b[0] + w / 2.0)).abs() <= t * w / 2.0
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    /// `(1, 3, size, size)`, values in `[0, 1]`.
    pub image: Tensor<f64>,
    pub boxes: Vec<BoxXyxy>,
    pub classes: Vec<ShapeClass>,
}

impl SyntheticScene {
    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            boxes: self.boxes.clone(),
            classes: self.classes.iter().map(|c| c.id()).collect(),
        }
    }
}

const MIN_SIDE: usize = 12;
const MAX_OBJECTS: usize = 6;
const MAX_OVERLAP: f64 = 0.1;

fn overlap_fraction(a: &BoxXyxy, b: &BoxXyxy) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let smaller = ((a[2] - a[0]) * (a[3] - a[1])).min((b[2] - b[0]) * (b[3] - b[1]));
    iw * ih / smaller
}

fn scene(seed: u64, index: usize, size: usize) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let count = rng.gen_range(1..=MAX_OBJECTS);
    let max_side = (size / 2).max(MIN_SIDE + 1);
    let mut boxes: Vec<BoxXyxy> = Vec::new();
    let mut classes = Vec::new();
    let mut colours = Vec::new();
    let mut attempts = 0;
    while boxes.len() < count && attempts < 200 {
        attempts += 1;
        let w = rng.gen_range(MIN_SIDE..=max_side);
        let h = rng.gen_range(MIN_SIDE..=max_side);
        let x = rng.gen_range(0..=size - w);
        let y = rng.gen_range(0..=size - h);
        let b = [x as f64, y as f64, (x + w) as f64, (y + h) as f64];
        let class = ShapeClass::ALL[rng.gen_range(0..3)];
        let colour: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.45..1.0));
        if boxes.iter().any(|o| overlap_fraction(o, &b) > MAX_OVERLAP) {
            continue;
        }
        boxes.push(b);
        classes.push(class);
        colours.push(colour);
    }
    let plane = size * size;
    let mut data = vec![0.0; 3 * plane];
    for v in data.iter_mut() {
        *v = rng.gen_range(0.0..0.15);
    }
    for ((b, class), colour) in boxes.iter().zip(&classes).zip(&colours) {
        for py in b[1] as usize..b[3] as usize {
            for px in b[0] as usize..b[2] as usize {
                if class.contains(b, px as f64 + 0.5, py as f64 + 0.5) {
                    for (c, &v) in colour.iter().enumerate() {
                        data[c * plane + py * size + px] = v;
                    }
                }
            }
        }
    }
    SyntheticScene {
        image: Tensor::from_vec(Shape::new(1, 3, size, size), data).expect("sized buffer"),
        boxes,
        classes,
    }
}

/// `n` scenes of `size × size` pixels, deterministic in `seed`. Scene `i`
/// draws from its own stream, so generation order does not matter.
pub fn gen_dataset(seed: u64, n: usize, size: usize) -> Result<Vec<SyntheticScene>> {
    if size == 0 || !size.is_multiple_of(32) {
        return Err(Error::config(format!(
            "image size {size} is not a positive multiple of 32"
        )));
    }
    Ok((0..n).into_par_iter().map(|i| scene(seed, i, size)).collect())
}

/// Stacks scenes into one batch tensor with their ground truth.
pub fn make_batch<T: Scalar>(scenes: &[SyntheticScene]) -> Result<(Tensor<T>, Vec<GroundTruth>)> {
    let images: Vec<Tensor<T>> = scenes.iter().map(|s| s.image.cast()).collect();
    Ok((
        Tensor::stack(&images)?,
        scenes.iter().map(SyntheticScene::ground_truth).collect(),
    ))
}
