use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tape, Tensor, Var};

/// Feature maps for consecutive levels `min..=max`; level `l` is `2^l`
/// times smaller than the input image per spatial dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Pyramid<V> {
    min_level: usize,
    maps: Vec<V>,
}

pub type FeaturePyramid<T> = Pyramid<Tensor<T>>;

impl<V> Pyramid<V> {
    pub fn new(min_level: usize, maps: Vec<V>) -> Self {
        Pyramid { min_level, maps }
    }

    pub fn min_level(&self) -> usize {
        self.min_level
    }

    pub fn max_level(&self) -> usize {
        self.min_level + self.maps.len() - 1
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn levels(&self) -> std::ops::RangeInclusive<usize> {
        self.min_level..=self.max_level()
    }

    pub fn get(&self, level: usize) -> &V {
        &self.maps[level - self.min_level]
    }

    pub fn get_mut(&mut self, level: usize) -> &mut V {
        &mut self.maps[level - self.min_level]
    }

    pub fn set(&mut self, level: usize, value: V) {
        self.maps[level - self.min_level] = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &V)> {
        self.maps.iter().enumerate().map(move |(i, v)| (i + self.min_level, v))
    }

    pub fn maps(&self) -> &[V] {
        &self.maps
    }

    pub fn into_maps(self) -> Vec<V> {
        self.maps
    }

    pub fn map<U>(&self, f: impl FnMut(&V) -> U) -> Pyramid<U> {
        Pyramid {
            min_level: self.min_level,
            maps: self.maps.iter().map(f).collect(),
        }
    }

    pub fn try_map<U>(&self, mut f: impl FnMut(usize, &V) -> Result<U>) -> Result<Pyramid<U>> {
        let maps = self.iter().map(|(l, v)| f(l, v)).collect::<Result<Vec<U>>>()?;
        Ok(Pyramid {
            min_level: self.min_level,
            maps,
        })
    }
}

impl<T: Scalar> FeaturePyramid<T> {
    /// Records every map as a constant on `tape`.
    pub fn record(&self, tape: &mut Tape<T>) -> Pyramid<Var> {
        self.map(|t| tape.constant(t.clone()))
    }

    pub fn shapes(&self) -> Vec<Shape> {
        self.maps.iter().map(|t| t.shape()).collect()
    }

    pub fn max_abs_diff(&self, other: &FeaturePyramid<T>) -> f64 {
        self.maps
            .iter()
            .zip(&other.maps)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}

impl Pyramid<Var> {
    pub fn values<T: Scalar>(&self, tape: &Tape<T>) -> FeaturePyramid<T> {
        self.map(|v| tape.value(*v).clone())
    }
}

/// Spatial size of each level for an `h × w` image, following the stride-2
/// convolution rule `ceil(len / 2)` above the stride of the first level.
pub fn level_sizes(min_level: usize, max_level: usize, base: (usize, usize)) -> Vec<(usize, usize)> {
    let mut sizes = vec![base];
    for _ in min_level..max_level {
        let (h, w) = *sizes.last().expect("non-empty");
        sizes.push((h.div_ceil(2), w.div_ceil(2)));
    }
    sizes
}

pub(crate) fn check_levels<V>(pyr: &Pyramid<V>, min: usize, max: usize) -> Result<()> {
    if pyr.min_level() != min || pyr.max_level() != max {
        return Err(Error::invalid(
            "pyramid",
            format!(
                "levels {}..={} do not match expected {min}..={max}",
                pyr.min_level(),
                pyr.max_level()
            ),
        ));
    }
    Ok(())
}
