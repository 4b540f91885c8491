//! Parameter bookkeeping.
//!
//! Architectures register parameters by hierarchical name into a
//! [`Registry`], which records shapes and initialization rules without
//! allocating. Counting works on the registry alone, so the ResNet-shaped
//! backbones can be accounted for without materializing them. A
//! [`ParamStore`] materializes the registry for a given precision and seed.

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Scalar, Shape, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::ops::Index;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Uniform on `±1/√fan_in`.
    FanInUniform {
        fan_in: usize,
    },
    Constant(f64),
}

/// Optimizer group; backbone parameters train at their own learning rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Backbone,
    Rest,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamDesc {
    pub name: String,
    pub shape: Shape,
    pub init: Init,
    pub frozen: bool,
    pub group: Group,
}

impl ParamDesc {
    pub fn numel(&self) -> usize {
        self.shape.numel()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Registry {
    descs: Vec<ParamDesc>,
    index: HashMap<String, ParamId>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, shape: Shape, init: Init) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name `{name}`")));
        }
        let group = if name.starts_with("backbone.") {
            Group::Backbone
        } else {
            Group::Rest
        };
        let id = ParamId(self.descs.len());
        self.index.insert(name.clone(), id);
        self.descs.push(ParamDesc {
            name,
            shape,
            init,
            frozen: false,
            group,
        });
        Ok(id)
    }

    /// Convolution weight `[out_c, in_c, k, k]` and optional zero bias.
    pub fn conv(
        &mut self,
        prefix: &str,
        out_c: usize,
        in_c: usize,
        kernel: usize,
        bias: bool,
    ) -> Result<(ParamId, Option<ParamId>)> {
        let w = self.register(
            format!("{prefix}.weight"),
            Shape::new(out_c, in_c, kernel, kernel),
            Init::FanInUniform {
                fan_in: in_c * kernel * kernel,
            },
        )?;
        let b = if bias {
            Some(self.register(format!("{prefix}.bias"), Shape::vector(out_c), Init::Constant(0.0))?)
        } else {
            None
        };
        Ok((w, b))
    }

    /// Affine pair `(gamma = 1, beta = 0)` over `c` channels.
    pub fn norm(&mut self, prefix: &str, c: usize) -> Result<(ParamId, ParamId)> {
        let g = self.register(format!("{prefix}.gamma"), Shape::vector(c), Init::Constant(1.0))?;
        let b = self.register(format!("{prefix}.beta"), Shape::vector(c), Init::Constant(0.0))?;
        Ok((g, b))
    }

    pub fn desc(&self, id: ParamId) -> &ParamDesc {
        &self.descs[id.0]
    }

    pub fn descs(&self) -> &[ParamDesc] {
        &self.descs
    }

    pub fn len(&self) -> usize {
        self.descs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descs.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.descs.len()).map(ParamId)
    }

    pub fn set_init(&mut self, id: ParamId, init: Init) {
        self.descs[id.0].init = init;
    }

    pub fn freeze_where(&mut self, mut pred: impl FnMut(&ParamDesc) -> bool) {
        for d in &mut self.descs {
            if pred(d) {
                d.frozen = true;
            }
        }
    }

    pub fn total(&self) -> usize {
        self.descs.iter().map(ParamDesc::numel).sum()
    }

    pub fn trainable(&self) -> usize {
        self.descs.iter().filter(|d| !d.frozen).map(ParamDesc::numel).sum()
    }

    /// Totals per top-level name segment, in registration order.
    pub fn by_module(&self) -> Vec<(String, usize)> {
        let mut rows: Vec<(String, usize)> = Vec::new();
        for d in &self.descs {
            let module = d.name.split('.').next().unwrap_or("").to_string();
            match rows.iter_mut().find(|(m, _)| *m == module) {
                Some(row) => row.1 += d.numel(),
                None => rows.push((module, d.numel())),
            }
        }
        rows
    }

    /// Total of parameters whose name starts with `prefix`.
    pub fn total_under(&self, prefix: &str) -> usize {
        self.descs
            .iter()
            .filter(|d| d.name.starts_with(prefix))
            .map(ParamDesc::numel)
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub frozen: bool,
    pub group: Group,
}

/// Materialized parameters, indexed by the registry's ids.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamStore<T> {
    /// Draws every parameter in registration order from one ChaCha8 stream.
    /// Values are drawn in `f64` and rounded, so both precisions start from
    /// the same point.
    pub fn init(registry: &Registry, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = registry
            .descs()
            .iter()
            .map(|d| {
                let tensor = match d.init {
                    Init::Constant(v) => Tensor::full(d.shape, T::of(v)),
                    Init::FanInUniform { fan_in } => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        Tensor::from_fn(d.shape, |_| T::of((rng.gen::<f64>() * 2.0 - 1.0) * bound))
                    }
                };
                Parameter {
                    name: d.name.clone(),
                    tensor,
                    frozen: d.frozen,
                    group: d.group,
                }
            })
            .collect();
        ParamStore { params }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Number of scalars actually allocated.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.data().len()).sum()
    }

    pub fn zero(&mut self, id: ParamId) {
        self.params[id.0]
            .tensor
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = T::zero());
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    /// Records every parameter as a gradient-tracked leaf. Frozen parameters
    /// are tracked too; freezing only affects the optimizer.
    pub fn bind(&self, tape: &mut Tape<T>) -> Binding {
        Binding(
            self.params
                .iter()
                .map(|p| tape.leaf(p.tensor.clone().with_grad()))
                .collect(),
        )
    }

    /// Records every parameter as an untracked constant (inference).
    pub fn bind_constants(&self, tape: &mut Tape<T>) -> Binding {
        Binding(self.params.iter().map(|p| tape.constant(p.tensor.clone())).collect())
    }

    /// Copies the leaf gradients of a bound tape into each parameter.
    pub fn store_grads(&mut self, binding: &Binding, grads: &Gradients<T>) {
        for (p, v) in self.params.iter_mut().zip(&binding.0) {
            p.tensor.set_requires_grad(true);
            let g = match grads.get(*v) {
                Some(g) => g.data().to_vec(),
                None => vec![T::zero(); p.tensor.numel()],
            };
            p.tensor.set_grad(g).expect("gradient shape matches parameter");
        }
    }

    pub fn clear_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.clear_grad());
    }
}

/// Tape variables of a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Binding(Vec<Var>);

impl Binding {
    /// Wraps tape variables laid out in registry order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Binding(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Binding {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut r = Registry::new();
        r.register("a.w", Shape::vector(2), Init::Constant(0.0)).unwrap();
        assert!(r.register("a.w", Shape::vector(2), Init::Constant(0.0)).is_err());
    }

    #[test]
    fn groups_follow_name_prefix() {
        let mut r = Registry::new();
        let a = r.conv("backbone.stem", 4, 3, 3, true).unwrap().0;
        let b = r.conv("core.x", 4, 4, 1, true).unwrap().0;
        assert_eq!(r.desc(a).group, Group::Backbone);
        assert_eq!(r.desc(b).group, Group::Rest);
        assert_eq!(r.total(), 4 * 3 * 9 + 4 + 16 + 4);
        assert_eq!(r.by_module(), vec![("backbone".into(), 112), ("core".into(), 20)]);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let mut r = Registry::new();
        r.conv("c", 8, 16, 3, true).unwrap();
        r.norm("n", 8).unwrap();
        let a = ParamStore::<f64>::init(&r, 7);
        let b = ParamStore::<f64>::init(&r, 7);
        let c = ParamStore::<f64>::init(&r, 8);
        let w = |s: &ParamStore<f64>| s.tensor(ParamId(0)).data().to_vec();
        assert_eq!(w(&a), w(&b));
        assert_ne!(w(&a), w(&c));
        let bound = 1.0 / (16.0f64 * 9.0).sqrt();
        assert!(w(&a).iter().all(|v| v.abs() <= bound));
        assert!(a.tensor(ParamId(1)).data().iter().all(|&v| v == 0.0));
        assert!(a.tensor(ParamId(2)).data().iter().all(|&v| v == 1.0));
        assert_eq!(a.num_values(), r.total());
    }
}
