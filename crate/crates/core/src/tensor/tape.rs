use super::kernels::{self, ConvGeometry, NormStats};
use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        groups: usize,
        stats: NormStats,
        beta: Var,
    },
    Relu(Var),
    Resize(Var),
    Add(Var, Var),
    Fuse {
        inputs: Vec<Var>,
        weights: Var,
        eps: f64,
    },
    Dot {
        x: Var,
        coeffs: Vec<T>,
    },
    /// Scalar whose partial derivatives were computed during the forward pass.
    Scalar {
        inputs: Vec<Var>,
        local: Vec<Tensor<T>>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// Append-only record of a forward computation. Node order is a valid
/// topological order, so the backward pass walks it in reverse.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of stored forward elements, saved locals included.
    pub fn stored_elements(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| {
                let local = match &n.op {
                    Op::Scalar { local, .. } => local.iter().map(Tensor::numel).sum(),
                    _ => 0,
                };
                n.value.numel() + local
            })
            .sum()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    /// Records an input. Gradients flow to it iff `value.requires_grad()`.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let tracked = value.requires_grad();
        self.push(value, Op::Leaf, tracked)
    }

    pub fn constant(&mut self, mut value: Tensor<T>) -> Var {
        value.set_requires_grad(false);
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Geometry of every convolution recorded so far, in execution order.
    pub fn conv_geometries(&self) -> Vec<ConvGeometry> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Conv { x, w, stride, pad, .. } => {
                    ConvGeometry::new(self.shape(*x), self.shape(*w), *stride, *pad).ok()
                }
                _ => None,
            })
            .collect()
    }

    fn any_tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.is_tracked(*v))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let out = kernels::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        let tracked = self.any_tracked(&[x, w]) || b.is_some_and(|b| self.is_tracked(b));
        Ok(self.push(out, Op::Conv { x, w, b, stride, pad }, tracked))
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Result<Var> {
        let (out, stats) = kernels::group_norm(self.value(x), groups, self.value(gamma), self.value(beta), eps)?;
        let tracked = self.any_tracked(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::GroupNorm {
                x,
                gamma,
                groups,
                stats,
                beta,
            },
            tracked,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = kernels::relu(self.value(x));
        let tracked = self.is_tracked(x);
        self.push(out, Op::Relu(x), tracked)
    }

    pub fn resize(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let out = kernels::bilinear_resize(self.value(x), h, w)?;
        let tracked = self.is_tracked(x);
        Ok(self.push(out, Op::Resize(x), tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::add(self.value(a), self.value(b))?;
        let tracked = self.any_tracked(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), tracked))
    }

    /// Fast normalized fusion `Σ relu(w_i)·x_i / (Σ relu(w_j) + eps)`.
    pub fn fuse(&mut self, inputs: &[Var], weights: Var, eps: f64) -> Result<Var> {
        let wv = self.value(weights);
        if wv.numel() != inputs.len() || inputs.is_empty() {
            return Err(Error::invalid(
                "fuse",
                format!("{} weights for {} inputs", wv.numel(), inputs.len()),
            ));
        }
        let coeffs = fusion_coefficients(wv.data(), eps);
        let shape = self.shape(inputs[0]);
        let mut out = Tensor::zeros(shape);
        for (&v, &a) in inputs.iter().zip(&coeffs) {
            let x = self.value(v);
            if x.shape() != shape {
                return Err(Error::ShapeMismatch {
                    op: "fuse",
                    lhs: shape,
                    rhs: x.shape(),
                });
            }
            for (o, &xv) in out.data_mut().iter_mut().zip(x.data()) {
                *o += T::of(a) * xv;
            }
        }
        let tracked = self.any_tracked(inputs) || self.is_tracked(weights);
        Ok(self.push(
            out,
            Op::Fuse {
                inputs: inputs.to_vec(),
                weights,
                eps,
            },
            tracked,
        ))
    }

    /// Scalar `Σ coeffs_i · x_i`.
    pub fn dot(&mut self, x: Var, coeffs: Vec<T>) -> Result<Var> {
        let xv = self.value(x);
        if coeffs.len() != xv.numel() {
            return Err(Error::invalid("dot", "coefficient count differs from tensor size"));
        }
        let s: T = xv.data().iter().zip(&coeffs).map(|(&a, &b)| a * b).sum();
        let tracked = self.is_tracked(x);
        Ok(self.push(Tensor::scalar(s), Op::Dot { x, coeffs }, tracked))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        self.dot(x, vec![T::one(); n]).expect("matching length")
    }

    /// Records a scalar with precomputed partials `local[i] = ∂value/∂inputs[i]`.
    pub fn scalar_fn(&mut self, value: T, inputs: Vec<Var>, local: Vec<Tensor<T>>) -> Result<Var> {
        if inputs.len() != local.len() {
            return Err(Error::invalid("scalar_fn", "one partial per input required"));
        }
        for (v, l) in inputs.iter().zip(&local) {
            if self.shape(*v) != l.shape() {
                return Err(Error::ShapeMismatch {
                    op: "scalar_fn",
                    lhs: self.shape(*v),
                    rhs: l.shape(),
                });
            }
        }
        let tracked = self.any_tracked(&inputs);
        Ok(self.push(Tensor::scalar(value), Op::Scalar { inputs, local }, tracked))
    }

    /// Reverse pass from a one-element `root`. Returns gradients of every
    /// tracked leaf.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.value(root).numel() != 1 {
            return Err(Error::invalid("backward", "root must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.is_tracked(root) {
            return Ok(Gradients { grads });
        }
        grads[root.0] = Some(Tensor::full(self.shape(root), T::one()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Conv { x, w, b, stride, pad } => {
                    let cg = kernels::conv2d_backward(
                        self.value(*x),
                        self.value(*w),
                        b.is_some(),
                        *stride,
                        *pad,
                        &g,
                        self.is_tracked(*x),
                    )?;
                    if let Some(dx) = cg.dx {
                        self.accumulate(&mut grads, *x, dx);
                    }
                    self.accumulate(&mut grads, *w, cg.dw);
                    if let (Some(b), Some(db)) = (b, cg.db) {
                        self.accumulate(&mut grads, *b, db);
                    }
                }
                Op::GroupNorm {
                    x,
                    gamma,
                    groups,
                    stats,
                    beta,
                } => {
                    let ng = kernels::group_norm_backward(self.value(*x), *groups, self.value(*gamma), stats, &g);
                    self.accumulate(&mut grads, *x, ng.dx);
                    self.accumulate(&mut grads, *gamma, ng.dgamma);
                    self.accumulate(&mut grads, *beta, ng.dbeta);
                }
                Op::Relu(x) => {
                    let dx = kernels::relu_backward(self.value(*x), &g);
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Resize(x) => {
                    let dx = kernels::bilinear_resize_backward(self.shape(*x), &g);
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, g.clone());
                    self.accumulate(&mut grads, *b, g);
                }
                Op::Fuse { inputs, weights, eps } => {
                    let wv = self.value(*weights).data();
                    let coeffs = fusion_coefficients(wv, *eps);
                    let denom: f64 = wv.iter().map(|w| w.f64().max(0.0)).sum::<f64>() + *eps;
                    let out = &node.value;
                    let mut dw = Tensor::zeros(self.shape(*weights));
                    for (j, (&v, &a)) in inputs.iter().zip(&coeffs).enumerate() {
                        let x = self.value(v);
                        if wv[j] > T::zero() {
                            let inner: f64 = g
                                .data()
                                .iter()
                                .zip(x.data().iter().zip(out.data()))
                                .map(|(&gy, (&xv, &ov))| gy.f64() * (xv.f64() - ov.f64()))
                                .sum();
                            dw.data_mut()[j] = T::of(inner / denom);
                        }
                        let mut dx = g.clone();
                        dx.data_mut().iter_mut().for_each(|d| *d *= T::of(a));
                        self.accumulate(&mut grads, v, dx);
                    }
                    self.accumulate(&mut grads, *weights, dw);
                }
                Op::Dot { x, coeffs } => {
                    let up = g.item();
                    let dx = Tensor::from_vec(self.shape(*x), coeffs.iter().map(|&c| c * up).collect())?;
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Scalar { inputs, local } => {
                    let up = g.item();
                    for (v, l) in inputs.iter().zip(local) {
                        let mut dx = l.clone();
                        dx.data_mut().iter_mut().for_each(|d| *d *= up);
                        self.accumulate(&mut grads, *v, dx);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.is_tracked(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }
}

/// `relu(w_i) / (Σ_j relu(w_j) + eps)`.
pub fn fusion_coefficients<T: Scalar>(weights: &[T], eps: f64) -> Vec<f64> {
    let pos: Vec<f64> = weights.iter().map(|w| w.f64().max(0.0)).collect();
    let denom = pos.iter().sum::<f64>() + eps;
    pos.into_iter().map(|p| p / denom).collect()
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_and_sum_gradients() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::full(Shape::new(1, 1, 2, 2), 1.0).with_grad());
        let b = tape.constant(Tensor::full(Shape::new(1, 1, 2, 2), 3.0));
        let c = tape.add(a, b).unwrap();
        let d = tape.add(c, a).unwrap();
        let s = tape.sum(d);
        assert_eq!(tape.value(s).item(), 20.0);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[2.0; 4]);
        assert!(g.get(b).is_none());
    }

    #[test]
    fn fusion_with_equal_weights_averages() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(Shape::new(1, 1, 2, 2), 2.0));
        let y = tape.constant(Tensor::full(Shape::new(1, 1, 2, 2), 4.0));
        let w = tape.constant(Tensor::full(Shape::vector(2), 1.0));
        let f = tape.fuse(&[x, y], w, 0.0).unwrap();
        assert!(tape.value(f).data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn fusion_one_hot_passes_first_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(Shape::new(1, 2, 2, 2), |i| i as f64 - 3.5));
        let y = tape.constant(Tensor::full(Shape::new(1, 2, 2, 2), 9.0));
        let w = tape.constant(Tensor::from_vec(Shape::vector(2), vec![1.0, 0.0]).unwrap());
        let f = tape.fuse(&[x, y], w, 0.0).unwrap();
        assert_eq!(tape.value(f), tape.value(x));
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(Shape::new(1, 1, 2, 2)).with_grad());
        assert!(tape.backward(a).is_err());
    }
}
