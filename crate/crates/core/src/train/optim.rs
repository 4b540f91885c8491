use crate::params::{Group, ParamStore};
use crate::tensor::Scalar;
use rayon::prelude::*;

/// Adam with decoupled weight decay. Moments are kept in `f64`.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW::new(0.9, 0.999, 1e-8)
    }
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamW {
            beta1,
            beta2,
            eps,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// One update of every non-frozen parameter holding a gradient:
    /// `p ← p·(1 − lr·wd)`, then the bias-corrected Adam step.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, lr: impl Fn(Group) -> f64, weight_decay: f64) {
        if self.moments.is_empty() {
            self.moments = store
                .iter()
                .map(|(_, p)| (vec![0.0; p.tensor.numel()], vec![0.0; p.tensor.numel()]))
                .collect();
        }
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lrs: Vec<f64> = store.iter().map(|(_, p)| lr(p.group)).collect();
        store
            .iter_mut()
            .collect::<Vec<_>>()
            .into_par_iter()
            .zip(self.moments.par_iter_mut())
            .zip(lrs.into_par_iter())
            .for_each(|((p, (m, v)), lr)| {
                if p.frozen {
                    return;
                }
                let Some(grad) = p.tensor.grad().map(|g| g.to_vec()) else {
                    return;
                };
                let shrink = 1.0 - lr * weight_decay;
                for (((x, g), m), v) in p
                    .tensor
                    .data_mut()
                    .iter_mut()
                    .zip(grad)
                    .zip(m.iter_mut())
                    .zip(v.iter_mut())
                {
                    let g = g.f64();
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let update = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    *x = T::of(x.f64() * shrink - update);
                }
            });
    }
}
