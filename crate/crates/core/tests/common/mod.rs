#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tpn_core::pyramid::level_sizes;
use tpn_core::tensor::GradCheckOptions;
use tpn_core::{ParamStore, Pyramid, Registry, Shape, Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Initialized parameters with every value jittered, so that zero-init
/// finals, unit gammas and zero biases all carry signal.
pub fn jittered_params(reg: &Registry, seed: u64) -> Vec<Tensor<f64>> {
    let store = ParamStore::<f64>::init(reg, seed);
    let mut r = rng(seed ^ 0x5eed);
    store
        .iter()
        .map(|(_, p)| {
            let mut t = p.tensor.clone();
            t.set_requires_grad(false);
            for v in t.data_mut() {
                *v += r.gen_range(-0.2..0.2);
            }
            t
        })
        .collect()
}

/// Random P3..P7 maps of `channels` channels on an 8×8 base.
pub fn pyramid_tensors(channels: usize, seed: u64) -> Vec<Tensor<f64>> {
    let mut r = rng(seed);
    level_sizes(3, 7, (8, 8))
        .into_iter()
        .map(|(h, w)| random(Shape::new(1, channels, h, w), &mut r))
        .collect()
}

/// `Σ_l ⟨c_l, P_l⟩` with fixed random coefficients.
pub fn project(tape: &mut Tape<f64>, maps: &Pyramid<Var>, seed: u64) -> tpn_core::Result<Var> {
    let mut r = rng(seed);
    let mut acc: Option<Var> = None;
    for (_, &v) in maps.iter() {
        let n = tape.value(v).numel();
        let coeffs = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let d = tape.dot(v, coeffs)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, d)?,
            None => d,
        });
    }
    Ok(acc.expect("non-empty pyramid"))
}

pub fn project_one(tape: &mut Tape<f64>, v: Var, seed: u64) -> tpn_core::Result<Var> {
    project(tape, &Pyramid::new(0, vec![v]), seed)
}

pub fn opts(max_probes: usize) -> GradCheckOptions {
    GradCheckOptions {
        max_probes,
        ..GradCheckOptions::default()
    }
}
