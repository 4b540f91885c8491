//! Wall-clock throughput on the CPU worker pool in effect.

use crate::error::{Error, Result};
use crate::head::loss::LossConfig;
use crate::model::Model;
use crate::params::Group;
use crate::tensor::{Scalar, Tape};
use crate::train::{gen_dataset, make_batch, AdamW};
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    /// Forward pass only.
    Infer,
    /// Forward, backward and one optimizer step.
    Train,
}

impl std::str::FromStr for BenchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "infer" => Ok(BenchMode::Infer),
            "train" => Ok(BenchMode::Train),
            _ => Err(Error::config(format!("unknown bench mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub batch: usize,
    pub size: usize,
    pub iters: usize,
    pub warmup: usize,
    pub mode: BenchMode,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            batch: 1,
            size: 128,
            iters: 5,
            warmup: 3,
            mode: BenchMode::Infer,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub mode: BenchMode,
    pub batch: usize,
    pub size: usize,
    pub iters: usize,
    pub threads: usize,
    /// Images per second of the median iteration.
    pub fps: f64,
    pub fps_min: f64,
    pub fps_max: f64,
    /// `(fps_max − fps_min) / fps`.
    pub spread: f64,
    /// Parameters, recorded activations and, when training, gradients and
    /// optimizer moments.
    pub peak_bytes: u64,
}

pub fn latency_bench<T: Scalar>(model: &Model, cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.warmup < 3 || cfg.iters == 0 || cfg.batch == 0 {
        return Err(Error::config("benchmarks need at least 3 warmup and 1 timed iteration"));
    }
    let scenes = gen_dataset(cfg.seed, cfg.batch, cfg.size)?;
    let (images, gts) = make_batch::<T>(&scenes)?;
    let mut store = model.init_params::<T>(cfg.seed);
    let mut opt = AdamW::default();
    let loss_cfg = LossConfig::default();
    let elem = std::mem::size_of::<T>() as u64;
    let params = store.num_values() as u64;
    let mut peak = 0u64;
    let mut times = Vec::with_capacity(cfg.iters);
    for i in 0..cfg.warmup + cfg.iters {
        let start = Instant::now();
        let mut tape = Tape::new();
        let bytes = match cfg.mode {
            BenchMode::Infer => {
                let p = store.bind_constants(&mut tape);
                let x = tape.constant(images.clone());
                model.forward(&mut tape, &p, x)?;
                (tape.stored_elements() as u64) * elem
            }
            BenchMode::Train => {
                let p = store.bind(&mut tape);
                let x = tape.constant(images.clone());
                let (loss, _) = model.loss(&mut tape, &p, x, &gts, &loss_cfg)?;
                let grads = tape.backward(loss)?;
                store.store_grads(&p, &grads);
                opt.step(&mut store, |_: Group| 1e-6, 0.0);
                (tape.stored_elements() as u64 + params) * elem + 16 * params
            }
        };
        let secs = start.elapsed().as_secs_f64();
        peak = peak.max(bytes + params * elem);
        if i >= cfg.warmup {
            times.push(secs);
        }
    }
    let mut fps: Vec<f64> = times.iter().map(|t| cfg.batch as f64 / t.max(1e-12)).collect();
    fps.sort_by(f64::total_cmp);
    let median = fps[fps.len() / 2];
    let (lo, hi) = (fps[0], fps[fps.len() - 1]);
    Ok(BenchReport {
        mode: cfg.mode,
        batch: cfg.batch,
        size: cfg.size,
        iters: cfg.iters,
        threads: rayon::current_num_threads(),
        fps: median,
        fps_min: lo,
        fps_max: hi,
        spread: (hi - lo) / median,
        peak_bytes: peak,
    })
}
