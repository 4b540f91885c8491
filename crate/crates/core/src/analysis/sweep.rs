//! Frontier sweep over `(L, B)`: every grid point is counted, timed and
//! trained on the toy scenes.

use super::bench::{latency_bench, BenchConfig, BenchMode};
use crate::cores::{CoreKind, CoreSpec};
use crate::error::{Error, Result};
use crate::head::InferConfig;
use crate::model::{Model, ModelSpec};
use crate::tensor::Scalar;
use crate::train::{evaluate, gen_dataset, toy_model, train, TrainConfig};
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMetric {
    /// AP at IoU 0.5 on the training scenes.
    Ap50,
    /// Final training loss.
    Loss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// `(L, B)` pairs.
    pub grid: Vec<(usize, usize)>,
    /// Model whose core is replaced by `TPN(L, B)` at each grid point.
    pub base: ModelSpec,
    pub train: TrainConfig,
    pub bench_iters: usize,
    pub metric: SweepMetric,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            grid: (1..=3).flat_map(|l| (1..=3).map(move |b| (l, b))).collect(),
            base: toy_model(CoreSpec::tpn(1, 1)),
            train: TrainConfig::toy(10, 1.0),
            bench_iters: 3,
            metric: SweepMetric::Ap50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrontierRow {
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "B")]
    pub bottlenecks: usize,
    pub params: u64,
    pub gflops: f64,
    /// Training images per second.
    pub tfps: f64,
    /// Inference images per second.
    pub ifps: f64,
    pub metric: f64,
}

/// Runs every grid point in order, calling `on_row` as rows complete.
pub fn sweep<T: Scalar>(cfg: &SweepConfig, mut on_row: impl FnMut(&FrontierRow)) -> Result<Vec<FrontierRow>> {
    if cfg.grid.is_empty() {
        return Err(Error::config("empty sweep grid"));
    }
    cfg.train.validate()?;
    let scenes = gen_dataset(cfg.train.seed, cfg.train.scenes, cfg.train.image_size)?;
    let size = cfg.train.image_size;
    let mut rows = Vec::with_capacity(cfg.grid.len());
    for &(l, b) in &cfg.grid {
        let mut spec = cfg.base.clone();
        spec.core.kind = CoreKind::Tpn;
        spec.core.layers = l;
        spec.core.bottlenecks = b;
        let model = Model::build(&spec)?;
        let bench = |mode| BenchConfig {
            batch: cfg.train.batch_size,
            size,
            iters: cfg.bench_iters.max(1),
            warmup: 3,
            mode,
            seed: cfg.train.seed,
        };
        let tfps = latency_bench::<T>(&model, &bench(BenchMode::Train))?.fps;
        let ifps = latency_bench::<T>(&model, &bench(BenchMode::Infer))?.fps;
        let mut store = model.init_params::<T>(cfg.train.seed);
        let report = train(&model, &mut store, &scenes, &cfg.train, |_| {})?;
        let metric = match cfg.metric {
            SweepMetric::Loss => report.final_loss().unwrap_or(f64::NAN),
            SweepMetric::Ap50 => {
                evaluate(&model, &store, &scenes, cfg.train.batch_size, &InferConfig::default())?
                    .1
                    .ap50
            }
        };
        let row = FrontierRow {
            layers: l,
            bottlenecks: b,
            params: model.num_params() as u64,
            gflops: model.flops(size, size)? as f64 / 1e9,
            tfps,
            ifps,
            metric,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// `L,B,params,gflops,tfps,ifps,metric`.
pub fn write_frontier_csv<W: Write>(w: W, rows: &[FrontierRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["L", "B", "params", "gflops", "tfps", "ifps", "metric"])?;
    for r in rows {
        wr.write_record([
            r.layers.to_string(),
            r.bottlenecks.to_string(),
            r.params.to_string(),
            format!("{:.6}", r.gflops),
            format!("{:.3}", r.tfps),
            format!("{:.3}", r.ifps),
            format!("{:.6}", r.metric),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
