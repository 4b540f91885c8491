use super::data::{make_batch, SyntheticScene};
use super::optim::AdamW;
use super::{lr_at, TrainConfig};
use crate::error::{Error, Result};
use crate::head::loss::LossConfig;
use crate::head::{evaluate_ap, ApReport, DetectionSet, InferConfig, LossBreakdown};
use crate::model::Model;
use crate::params::{Group, ParamStore};
use crate::tensor::{Scalar, Tape};
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr_backbone: f64,
    pub lr_rest: f64,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainReport {
    pub history: Vec<StepLog>,
}

impl TrainReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.history.first().map(|s| s.loss.total)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.history.last().map(|s| s.loss.total)
    }

    /// Smallest loss recorded within the first `steps` steps.
    pub fn best_within(&self, steps: usize) -> Option<f64> {
        self.history
            .iter()
            .take(steps)
            .map(|s| s.loss.total)
            .min_by(f64::total_cmp)
    }
}

/// Runs `cfg.epochs` passes over `scenes` in fixed batch order. Every step
/// records a forward pass, backpropagates the loss, copies gradients into
/// `store` and applies AdamW. A non-finite loss or gradient aborts with
/// [`Error::Diverged`].
pub fn train<T: Scalar>(
    model: &Model,
    store: &mut ParamStore<T>,
    scenes: &[SyntheticScene],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainReport> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::config("no training scenes"));
    }
    let batches = scenes
        .chunks(cfg.batch_size)
        .map(make_batch::<T>)
        .collect::<Result<Vec<_>>>()?;
    let loss_cfg = LossConfig::default();
    let mut opt = AdamW::default();
    let mut report = TrainReport::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let (lr_b, lr_r) = lr_at(cfg, epoch);
        for (images, gts) in &batches {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape);
            let x = tape.constant(images.clone());
            let (loss, breakdown) = match model.loss(&mut tape, &p, x, gts, &loss_cfg) {
                Ok(v) => v,
                Err(Error::NonFinite(what)) => {
                    return Err(Error::Diverged {
                        step,
                        detail: format!("non-finite loss from {what}"),
                    })
                }
                Err(e) => return Err(e),
            };
            if !breakdown.total.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: format!("loss {}", breakdown.total),
                });
            }
            let grads = tape.backward(loss)?;
            store.store_grads(&p, &grads);
            if let Some((_, bad)) = store
                .iter()
                .find(|(_, q)| q.tensor.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())))
            {
                return Err(Error::Diverged {
                    step,
                    detail: format!("non-finite gradient in {}", bad.name),
                });
            }
            opt.step(
                store,
                |g| match g {
                    Group::Backbone => lr_b,
                    Group::Rest => lr_r,
                },
                cfg.weight_decay,
            );
            let log = StepLog {
                step,
                epoch,
                lr_backbone: lr_b,
                lr_rest: lr_r,
                loss: breakdown,
            };
            on_step(&log);
            report.history.push(log);
            step += 1;
        }
    }
    store.clear_grads();
    Ok(report)
}

/// Detections and AP of `store` on `scenes`.
pub fn evaluate<T: Scalar>(
    model: &Model,
    store: &ParamStore<T>,
    scenes: &[SyntheticScene],
    batch_size: usize,
    cfg: &InferConfig,
) -> Result<(Vec<DetectionSet>, ApReport)> {
    let mut sets = Vec::with_capacity(scenes.len());
    let mut gts = Vec::with_capacity(scenes.len());
    for (i, chunk) in scenes.chunks(batch_size.max(1)).enumerate() {
        let (images, g) = make_batch::<T>(chunk)?;
        sets.extend(model.detect(store, &images, i * batch_size.max(1), cfg)?);
        gts.extend(g);
    }
    let ap = evaluate_ap(&sets, &gts);
    Ok((sets, ap))
}
