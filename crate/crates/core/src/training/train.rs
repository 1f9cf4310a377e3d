//! Deterministic training loop.

use std::fmt::Write as _;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::data::{unbatch, BatchStream};
use super::loss::{evaluate_loss, loss_var, LossConfig, LossParts};
use super::schedule::PlateauSchedule;
use crate::codec::image::RgbImage;
use crate::entropy::QuantMode;
use crate::error::{FlicError, Result};
use crate::model::FlicModel;
use crate::numerics::{Adam, Graph, Real, Tensor};

const DATA_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Batch-mean loss parts of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub parts: LossParts,
    pub lr: f64,
}

pub const TRACE_HEADER: &str = "step,rate_L,rate_H,dist_full,dist_base,total,lr";

impl TraceRow {
    pub fn to_csv(&self) -> String {
        let p = &self.parts;
        format!(
            "{},{},{},{},{},{},{}",
            self.step, p.rate_low, p.rate_high, p.dist_full, p.dist_base, p.total, self.lr
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRow {
    /// 1-based.
    pub epoch: usize,
    pub train: LossParts,
    pub val: Option<LossParts>,
    /// Learning rate for the next epoch.
    pub lr: f64,
}

pub struct TrainOutcome {
    pub model: FlicModel<f32>,
    pub trace: Vec<TraceRow>,
    pub epochs: Vec<EpochRow>,
}

impl TrainOutcome {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from(TRACE_HEADER);
        for r in &self.trace {
            let _ = write!(s, "\n{}", r.to_csv());
        }
        s.push('\n');
        s
    }

    /// Mean total loss of trace rows `range`.
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let rows = &self.trace[range];
        rows.iter().map(|r| r.parts.total).sum::<f64>() / rows.len() as f64
    }
}

/// Accumulates the gradient of the batch-mean loss and applies one Adam update.
pub fn train_step<T: Real>(
    model: &mut FlicModel<T>,
    images: &[Tensor<T>],
    cfg: &LossConfig,
    adam: &Adam,
    rng: &mut dyn RngCore,
) -> Result<LossParts> {
    if images.is_empty() {
        return Err(FlicError::invalid("empty batch"));
    }
    let scale = T::from_f64(1.0 / images.len() as f64);
    let mut parts = Vec::with_capacity(images.len());
    model.params_mut().zero_grad();
    for x in images {
        let g = Graph::new();
        let p = model.params().bind(&g);
        let (loss, lp) = loss_var(&g, &p, model, &g.constant(x.clone()), cfg, QuantMode::Noise, Some(&mut *rng))?;
        let grads = g.backward(&loss.scale(scale))?;
        model.params_mut().accumulate(&p, &grads)?;
        parts.push(lp);
    }
    adam.step(model.params_mut().params_mut());
    Ok(LossParts::mean(&parts))
}

/// Mean loss over whole images with rounding quantization.
pub fn validation_loss<T: Real>(model: &FlicModel<T>, images: &[RgbImage], cfg: &LossConfig) -> Result<LossParts> {
    let parts = images
        .iter()
        .map(|img| evaluate_loss(model, &img.to_tensor(), cfg, QuantMode::Round, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(LossParts::mean(&parts))
}

/// Names of parameters whose gradient is identically zero for one noisy loss
/// evaluation on `image`.
pub fn dead_parameters<T: Real>(model: &FlicModel<T>, image: &Tensor<T>, cfg: &LossConfig, seed: u64) -> Result<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Graph::new();
    let p = model.params().bind(&g);
    let (loss, _) = loss_var(&g, &p, model, &g.constant(image.clone()), cfg, QuantMode::Noise, Some(&mut rng))?;
    let grads = g.backward(&loss)?;
    let mut store = model.params().clone();
    store.zero_grad();
    store.accumulate(&p, &grads)?;
    Ok(store
        .iter()
        .filter(|q| q.grad().is_none_or(|t| t.data().iter().all(|v| *v == T::zero())))
        .map(|q| q.name().to_string())
        .collect())
}

/// Trains a fresh model of `cfg.preset` seeded with `cfg.seed`.
///
/// Given the same config and images the result is bit-identical: crops come from
/// one seeded stream on a data thread, quantization noise from another.
/// `on_step` sees every trace row as it is produced. With `checkpoints`, weights
/// are saved as `step_<n>.flcw` every `checkpoint_every` steps and as `final.flcw`.
pub fn train(
    cfg: &TrainConfig,
    train_set: Vec<RgbImage>,
    val_set: &[RgbImage],
    checkpoints: Option<&Path>,
    mut on_step: impl FnMut(&TraceRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let loss_cfg = cfg.loss()?;
    let mut model = FlicModel::<f32>::new(cfg.model_config()?, cfg.seed)?;
    if let Some(dir) = checkpoints {
        std::fs::create_dir_all(dir)?;
    }
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    data_rng.set_stream(DATA_STREAM);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(NOISE_STREAM);

    let stream = BatchStream::new(train_set, cfg.batch, cfg.crop, data_rng)?;
    let (batches, worker) = stream.spawn(cfg.steps, cfg.prefetch);
    let mut schedule = PlateauSchedule::new(cfg.lr);
    schedule.factor = cfg.lr_factor;
    schedule.patience = cfg.lr_patience;
    schedule.warmup_epochs = cfg.lr_warmup_epochs;
    schedule.threshold = cfg.lr_threshold;

    let mut trace = Vec::with_capacity(cfg.steps);
    let mut epochs = Vec::new();
    let mut epoch_parts = Vec::new();
    for step in 1..=cfg.steps {
        let batch = batches
            .recv()
            .map_err(|_| FlicError::invalid("data thread stopped early"))??;
        let images = unbatch(&batch.images)?;
        let lr = schedule.lr;
        let parts = train_step(&mut model, &images, &loss_cfg, &Adam::with_lr(lr), &mut noise_rng)?;
        let row = TraceRow { step, parts, lr };
        on_step(&row);
        trace.push(row);
        epoch_parts.push(parts);
        if batch.last_of_epoch {
            let val = if val_set.is_empty() {
                None
            } else {
                Some(validation_loss(&model, val_set, &loss_cfg)?)
            };
            if let Some(v) = &val {
                schedule.step(v.total);
            }
            let row = EpochRow {
                epoch: batch.epoch + 1,
                train: LossParts::mean(&epoch_parts),
                val,
                lr: schedule.lr,
            };
            log::info!("epoch {} train {:.4} val {:?} lr {}", row.epoch, row.train.total, val.map(|v| v.total), row.lr);
            epochs.push(row);
            epoch_parts.clear();
        }
        if let Some(dir) = checkpoints {
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                model.save_weights(dir.join(format!("step_{step}.flcw")))?;
            }
        }
    }
    drop(batches);
    worker.join().map_err(|_| FlicError::invalid("data thread panicked"))?;
    if let Some(dir) = checkpoints {
        model.save_weights(dir.join("final.flcw"))?;
    }
    Ok(TrainOutcome { model, trace, epochs })
}
