use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::TrainingSample;
use super::eval::{evaluate, EvalReport};
use super::loss::{multi_rater_loss, LossSpec};
use super::optim::{lr_schedule, Adam};
use super::TrainConfig;
use crate::model::DocIq;
use crate::seed::{child_seed, rng_for};
use crate::{Error, Result};

/// One record of the JSON-lines training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Optimizer steps taken so far.
    pub steps: usize,
    pub train_loss: f64,
    pub param_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<EvalReport>,
    /// Why validation metrics are missing, if they are.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_error: Option<String>,
}

pub struct TrainOutcome {
    /// Parameters of the best validation epoch (the last epoch without a
    /// validation split).
    pub best: DocIq,
    pub best_epoch: usize,
    pub last: DocIq,
    pub log: Vec<EpochLog>,
}

pub fn loss_spec(config: &TrainConfig, model: &DocIq) -> LossSpec {
    LossSpec {
        order_invariant: config.order_invariant,
        mos_only: !model.config().multi_rater,
        ..LossSpec::new(config.loss_weights)
    }
}

/// Mean loss over `samples` without augmentation.
pub fn dataset_loss(model: &DocIq, samples: &[TrainingSample], spec: &LossSpec) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::NoData("empty dataset".into()));
    }
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let p = model.forward(&s.image, s.mask.as_ref())?;
            Ok(multi_rater_loss(&p, &s.targets, spec)?.0)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mean loss and gradient over one batch. Per-sample work runs in
/// parallel; the reduction is sequential so results do not depend on
/// thread scheduling.
pub fn batch_gradient(
    model: &DocIq,
    batch: &[&TrainingSample],
    spec: &LossSpec,
) -> Result<(f64, DocIq)> {
    let parts: Vec<(f64, DocIq)> = batch
        .par_iter()
        .map(|s| {
            let (pred, cache) = model.forward_train(&s.image, s.mask.as_ref())?;
            let (loss, g) = multi_rater_loss(&pred, &s.targets, spec)?;
            let mut grads = model.zeros_like();
            model.backward(&cache, &g, &mut grads);
            Ok((loss, grads))
        })
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let (mut loss, mut total) = iter.next().ok_or_else(|| Error::NoData("empty batch".into()))?;
    for (l, g) in iter {
        loss += l;
        total.accumulate(&g);
    }
    let k = 1.0 / batch.len() as f64;
    total.scale_params(k);
    Ok((loss * k, total))
}

fn mean_srcc(r: &EvalReport) -> f64 {
    r.average.srcc
}

pub fn train(
    model: DocIq,
    train_set: &[TrainingSample],
    val_set: &[TrainingSample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::NoData("empty training split".into()));
    }
    let spec = loss_spec(config, &model);
    let param_count = model.param_count();
    let mut model = model;
    let mut adam = Adam::new(&model);
    let mut best: Option<(f64, usize, DocIq)> = None;
    let mut log = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    let flipped: Vec<TrainingSample> = if config.augment {
        train_set.par_iter().map(TrainingSample::flipped).collect()
    } else {
        Vec::new()
    };

    'epochs: for epoch in 0..config.epochs {
        let lr = lr_schedule(config.lr, config.decay, config.step_size, epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng_for(config.seed, &format!("epoch/{epoch}/order")));
        let mut aug = rng_for(config.seed, &format!("epoch/{epoch}/augment"));
        let mut loss_sum = 0.0;
        let mut batches = 0;
        let mut stop = false;
        for chunk in order.chunks(config.batch) {
            if config.max_steps.is_some_and(|m| steps >= m) {
                stop = true;
                break;
            }
            let batch: Vec<&TrainingSample> = chunk
                .iter()
                .map(|&i| {
                    if config.augment && aug.gen_bool(0.5) {
                        &flipped[i]
                    } else {
                        &train_set[i]
                    }
                })
                .collect();
            let (loss, grads) = batch_gradient(&model, &batch, &spec)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step: steps, loss });
            }
            adam.step(&mut model, &grads, lr);
            steps += 1;
            loss_sum += loss;
            batches += 1;
        }
        if batches == 0 {
            break 'epochs;
        }
        let (val, val_error) = if val_set.is_empty() {
            (None, Some("no validation split".to_string()))
        } else {
            match evaluate(&model, val_set) {
                Ok(r) => (Some(r), None),
                Err(e @ (Error::UndefinedCorrelation(_) | Error::InvalidArgument(_))) => (None, Some(e.to_string())),
                Err(e) => return Err(e),
            }
        };
        let record = EpochLog {
            epoch,
            lr,
            steps,
            train_loss: loss_sum / batches as f64,
            param_count,
            val,
            val_error,
        };
        log::info!(
            "epoch {epoch}: loss {:.5}, val srcc {}",
            record.train_loss,
            record.val.as_ref().map_or("-".into(), |v| format!("{:.4}", mean_srcc(v)))
        );
        on_epoch(&record)?;
        let score = match &record.val {
            Some(v) => mean_srcc(v),
            None if val_set.is_empty() => f64::INFINITY,
            None => f64::NEG_INFINITY,
        };
        // later epochs win ties only without a validation split
        let better = match &best {
            None => true,
            Some((s, _, _)) => score > *s || (score == f64::INFINITY),
        };
        if better {
            best = Some((score, epoch, model.clone()));
        }
        log.push(record);
        if stop {
            break;
        }
    }
    let (_, best_epoch, best_model) = best.ok_or_else(|| Error::NoData("no optimizer step was taken".into()))?;
    Ok(TrainOutcome {
        best: best_model,
        best_epoch,
        last: model,
        log,
    })
}

/// Seed for network initialisation under a training config.
pub fn init_seed(config: &TrainConfig) -> u64 {
    child_seed(config.seed, "model")
}
