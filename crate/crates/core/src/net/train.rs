use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::Sample;
use super::loss::{total_loss, IGNORE_INDEX};
use super::model::Model;
use crate::autodiff::{Adam, AdamConfig, Tape};
use crate::error::{bail, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_seg_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation segmentation loss.
    pub model: Model,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

pub struct Batch {
    pub input: Tensor,
    pub seg_targets: Vec<usize>,
    pub flow_targets: Vec<usize>,
}

pub fn make_batch(samples: &[&Sample], (h, w): (usize, usize)) -> Result<Batch> {
    let mut data = Vec::with_capacity(samples.len() * h * w);
    let mut seg_targets = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if s.image.len() != h * w || s.targets.len() != h * w {
            bail!(Dimension, "sample is not {}x{}", h, w);
        }
        data.extend_from_slice(&s.image);
        seg_targets.extend_from_slice(&s.targets);
    }
    Ok(Batch {
        input: Tensor::new(vec![samples.len(), 1, h, w], data)?,
        seg_targets,
        flow_targets: samples.iter().map(|s| s.flow_type).collect(),
    })
}

/// One optimiser step on `batch`; returns the total loss before the update.
pub fn train_step(model: &mut Model, opt: &mut Adam, batch: &Batch) -> Result<f64> {
    let mut tape = Tape::new();
    let input = tape.constant(batch.input.clone());
    let fwd = model.forward(&mut tape, input, true)?;
    let loss = total_loss(
        &mut tape,
        fwd.seg_logits,
        &batch.seg_targets,
        fwd.shape_logits,
        &batch.flow_targets,
        model.config.mu,
    )?;
    let value = tape.value(loss.total).data()[0];
    if !value.is_finite() {
        bail!(Numerical, "training loss became {}", value);
    }
    tape.backward(loss.total)?;
    let grads: Vec<Tensor> = fwd
        .params
        .iter()
        .map(|&p| tape.take_grad(p).expect("parameter gradient"))
        .collect();
    opt.step(model.params.iter_mut().map(|p| &mut p.tensor).zip(&grads));
    Ok(value)
}

/// Pixel-pooled mean segmentation cross-entropy over `samples`.
pub fn segmentation_loss(model: &Model, samples: &[Sample], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = make_batch(&refs, model.config.input_hw)?;
        let n = batch.seg_targets.iter().filter(|&&t| t != IGNORE_INDEX).count();
        if n == 0 {
            continue;
        }
        let mut tape = Tape::new();
        let input = tape.constant(batch.input);
        let fwd = model.forward(&mut tape, input, false)?;
        let ce = tape.cross_entropy(fwd.seg_logits, &batch.seg_targets, Some(IGNORE_INDEX))?;
        total += tape.value(ce).data()[0] * n as f64;
        count += n;
    }
    if count == 0 {
        bail!(Data, "no labelled pixels to evaluate");
    }
    let loss = total / count as f64;
    if !loss.is_finite() {
        bail!(Numerical, "validation loss became {}", loss);
    }
    Ok(loss)
}

pub fn train(model: Model, train_set: &[Sample], val_set: &[Sample], tc: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, train_set, val_set, tc, |_| {})
}

/// Adam over seeded shuffled mini-batches, early-stopped on validation
/// segmentation loss. `on_epoch` sees every finished epoch.
pub fn train_with(
    mut model: Model,
    train_set: &[Sample],
    val_set: &[Sample],
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    tc.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        bail!(Data, "training and validation splits must be non-empty");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut opt = Adam::new(
        model.params.iter().map(|p| &p.tensor),
        AdamConfig {
            lr: tc.lr,
            ..AdamConfig::default()
        },
    );
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut since_best = 0;
    for epoch in 1..=tc.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut steps = 0;
        for idx in order.chunks(tc.batch_size) {
            let refs: Vec<&Sample> = idx.iter().map(|&i| &train_set[i]).collect();
            let batch = make_batch(&refs, model.config.input_hw)?;
            sum += train_step(&mut model, &mut opt, &batch)?;
            steps += 1;
        }
        let stats = EpochStats {
            epoch,
            train_loss: sum / steps as f64,
            val_seg_loss: segmentation_loss(&model, val_set, tc.batch_size)?,
        };
        history.push(stats);
        on_epoch(&stats);
        match &best {
            Some((b, _, _)) if stats.val_seg_loss >= *b => {
                since_best += 1;
                if since_best >= tc.early_stop_patience {
                    break;
                }
            }
            _ => {
                best = Some((stats.val_seg_loss, epoch, model.clone()));
                since_best = 0;
            }
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}
