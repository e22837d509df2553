//! Training loop, evaluation, checkpoints and gradient checking.

mod checkpoint;
mod gradcheck;
mod metrics;
mod optim;

use crate::config::{CheckpointSelection, TrainConfig};
use crate::dataset::{make_batches, Label};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{BatchOutput, Model, ModelInput};
use crate::params::ParamStore;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, gradient_error, GradCheckEntry, GradCheckOptions, GradCheckReport};
pub use metrics::{ClassMetrics, EpochLog, MetricsReport};
pub use optim::{AdamW, EarlyStopping, StopDecision};

/// Predictions and metrics over a sample list.
pub fn evaluate(
    model: &Model,
    store: &ParamStore,
    inputs: &[ModelInput],
    batch_size: usize,
    exec: Exec,
) -> Result<(MetricsReport, BatchOutput)> {
    let out = model.forward_all(store, inputs, batch_size, exec)?;
    let truth: Vec<Label> = inputs.iter().map(|x| x.label).collect();
    let report = MetricsReport::from_predictions(&truth, &out.predictions())?;
    Ok((report, out))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Selected parameters (best validation epoch or last, per config).
    pub store: ParamStore,
    /// 1-based epoch of `store`.
    pub epoch: usize,
    pub best_val_accuracy: f64,
    pub history: Vec<EpochLog>,
    pub stopped_early: bool,
    /// Validation metrics of `store`, with the loss history attached.
    pub report: MetricsReport,
}

/// Trains in place of `store`'s copy. Per epoch: shuffled mini-batches,
/// AdamW steps at `lr·γ^epoch`, then validation accuracy for early stopping.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &Model,
    mut store: ParamStore,
    train_set: &[ModelInput],
    val_set: &[ModelInput],
    cfg: &TrainConfig,
    seed: u64,
    exec: Exec,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("training needs non-empty train and validation sets"));
    }
    let mut opt = AdamW::new(cfg, &store);
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut best: Option<(usize, ParamStore, MetricsReport)> = None;
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut last_report = None;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let shuffle = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(epoch as u64);
        let batches = make_batches(train_set, cfg.batch_size, Some(shuffle), model.config.max_evidence)?;
        let (mut loss, mut class_loss, mut sim_loss, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for (b, batch) in batches.iter().enumerate() {
            let items = batch.gather(train_set);
            let (out, grads) = model.loss_and_grad(&store, &items, exec)?;
            if !out.loss.is_finite() || !grads.all_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    batch: b,
                    loss: out.loss,
                });
            }
            let n = items.len() as f64;
            loss += out.loss * n;
            class_loss += out.l_class * n;
            sim_loss += out.l_sim * n;
            correct += out
                .predictions()
                .iter()
                .zip(&items)
                .filter(|(p, x)| **p == x.label)
                .count();
            opt.step(&mut store, &grads, lr);
        }
        let n = train_set.len() as f64;
        let (val_report, val_out) = evaluate(model, &store, val_set, cfg.batch_size, exec)?;
        let log = EpochLog {
            epoch: epoch + 1,
            lr,
            train_loss: loss / n,
            train_class_loss: class_loss / n,
            train_sim_loss: sim_loss / n,
            train_accuracy: correct as f64 / n,
            val_loss: val_out.loss,
            val_accuracy: val_report.macro_accuracy,
        };
        log::info!(
            "epoch {} lr {:.3e} loss {:.4} train acc {:.3} val acc {:.3}",
            log.epoch,
            lr,
            log.train_loss,
            log.train_accuracy,
            log.val_accuracy
        );
        on_epoch(&log);
        history.push(log);
        let decision = stopper.observe(epoch, val_report.macro_accuracy);
        if decision.improved && cfg.checkpoint_selection == CheckpointSelection::BestValidation {
            best = Some((epoch + 1, store.clone(), val_report.clone()));
        }
        last_report = Some(val_report);
        if decision.stop {
            stopped_early = true;
            break;
        }
    }
    let best_val_accuracy = stopper.best().map_or(0.0, |(_, s)| s);
    let (epoch, store, mut report) = match (cfg.checkpoint_selection, best) {
        (CheckpointSelection::BestValidation, Some(b)) => b,
        _ => (history.len(), store, last_report.expect("at least one epoch")),
    };
    report.loss_history = history.clone();
    Ok(TrainOutcome {
        store,
        epoch,
        best_val_accuracy,
        history,
        stopped_early,
        report,
    })
}
