//! Training loops for the adaptive method and its baselines.

mod config;
mod grid;
mod record;
mod session;

pub use config::{Method, TrainerConfig};
pub use grid::{export_decision_grid, AxisAlignment, Bounds, DecisionGrid};
pub use record::{EpochRecord, RunRecord, RunStatus};
pub use session::{BatchLosses, Session, TrainEvent, TrainObserver};

use crate::council::BiasCouncil;
use crate::metrics::{evaluate_groups, MetricBlock};
use crate::nn::Mlp;
use crate::synth::Dataset;
use crate::{Error, Result};

/// Best-validation debiasing model, final models and the run record.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: Mlp,
    /// The debiasing model after the last epoch, before model selection.
    pub final_model: Mlp,
    pub council: Option<BiasCouncil>,
    pub record: RunRecord,
}

impl TrainOutput {
    /// Evaluates the selected model on `test` and stores the result in the record.
    pub fn evaluate_test(&mut self, test: &Dataset) -> Result<MetricBlock> {
        let block = evaluate_groups(&self.model, test)?;
        self.record.test = Some(block);
        Ok(block)
    }
}

/// Trains the adaptive method. `cfg.method` must be [`Method::AdaAbc`].
pub fn train_ada_abc(train: &Dataset, val: &Dataset, cfg: &TrainerConfig) -> Result<TrainOutput> {
    if cfg.method != Method::AdaAbc {
        return Err(Error::config(format!("train_ada_abc called with method {}", cfg.method)));
    }
    train_observed(train, val, cfg, &mut ())
}

/// Trains one of the baselines.
pub fn train_baseline(train: &Dataset, val: &Dataset, cfg: &TrainerConfig) -> Result<TrainOutput> {
    if cfg.method == Method::AdaAbc {
        return Err(Error::config("ada_abc is not a baseline"));
    }
    train_observed(train, val, cfg, &mut ())
}

pub fn train(train: &Dataset, val: &Dataset, cfg: &TrainerConfig) -> Result<TrainOutput> {
    train_observed(train, val, cfg, &mut ())
}

/// Runs the epoch loop with `observer` attached to every step.
///
/// Selects the epoch with the highest validation overall AUC (earliest on ties).
/// A non-finite loss or gradient aborts with [`Error::Diverged`].
pub fn train_observed(
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainerConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutput> {
    if val.dim() != train.dim() {
        return Err(Error::shape(format!(
            "validation has {} features, training {}",
            val.dim(),
            train.dim()
        )));
    }
    if !val.has_both_classes() {
        return Err(Error::config("validation split must contain both classes"));
    }
    let mut session = Session::new(train, cfg.clone())?;
    let mut record = RunRecord::new(cfg.clone());
    let mut best: Option<(f64, Mlp)> = None;
    let mut since_best = 0;

    for epoch in 0..cfg.max_epochs {
        let order = session.epoch_order();
        let mut sums = BatchLosses::default();
        let mut gce_sum = 0.0;
        let mut seen = 0.0;
        for (batch, indices) in order.chunks(cfg.batch_size).enumerate() {
            let diverged = |what: String, record: &RunRecord| Error::Diverged {
                epoch,
                batch,
                what,
                record: Box::new(RunRecord {
                    status: RunStatus::Diverged,
                    ..record.clone()
                }),
            };
            let losses = match session.step(indices, observer) {
                Ok(l) => l,
                Err(e) if e.is_numeric() => return Err(diverged(e.to_string(), &record)),
                Err(e) => return Err(e),
            };
            if !losses.is_finite() {
                return Err(diverged(format!("non-finite loss {losses:?}"), &record));
            }
            let w = indices.len() as f64;
            sums.agreement += losses.agreement * w;
            sums.disagreement += losses.disagreement * w;
            sums.objective += losses.objective * w;
            gce_sum += losses.gce.unwrap_or(0.0) * w;
            seen += w;
        }

        let val_block = evaluate_groups(session.model(), val)?;
        record.epochs.push(EpochRecord {
            epoch,
            agreement: sums.agreement / seen,
            disagreement: sums.disagreement / seen,
            objective: sums.objective / seen,
            gce: session.council().map(|_| gce_sum / seen),
            val: val_block,
        });

        let score = val_block
            .overall_auc
            .ok_or_else(|| Error::UndefinedMetric("validation overall AUC".into()))?;
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, session.model().clone()));
            record.best_epoch = Some(epoch);
            record.best_val = Some(val_block);
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                record.status = RunStatus::EarlyStopped;
                break;
            }
        }
    }
    if record.status == RunStatus::Running {
        record.status = RunStatus::Completed;
    }

    let (final_model, council) = session.into_parts();
    let (_, model) = best.expect("at least one epoch ran");
    Ok(TrainOutput {
        model,
        final_model,
        council,
        record,
    })
}

#[cfg(test)]
mod tests;
