use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, StopMetric, TrainConfig};
use crate::data::{Dataset, Table};
use crate::error::{Error, Result};
use crate::evaluation::split_metrics;
use crate::numerics::{Adam, AdamConfig, Scalar, Tape};
use crate::signals::Split;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-day loss over the epoch's optimization steps.
    pub train_loss: f64,
    pub valid_da: f64,
    pub valid_pr_auc: Option<f64>,
    pub valid_roc_auc: Option<f64>,
    /// Validation score improved on every earlier epoch.
    pub improved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean per-day training loss at initialization.
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.map(|e| &self.epochs[e - 1])
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per epoch run.
pub fn history_table(h: &TrainHistory) -> Table {
    let mut t = Table::new("history", &["epoch", "train_loss", "valid_da", "valid_pr_auc", "valid_roc_auc", "improved"]);
    for e in &h.epochs {
        t.push(vec![
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.valid_da.to_string(),
            opt(e.valid_pr_auc),
            opt(e.valid_roc_auc),
            e.improved.to_string(),
        ]);
    }
    t
}

/// Fits a model from `config.seed`. Each training day is one Adam step;
/// after every epoch the validation split is scored and the best
/// parameters so far are kept. Stops after `max_epochs` or `patience`
/// epochs without improvement. `threads` only affects validation scoring.
pub fn train<T: Scalar>(dataset: &Dataset, config: &TrainConfig, threads: usize) -> Result<(Model<T>, TrainHistory)> {
    let mut model = Model::<T>::new(config.clone())?;
    let index = model.index(dataset);
    let mut days: Vec<usize> = dataset.calendar.eligible_days(Split::Train, config.lookback).collect();
    if days.is_empty() {
        return Err(Error::Data(format!("no training days with a {}-day window", config.lookback)));
    }
    if dataset.calendar.eligible_days(Split::Valid, config.lookback).is_empty() {
        return Err(Error::Data("validation split has no days".into()));
    }
    let initial_loss = model.split_loss(dataset, Split::Train)?;
    let mut history = TrainHistory { initial_loss, epochs: Vec::new(), best_epoch: None, stopped_early: false };
    if !initial_loss.is_finite() {
        return Err(Error::Divergence(format!("initial training loss is {initial_loss}")));
    }

    let mut adam = Adam::new(AdamConfig { learning_rate: config.learning_rate, ..AdamConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut best: Option<(f64, crate::numerics::Params<T>)> = None;
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        days.shuffle(&mut rng);
        let mut total = 0.0;
        for &day in &days {
            let mut tape = Tape::new();
            let loss = model.day_loss(&mut tape, dataset, &index, day)?;
            let value = tape.value(loss).item()?.as_f64();
            if !value.is_finite() {
                return Err(Error::Divergence(format!(
                    "loss {value} at epoch {epoch} on {} (day {day})",
                    dataset.calendar.dates()[day]
                )));
            }
            total += value;
            let mut grads = tape.backward(loss)?;
            grads.complete_for(&model.params);
            adam.step(&mut model.params, &grads)?;
            if !model.params.all_finite() {
                return Err(Error::Divergence(format!("non-finite parameters after epoch {epoch} day {day}")));
            }
        }

        let valid = model.predict_split(dataset, Split::Valid, threads)?;
        let m = split_metrics(Split::Valid.name(), &valid)?;
        let score = match config.stop_metric {
            StopMetric::PrAuc => m.pr_auc,
            StopMetric::RocAuc => m.roc_auc,
        }
        .unwrap_or(m.da);
        let improved = best.as_ref().is_none_or(|(b, _)| score > *b);
        if improved {
            best = Some((score, model.params.clone()));
            history.best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: total / days.len() as f64,
            valid_da: m.da,
            valid_pr_auc: m.pr_auc,
            valid_roc_auc: m.roc_auc,
            improved,
        });
        if stale >= config.patience {
            history.stopped_early = epoch < config.max_epochs;
            break;
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, history))
}
