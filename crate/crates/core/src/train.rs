//! Mini-batch training with plateau learning-rate halving, and evaluation.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{DropoutCtx, Mcdn};
use crate::optim::{adam_step, clip_global_norm, AdamConfig, AdamState};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::text::EncodedExample;

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// Examples per graph during evaluation.
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Epochs without a new best validation F1 before the rate is cut.
    pub patience: usize,
    pub lr_decay: f64,
    pub clip_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch: 32,
            epochs: 20,
            patience: 2,
            lr_decay: 0.5,
            clip_norm: 5.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.batch == 0 || self.epochs == 0 || self.patience == 0 {
            return bad("batch, epochs and patience must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return bad("lr_decay must lie in (0, 1)");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Tracks the best validation F1 and signals when the rate should drop:
/// once `patience` epochs in a row fail to beat the best. The counter
/// restarts after each cut.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    patience: usize,
    best: f64,
    since_best: usize,
}

impl PlateauSchedule {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::NEG_INFINITY,
            since_best: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Records one epoch's score; returns whether the rate should be cut.
    pub fn observe(&mut self, score: f64) -> bool {
        if score > self.best {
            self.best = score;
            self.since_best = 0;
            return false;
        }
        self.since_best += 1;
        if self.since_best >= self.patience {
            self.since_best = 0;
            return true;
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Rate used during this epoch.
    pub lr: f64,
    /// Mean objective over the epoch's batches.
    pub train_loss: f64,
    #[serde(rename = "valid_F1")]
    pub valid_f1: f64,
    pub valid: MetricsReport,
    pub best: bool,
    pub lr_halved: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
}

/// Fits `model` on `train_set`, scoring `valid_set` after every epoch. On
/// return the model holds the parameters of the best-F1 epoch.
pub fn train(
    model: &mut Mcdn,
    train_set: &[EncodedExample],
    valid_set: &[EncodedExample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if valid_set.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let root = Rng::new(cfg.seed);
    let mut shuffle_rng = root.fork(SHUFFLE_STREAM);
    let mut drop_rng = root.fork(DROPOUT_STREAM);
    let mut adam = AdamState::new(&model.params);
    let mut schedule = PlateauSchedule::new(cfg.patience);
    let mut lr = cfg.lr;
    let mut best: Option<(usize, ParamStore)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, idx) in order.chunks(cfg.batch).enumerate() {
            let batch: Vec<EncodedExample> = idx.iter().map(|&i| train_set[i].clone()).collect();
            model.params.zero_grads();
            let mut g = Graph::new();
            let mut drop = DropoutCtx::new(model.config.dropout, &mut drop_rng);
            let loss = model.objective(&mut g, &batch, &mut drop)?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    norms: model.params.norms(),
                });
            }
            g.backward_into(loss, &mut model.params)?;
            clip_global_norm(&mut model.params, cfg.clip_norm);
            adam_step(&mut model.params, &mut adam, &cfg.adam(lr));
            total += value;
            batches += 1;
        }
        model.params.zero_grads();

        let valid = evaluate(model, valid_set)?;
        let improved = valid.f1 > schedule.best();
        let halve = schedule.observe(valid.f1);
        if improved {
            best = Some((epoch, model.params.clone()));
        }
        let entry = EpochLog {
            epoch,
            lr,
            train_loss: total / batches as f64,
            valid_f1: valid.f1,
            valid,
            best: improved,
            lr_halved: halve,
        };
        on_epoch(&entry);
        log.push(entry);
        if halve {
            lr *= cfg.lr_decay;
        }
    }

    let best_epoch = match best {
        Some((epoch, params)) => {
            model.params = params;
            epoch
        }
        None => cfg.epochs,
    };
    Ok(TrainOutcome { log, best_epoch })
}

/// Threshold and ranking metrics of `model` on labelled `data`, dropout off.
pub fn evaluate(model: &Mcdn, data: &[EncodedExample]) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let labels = data
        .iter()
        .enumerate()
        .map(|(i, ex)| ex.label.ok_or(Error::MissingLabel { index: i }))
        .collect::<Result<Vec<u8>>>()?;
    let scores = model.predict_causal(data, EVAL_CHUNK)?;
    Ok(MetricsReport::compute(&scores, &labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_halves_after_fourth_epoch() {
        let mut s = PlateauSchedule::new(2);
        let cuts: Vec<bool> = [0.50, 0.60, 0.59, 0.58].iter().map(|&f| s.observe(f)).collect();
        assert_eq!(cuts, [false, false, false, true]);
    }

    #[test]
    fn plateau_counter_restarts_after_cut() {
        let mut s = PlateauSchedule::new(2);
        let cuts: Vec<bool> = [0.5, 0.4, 0.4, 0.4, 0.4, 0.6, 0.6].iter().map(|&f| s.observe(f)).collect();
        assert_eq!(cuts, [false, false, true, false, true, false, false]);
    }

    #[test]
    fn equal_score_is_not_improvement() {
        let mut s = PlateauSchedule::new(1);
        assert!(!s.observe(0.5));
        assert!(s.observe(0.5));
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.batch, c.epochs, c.patience), (1e-4, 32, 20, 2));
        assert_eq!(c.clip_norm, 5.0);
        c.validate().unwrap();
    }
}
