use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, Evaluation};
use super::optim::{clip_global_norm, lr_at_epoch, Adam};
use crate::data::{shuffle_windows, PreparedData, WindowBatch};
use crate::error::{Error, Result};
use crate::model::config::positive;
use crate::model::{Esgcn, LossConfig};
use crate::rng;
use crate::tensor::Graph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub lr_decay_every: usize,
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Seeds parameter initialization and window shuffling.
    pub seed: u64,
    /// Global gradient-norm bound; no clipping when absent.
    pub clip: Option<f64>,
    pub huber_delta: f64,
    /// Stops after this many optimizer steps in total.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr0: 3e-4,
            lr_decay_every: 5,
            lr_decay: 0.7,
            weight_decay: 1e-4,
            batch_size: 64,
            seed: 0,
            clip: None,
            huber_delta: 1.0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| {
            Err(Error::Config {
                path: format!("train.{key}"),
                msg: msg.into(),
            })
        };
        if self.epochs == 0 {
            return bad("epochs", "must be positive");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0", "must be positive");
        }
        if self.lr_decay_every == 0 {
            return bad("lr_decay_every", "must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay", "must be in (0, 1]");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", "must be >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if matches!(self.clip, Some(c) if !positive(c)) {
            return bad("clip", "must be positive when set");
        }
        if !positive(self.huber_delta) {
            return bad("huber_delta", "must be positive");
        }
        if self.max_steps == Some(0) {
            return bad("max_steps", "must be positive when set");
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        lr_at_epoch(self.lr0, self.lr_decay, self.lr_decay_every, epoch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub huber: f64,
    /// Unweighted node contrastive term; 0 without the ES module.
    pub contrastive: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub train_loss: f64,
    pub train_huber: f64,
    pub train_contrastive: f64,
    pub val_rmse: f64,
    pub val_mae: f64,
    pub val_mape: f64,
}

/// Hooks into the training loop, e.g. to persist the best checkpoint as
/// soon as it appears.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) {}

    fn on_epoch(&mut self, _record: &EpochRecord, _improved: bool, _model: &Esgcn<f32>) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Model from the epoch with the lowest validation MAE.
    pub best: Esgcn<f32>,
    pub best_epoch: usize,
    pub best_val: Evaluation,
    pub epochs: Vec<EpochRecord>,
    pub steps: usize,
}

pub struct Trainer {
    model: Esgcn<f32>,
    adam: Adam,
    cfg: TrainConfig,
    loss: LossConfig,
    steps: usize,
}

impl Trainer {
    pub fn new(model: Esgcn<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(model.params(), cfg.weight_decay);
        let loss = LossConfig {
            delta: cfg.huber_delta,
            lambda: model.config().lambda,
        };
        Ok(Self {
            model,
            adam,
            cfg,
            loss,
            steps: 0,
        })
    }

    pub fn model(&self) -> &Esgcn<f32> {
        &self.model
    }

    pub fn into_model(self) -> Esgcn<f32> {
        self.model
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// One forward/backward pass and Adam update on `batch`.
    pub fn step(&mut self, batch: &WindowBatch<f32>, lr: f64) -> Result<StepRecord> {
        let mut g = Graph::new();
        let p = self.model.params().bind(&mut g);
        let x = g.constant(batch.inputs.clone());
        let y = g.constant(batch.targets.clone());
        let out = self.model.forward(&mut g, &p, x)?;
        let terms = self.model.objective(&mut g, &out, y, self.loss)?;
        let record = StepRecord {
            step: self.steps,
            loss: g.value(terms.total).item() as f64,
            huber: g.value(terms.huber).item() as f64,
            contrastive: terms.contrastive.map_or(0.0, |c| g.value(c).item() as f64),
        };
        if !record.loss.is_finite() {
            return Err(Error::Diverged {
                step: self.steps,
                loss: record.loss,
            });
        }
        let mut grads = g.backward(terms.total)?;
        let mut grads = p.gradients(&mut grads, self.model.params());
        if let Some(max) = self.cfg.clip {
            clip_global_norm(&mut grads, max);
        }
        self.adam.step(self.model.params_mut(), &grads, lr)?;
        self.steps += 1;
        Ok(record)
    }

    /// Full training run with per-epoch validation and best-MAE selection.
    /// On divergence the error is returned; observers have already seen
    /// every improved model.
    pub fn train(mut self, data: &PreparedData, observer: &mut dyn TrainObserver) -> Result<TrainOutcome> {
        if data.splits.train.is_empty() || data.splits.val.is_empty() {
            return Err(Error::Data("training and validation splits must be nonempty".into()));
        }
        let mut shuffle_rng = rng::derived(self.cfg.seed, 0x5eed_0002);
        let mut windows = data.splits.train.clone();
        let mut epochs = Vec::new();
        let mut best: Option<(Esgcn<f32>, usize, Evaluation)> = None;
        let limit = self.cfg.max_steps.unwrap_or(usize::MAX);
        for epoch in 0..self.cfg.epochs {
            if self.steps >= limit {
                break;
            }
            let lr = self.cfg.lr_at_epoch(epoch);
            shuffle_windows(&mut windows, &mut shuffle_rng);
            let (mut loss, mut huber, mut contrastive, mut taken) = (0.0, 0.0, 0.0, 0);
            for chunk in windows.chunks(self.cfg.batch_size) {
                if self.steps >= limit {
                    break;
                }
                let batch = data.batch::<f32>(chunk);
                let rec = self.step(&batch, lr)?;
                observer.on_step(&rec);
                loss += rec.loss;
                huber += rec.huber;
                contrastive += rec.contrastive;
                taken += 1;
            }
            let val = evaluate(&self.model, data, &data.splits.val, self.cfg.batch_size)?;
            let t = taken.max(1) as f64;
            let record = EpochRecord {
                epoch,
                lr,
                steps: taken,
                train_loss: loss / t,
                train_huber: huber / t,
                train_contrastive: contrastive / t,
                val_rmse: val.overall.rmse,
                val_mae: val.overall.mae,
                val_mape: val.overall.mape,
            };
            let improved = best.as_ref().is_none_or(|(_, _, b)| val.overall.mae < b.overall.mae);
            log::info!(
                "epoch {epoch}: loss {:.4} (huber {:.4}, contrastive {:.4}) val MAE {:.4}{}",
                record.train_loss,
                record.train_huber,
                record.train_contrastive,
                record.val_mae,
                if improved { " *" } else { "" }
            );
            observer.on_epoch(&record, improved, &self.model)?;
            if improved {
                best = Some((self.model.clone(), epoch, val));
            }
            epochs.push(record);
        }
        let (best, best_epoch, best_val) = best.expect("at least one epoch runs");
        Ok(TrainOutcome {
            best,
            best_epoch,
            best_val,
            epochs,
            steps: self.steps,
        })
    }
}

/// Trains a fresh model seeded from `cfg.seed`, then scores the selected
/// checkpoint on the test split.
pub fn fit_and_test(
    model: &crate::model::ModelConfig,
    cfg: &TrainConfig,
    data: &PreparedData,
    observer: &mut dyn TrainObserver,
) -> Result<(TrainOutcome, Evaluation)> {
    let initial = Esgcn::new(model.clone(), cfg.seed)?;
    log::info!("model has {} parameters", initial.parameter_count());
    let outcome = Trainer::new(initial, cfg.clone())?.train(data, observer)?;
    let test = evaluate(&outcome.best, data, &data.splits.test, cfg.batch_size)?;
    Ok((outcome, test))
}
