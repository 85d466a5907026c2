//! Minibatch Adam training with per-step adversarial item-aspect perturbation.

use std::collections::HashSet;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::defense::{defense_step, vanilla_step, DefenseConfig, StepOutcome};
use crate::aspects::AspectMatrices;
use crate::dataset::{DatasetSplit, Interaction};
use crate::diffcore::{Adam, ParamSet};
use crate::error::{Error, Result};
use crate::evalkit::ndcg_at;
use crate::harness::converge::{EarlyStopping, StopDecision};
use crate::models::{rank_items, Batch, Recommender};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// Positive interactions per batch; each gets one sampled negative.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Restarts at a tenth of the learning rate after divergence.
    pub max_retries: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 0.01,
            weight_decay: 1e-4,
            max_epochs: 30,
            patience: 3,
            seed: 0,
            max_retries: 2,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| {
            Err(Error::Config {
                key: format!("training.{key}"),
                msg,
            })
        };
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience", "must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs", "must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", format!("{} is not a positive number", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", format!("{} is negative", self.weight_decay));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean combined loss over the epoch's batches.
    pub loss: f64,
    pub clean_loss: f64,
    pub val_ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    /// Parameters of the best validation epoch.
    pub params: ParamSet,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub learning_rate: f64,
    pub retries: usize,
}

/// One optimisation step as seen by a monitor.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord<'a> {
    pub epoch: usize,
    pub step: usize,
    pub outcome: &'a StepOutcome,
}

/// Draws items outside each user's training set.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    seen: Vec<HashSet<usize>>,
    n_items: usize,
}

impl NegativeSampler {
    pub fn new(split: &DatasetSplit) -> Self {
        let seen = split
            .train_items_by_user()
            .into_iter()
            .map(|items| items.into_iter().collect())
            .collect();
        Self {
            seen,
            n_items: split.n_items(),
        }
    }

    pub fn sample(&self, user: usize, rng: &mut Rng) -> Result<usize> {
        let seen = &self.seen[user];
        if seen.len() >= self.n_items {
            return Err(Error::NegativeSampling {
                user: user.to_string(),
                needed: 1,
                available: 0,
            });
        }
        loop {
            let v = rng.random_range(0..self.n_items);
            if !seen.contains(&v) {
                return Ok(v);
            }
        }
    }
}

/// Cuts `order` into batches of `batch_size` positives, each followed by one
/// sampled negative per positive.
pub fn make_batches(
    train: &[Interaction],
    order: &[usize],
    batch_size: usize,
    sampler: &NegativeSampler,
    rng: &mut Rng,
) -> Result<Vec<Batch>> {
    let mut batches = Vec::with_capacity(order.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let mut batch = Batch::default();
        for &i in chunk {
            let it = &train[i];
            batch.push(it.user, it.item, f64::from(it.rating));
        }
        for &i in chunk {
            let user = train[i].user;
            batch.push(user, sampler.sample(user, rng)?, 0.0);
        }
        batches.push(batch);
    }
    Ok(batches)
}

/// Mean NDCG@10 over the validation lists (one positive, sampled negatives).
pub fn validation_ndcg<M: Recommender + ?Sized>(
    model: &M,
    params: &ParamSet,
    split: &DatasetSplit,
    aspects: &AspectMatrices,
) -> Result<f64> {
    if split.validation.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for vu in &split.validation {
        let mut candidates = Vec::with_capacity(vu.negatives.len() + 1);
        candidates.push(vu.positive);
        candidates.extend_from_slice(&vu.negatives);
        let ranked = rank_items(model, params, aspects, vu.user, &candidates)?;
        total += ndcg_at(&ranked, &[vu.positive], 10).unwrap_or(0.0);
    }
    Ok(total / split.validation.len() as f64)
}

fn has_non_finite(params: &ParamSet) -> bool {
    params.tensors().iter().any(|t| t.data().iter().any(|v| !v.is_finite()))
}

fn fit<M, S>(
    model: &M,
    split: &DatasetSplit,
    aspects: &AspectMatrices,
    training: &TrainingConfig,
    step_fn: S,
    monitor: &mut dyn FnMut(&StepRecord<'_>),
) -> Result<TrainedModel>
where
    M: Recommender + ?Sized,
    S: Fn(&M, &ParamSet, &Batch) -> Result<StepOutcome>,
{
    training.validate()?;
    if split.train.is_empty() {
        return Err(Error::Validation("no training interactions".into()));
    }
    let sampler = NegativeSampler::new(split);
    let mut lr = training.learning_rate;
    for attempt in 0..=training.max_retries {
        match fit_once(model, split, aspects, training, lr, &sampler, &step_fn, monitor) {
            Ok((params, history, best_epoch)) => {
                return Ok(TrainedModel {
                    params,
                    history,
                    best_epoch,
                    learning_rate: lr,
                    retries: attempt,
                });
            }
            Err(Error::Divergence) if attempt < training.max_retries => {
                warn!("training diverged at learning rate {lr}; retrying at {}", lr / 10.0);
                lr /= 10.0;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::Divergence)
}

#[allow(clippy::too_many_arguments)]
fn fit_once<M, S>(
    model: &M,
    split: &DatasetSplit,
    aspects: &AspectMatrices,
    training: &TrainingConfig,
    lr: f64,
    sampler: &NegativeSampler,
    step_fn: &S,
    monitor: &mut dyn FnMut(&StepRecord<'_>),
) -> Result<(ParamSet, Vec<EpochLog>, usize)>
where
    M: Recommender + ?Sized,
    S: Fn(&M, &ParamSet, &Batch) -> Result<StepOutcome>,
{
    let mut init_rng = rng::stream(training.seed, "init");
    let mut rng = rng::stream(training.seed, "train");
    let mut params = model.init_params(split.n_users(), split.n_items(), split.n_features(), &mut init_rng);
    let mut adam = Adam::new(lr, training.weight_decay);
    let mut stopper = EarlyStopping::new(training.patience);
    let mut best = params.clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut step = 0;

    for epoch in 1..=training.max_epochs {
        order.shuffle(&mut rng);
        let batches = make_batches(&split.train, &order, training.batch_size, sampler, &mut rng)?;
        let (mut loss_sum, mut clean_sum) = (0.0, 0.0);
        for batch in &batches {
            let outcome = step_fn(model, &params, batch)?;
            monitor(&StepRecord {
                epoch,
                step,
                outcome: &outcome,
            });
            loss_sum += outcome.loss;
            clean_sum += outcome.clean_loss;
            adam.step(&mut params, &outcome.grads)?;
            step += 1;
        }
        if has_non_finite(&params) {
            return Err(Error::Divergence);
        }
        let n = batches.len() as f64;
        let val_ndcg = validation_ndcg(model, &params, split, aspects)?;
        let log = EpochLog {
            epoch,
            loss: loss_sum / n,
            clean_loss: clean_sum / n,
            val_ndcg,
        };
        debug!("epoch {epoch}: loss {:.6} val ndcg@10 {:.4}", log.loss, val_ndcg);
        history.push(log);
        match stopper.observe(val_ndcg) {
            StopDecision::Improved => best.clone_from(&params),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    let best_epoch = match stopper.best_epoch() {
        Some(e) => e,
        None => {
            warn!("validation metric never improved; keeping the final parameters");
            best = params;
            history.len()
        }
    };
    debug!(
        "trained {} epochs, best epoch {best_epoch} (val ndcg@10 {:.4})",
        history.len(),
        stopper.best_metric().unwrap_or(f64::NAN)
    );
    Ok((best, history, best_epoch))
}

/// Minimises the combined clean/adversarial objective. `lambda = 0` is
/// plain training.
pub fn train_defended<M: Recommender + ?Sized>(
    model: &M,
    split: &DatasetSplit,
    aspects: &AspectMatrices,
    defense: &DefenseConfig,
    training: &TrainingConfig,
    monitor: &mut dyn FnMut(&StepRecord<'_>),
) -> Result<TrainedModel> {
    defense.validate()?;
    fit(
        model,
        split,
        aspects,
        training,
        |m: &M, p: &ParamSet, b: &Batch| defense_step(m, p, b, aspects, defense),
        monitor,
    )
}

/// Plain training on the clean loss.
pub fn train_vanilla<M: Recommender + ?Sized>(
    model: &M,
    split: &DatasetSplit,
    aspects: &AspectMatrices,
    training: &TrainingConfig,
) -> Result<TrainedModel> {
    fit(
        model,
        split,
        aspects,
        training,
        |m: &M, p: &ParamSet, b: &Batch| vanilla_step(m, p, b, aspects),
        &mut |_| {},
    )
}
