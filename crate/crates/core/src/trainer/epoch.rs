//! Classifier training: one epoch of mixed minibatches, validation loss,
//! early stopping and accuracy.

use std::collections::BTreeMap;

use super::batching::plan_epoch;
use super::optim::{adam_step, OptimizerState};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::data::{augment_batch_parallel, preprocess_eval_batch, AugmentConfig, TaskDataset};
use crate::error::{Error, Result};
use crate::losses::{cross_entropy_value, ewc_penalty, model_cross_entropy, FisherState};
use crate::nn::{Mode, Model};
use crate::seed;

const PREDICT_CHUNK: usize = 256;

/// Items one loss term is built from. Each distinct `groups` value gets its
/// own cross-entropy term (one per task for rehearsal objectives).
#[derive(Clone, Debug)]
pub struct Source {
    pub name: String,
    /// Raw `[0, 255]` images when `augment` is set, otherwise already
    /// preprocessed.
    pub images: Tensor,
    pub targets: Tensor,
    pub groups: Vec<usize>,
    pub train: Vec<usize>,
    pub augment: Option<AugmentConfig>,
    /// Groups whose items may be flipped left-right during augmentation.
    pub flip_groups: Vec<usize>,
}

/// Preprocessed images with targets, scored by [`validation_loss`].
#[derive(Clone, Debug)]
pub struct ValidSet {
    pub images: Tensor,
    pub targets: Tensor,
    pub groups: Vec<usize>,
}

impl ValidSet {
    pub fn from_task(task: &TaskDataset, targets: &Tensor, crop: usize) -> Self {
        Self {
            images: preprocess_eval_batch(&task.images_at(&task.valid), crop),
            targets: targets.gather_rows(&task.valid),
            groups: vec![task.task_index; task.valid.len()],
        }
    }
}

pub struct EpochSetup<'a> {
    pub new: &'a Source,
    pub replay: Option<&'a Source>,
    pub ewc: &'a [FisherState],
    pub batch_size: usize,
    pub task_index: usize,
    pub seed: u64,
    pub threads: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochMetrics {
    pub steps: usize,
    /// Mean total objective per step.
    pub loss: f64,
    /// Mean cross-entropy sum per step for each source.
    pub per_source: Vec<(String, f64)>,
    /// Items drawn from each source over the epoch.
    pub counts: Vec<(String, usize)>,
}

fn by_group(ids: &[usize], groups: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in ids {
        out.entry(groups[i]).or_default().push(i);
    }
    out
}

fn source_terms(
    g: &mut Graph,
    model: &Model,
    bound: &crate::nn::Bound,
    src: &Source,
    ids: &[usize],
    setup: &EpochSetup,
    epoch: usize,
) -> Result<Vec<NodeId>> {
    let crop = model.spec().input_shape[1];
    let mut terms = Vec::new();
    for (group, members) in by_group(ids, &src.groups) {
        let raw = src.images.gather_rows(&members);
        let x = match &src.augment {
            Some(cfg) => {
                let cfg = AugmentConfig {
                    crop_to: crop,
                    flip_lr: src.flip_groups.contains(&group),
                    ..cfg.clone()
                };
                let s = seed::derive(setup.seed, &[seed::tag(&src.name)]);
                augment_batch_parallel(&raw, &members, &cfg, s, epoch, setup.threads)
            }
            None => raw,
        };
        let y = src.targets.gather_rows(&members);
        terms.push(model_cross_entropy(g, model, bound, &x, &y, Mode::Train)?);
    }
    Ok(terms)
}

/// One pass over the new task's training items, each step paired with an
/// equal number of replay items when a replay source exists.
pub fn train_epoch(model: &mut Model, setup: &EpochSetup, opt: &mut OptimizerState, epoch: usize) -> Result<EpochMetrics> {
    let replay_pool: &[usize] = setup.replay.map_or(&[], |r| &r.train);
    let plan = plan_epoch(
        &setup.new.train,
        replay_pool,
        setup.batch_size,
        setup.task_index,
        setup.seed,
        epoch,
    )?;
    let mut metrics = EpochMetrics::default();
    let mut source_loss = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for batch in &plan {
        let mut g = Graph::new(0);
        let bound = model.bind(&mut g, true);
        let mut total = None;
        for (k, (src, ids)) in [(Some(setup.new), &batch.new), (setup.replay, &batch.replay)]
            .into_iter()
            .enumerate()
        {
            let (Some(src), false) = (src, ids.is_empty()) else { continue };
            counts[k] += ids.len();
            for term in source_terms(&mut g, model, &bound, src, ids, setup, epoch)? {
                source_loss[k] += g.value(term).item() as f64;
                total = Some(match total {
                    None => term,
                    Some(acc) => g.add(acc, term)?,
                });
            }
        }
        let mut loss = total.ok_or_else(|| Error::shape("train_epoch", "empty batch"))?;
        if !setup.ewc.is_empty() {
            let pen = ewc_penalty(&mut g, &bound, setup.ewc)?;
            loss = g.add(loss, pen)?;
        }
        metrics.loss += g.value(loss).item() as f64;
        g.backward(loss)?;
        let grads: Vec<&[f32]> = bound.params.iter().map(|&p| g.grad(p).expect("tracked param")).collect();
        adam_step(model.params_mut(), &grads, opt)?;
        metrics.steps += 1;
    }
    let steps = metrics.steps.max(1) as f64;
    metrics.loss /= steps;
    metrics.per_source.push((setup.new.name.clone(), source_loss[0] / steps));
    metrics.counts.push((setup.new.name.clone(), counts[0]));
    if let Some(r) = setup.replay {
        metrics.per_source.push((r.name.clone(), source_loss[1] / steps));
        metrics.counts.push((r.name.clone(), counts[1]));
    }
    Ok(metrics)
}

/// Sum over sets and groups of the mean cross-entropy.
pub fn validation_loss(model: &Model, sets: &[ValidSet]) -> Result<f64> {
    let mut total = 0.0;
    for set in sets {
        let probs = model.predict(&set.images, PREDICT_CHUNK)?;
        let all: Vec<usize> = (0..set.groups.len()).collect();
        for (_, members) in by_group(&all, &set.groups) {
            total += cross_entropy_value(&probs.gather_rows(&members), &set.targets.gather_rows(&members))?;
        }
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Clone, Debug)]
pub struct EarlyStopOutcome {
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_loss: f64,
    pub history: Vec<EpochLog>,
}

/// When early stopping ends training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopRule {
    pub patience: usize,
    pub max_epochs: usize,
    /// A new minimum only resets the patience counter when it undercuts the
    /// last counted minimum by more than this.
    pub min_delta: f64,
}

impl StopRule {
    pub fn new(patience: usize, max_epochs: usize) -> Self {
        Self {
            patience,
            max_epochs,
            min_delta: 0.0,
        }
    }
}

/// Trains until `patience` epochs pass without a new validation minimum (or
/// `max_epochs` is reached), then restores the weights of the lowest
/// validation loss seen.
pub fn early_stop_loop(
    model: &mut Model,
    mut train_fn: impl FnMut(&mut Model, usize) -> Result<f64>,
    mut valid_fn: impl FnMut(&Model) -> Result<f64>,
    rule: StopRule,
) -> Result<EarlyStopOutcome> {
    assert!(rule.patience >= 1, "patience must be at least 1");
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_loss = f64::INFINITY;
    let mut counted_epoch = 0;
    let mut counted_loss = f64::INFINITY;
    let mut history = Vec::new();
    for epoch in 1..=rule.max_epochs {
        let train_loss = train_fn(model, epoch - 1)?;
        let valid_loss = valid_fn(model)?;
        history.push(EpochLog {
            epoch,
            train_loss,
            valid_loss,
        });
        if valid_loss < best_loss {
            best_loss = valid_loss;
            best_epoch = epoch;
            best = model.clone();
        }
        if valid_loss < counted_loss - rule.min_delta {
            counted_loss = valid_loss;
            counted_epoch = epoch;
        } else if epoch - counted_epoch >= rule.patience {
            break;
        }
    }
    model.load_state_from(&best);
    Ok(EarlyStopOutcome {
        best_epoch,
        best_loss,
        history,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadMode {
    /// Every task owns a block of output units; the argmax must land on the
    /// task's own unit.
    Joint,
    /// All tasks share the same units and the task identity is known.
    Shared,
}

/// Fraction of `ids` whose argmax matches under `head`.
pub fn accuracy_from_probs(probs: &Tensor, task: &TaskDataset, ids: &[usize], head: HeadMode) -> f64 {
    let hits = probs
        .argmax_rows()
        .iter()
        .zip(ids)
        .filter(|(&pred, &i)| {
            let label = task.labels[i];
            pred == match head {
                HeadMode::Joint => task.global_unit(label),
                HeadMode::Shared => label,
            }
        })
        .count();
    hits as f64 / ids.len() as f64
}

/// Test-partition accuracy with evaluation preprocessing.
pub fn evaluate_accuracy(model: &Model, task: &TaskDataset, head: HeadMode) -> Result<f64> {
    if task.test.is_empty() {
        return Err(Error::SizeMismatch(format!("{} has no test items", task.name)));
    }
    let crop = model.spec().input_shape[1];
    let x = preprocess_eval_batch(&task.images_at(&task.test), crop);
    let probs = model.predict(&x, PREDICT_CHUNK)?;
    Ok(accuracy_from_probs(&probs, task, &task.test, head))
}
