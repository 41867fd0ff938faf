//! Teacher-forced maximum-likelihood training with Adam and dev-perplexity
//! checkpoint selection.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DatasetSplit, PreparedExample};
use crate::model::{BertPgn, ModelError};
use crate::numerics::{Graph, NumericsError, ParamStore};
use crate::textproc::{TokenId, PAD};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("gold token {0} is not a valid target")]
    InvalidTarget(TokenId),
    #[error("example {0} has an empty question")]
    EmptyQuestion(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    TrainingDiverged { epoch: usize, step: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            batch_size: 10,
            epochs: 20,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = self.lr > 0.0
            && self.batch_size > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(format!("{self:?}")))
        }
    }
}

fn check_example(ex: &PreparedExample) -> Result<(), TrainError> {
    if ex.question_ids.is_empty() {
        return Err(TrainError::EmptyQuestion(ex.id.clone()));
    }
    if let Some(&bad) = ex.question_ids.iter().find(|&&t| t == PAD) {
        return Err(TrainError::InvalidTarget(bad));
    }
    Ok(())
}

/// Summed negative log-likelihood of an example and its target count.
pub fn example_nll(model: &BertPgn, ex: &PreparedExample) -> Result<(f64, usize), TrainError> {
    check_example(ex)?;
    let mut g = Graph::new(model.params());
    let (loss, n) = model.nll_graph(&mut g, &ex.context_ids, &ex.type_ids, &ex.question_ids)?;
    Ok((g.scalar(loss), n))
}

/// Mean over target positions (question tokens plus EOS) of `-ln final_dist(gold)`.
pub fn nll_loss(model: &BertPgn, ex: &PreparedExample) -> Result<f64, TrainError> {
    let (sum, n) = example_nll(model, ex)?;
    Ok(sum / n as f64)
}

/// Summed loss, target count, and per-parameter gradients of the summed loss.
pub fn example_gradients(model: &BertPgn, ex: &PreparedExample) -> Result<(f64, usize, Vec<Vec<f64>>), TrainError> {
    check_example(ex)?;
    let mut g = Graph::new(model.params());
    let (loss, n) = model.nll_graph(&mut g, &ex.context_ids, &ex.type_ids, &ex.question_ids)?;
    let grads = g.backward(loss).map_err(ModelError::from)?;
    Ok((g.scalar(loss), n, grads.into_param_grads()))
}

/// Token-mean loss over a batch and its gradients. Per-example gradients are
/// computed in parallel and reduced in batch order.
pub fn batch_gradients(model: &BertPgn, batch: &[&PreparedExample]) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
    let per: Vec<_> = batch
        .par_iter()
        .map(|ex| example_gradients(model, ex))
        .collect::<Result<_, _>>()?;
    let tokens: usize = per.iter().map(|p| p.1).sum();
    let scale = 1.0 / tokens as f64;
    let mut iter = per.into_iter();
    let (mut loss, _, mut acc) = iter.next().ok_or_else(|| TrainError::InvalidDataset("empty batch".into()))?;
    for (l, _, grads) in iter {
        loss += l;
        for (a, g) in acc.iter_mut().zip(grads) {
            for (x, y) in a.iter_mut().zip(g) {
                *x += y;
            }
        }
    }
    for a in &mut acc {
        for x in a.iter_mut() {
            *x *= scale;
        }
    }
    Ok((loss * scale, acc))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.ids().map(|id| vec![0.0; params.get(id).len()]).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(params: &mut ParamStore, grads: &[Vec<f64>], state: &mut AdamState, cfg: &TrainConfig) -> Result<(), NumericsError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(NumericsError::Shape(format!(
            "{} gradients and {} moments for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for (i, id) in ids.into_iter().enumerate() {
        let p = params.get_mut(id).data_mut();
        let (g, m, v) = (&grads[i], &mut state.m[i], &mut state.v[i]);
        if g.len() != p.len() {
            return Err(NumericsError::Shape(format!("gradient {i} has {} values for {}", g.len(), p.len())));
        }
        for k in 0..p.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            p[k] -= cfg.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// `exp` of the token-weighted mean negative log-likelihood.
pub fn perplexity(model: &BertPgn, dataset: &[PreparedExample]) -> Result<f64, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::InvalidDataset("empty dataset".into()));
    }
    let per: Vec<(f64, usize)> = dataset
        .par_iter()
        .map(|ex| example_nll(model, ex))
        .collect::<Result<_, _>>()?;
    let (sum, n) = per.iter().fold((0.0, 0usize), |(s, n), &(l, k)| (s + l, n + k));
    Ok((sum / n as f64).exp())
}

/// 1-based epoch with the lowest perplexity; ties go to the earliest epoch.
pub fn select_checkpoint(perplexities: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &p) in perplexities.iter().enumerate() {
        if best.is_none_or(|(_, b)| p < b) {
            best = Some((i, p));
        }
    }
    best.map(|(i, _)| i + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_perplexity: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: BertPgn,
    /// `None` when no epoch ran and `best` is the initial model.
    pub best_epoch: Option<usize>,
    pub log: Vec<EpochRecord>,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(epoch as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn diverged(epoch: usize, step: usize, err: TrainError) -> TrainError {
    match err {
        TrainError::Model(ModelError::Numerics(e)) => TrainError::TrainingDiverged {
            epoch,
            step,
            reason: e.to_string(),
        },
        other => other,
    }
}

/// Trains every parameter on `split.train`, evaluating dev perplexity after
/// each epoch. `on_epoch` sees each record with the model as of that epoch.
pub fn train(
    model: BertPgn,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &BertPgn),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            best: model,
            best_epoch: None,
            log: Vec::new(),
        });
    }
    if split.train.is_empty() || split.dev.is_empty() {
        return Err(TrainError::InvalidDataset("training needs non-empty train and dev sets".into()));
    }
    for ex in split.train.iter().chain(&split.dev) {
        check_example(ex)?;
    }

    let mut model = model;
    let mut state = AdamState::new(model.params());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, BertPgn)> = None;
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch));
        let (mut loss_sum, mut tokens) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let batch: Vec<&PreparedExample> = chunk.iter().map(|&i| &split.train[i]).collect();
            let (loss, grads) = batch_gradients(&model, &batch).map_err(|e| diverged(epoch, step, e))?;
            if !loss.is_finite() {
                return Err(TrainError::TrainingDiverged {
                    epoch,
                    step,
                    reason: format!("loss {loss}"),
                });
            }
            let n: usize = batch.iter().map(|ex| ex.question_ids.len() + 1).sum();
            loss_sum += loss * n as f64;
            tokens += n;
            adam_step(model.params_mut(), &grads, &mut state, cfg).map_err(ModelError::from)?;
        }
        let dev_perplexity = perplexity(&model, &split.dev).map_err(|e| diverged(epoch, step, e))?;
        if !dev_perplexity.is_finite() {
            return Err(TrainError::TrainingDiverged {
                epoch,
                step,
                reason: format!("dev perplexity {dev_perplexity}"),
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / tokens as f64,
            dev_perplexity,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record, &model);
        if best.as_ref().is_none_or(|(_, p, _)| dev_perplexity < *p) {
            best = Some((epoch, dev_perplexity, model.clone()));
        }
        log.push(record);
    }

    let (best_epoch, _, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch: Some(best_epoch),
        log,
    })
}
