//! Adam, minibatch gradients and the batch-polling training schedule.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::labeler::{Dataset, Sample};
use crate::rng::{derive_seed, rng_from};
use crate::scene::PredicateKind;

use super::eval::{evaluate, EvalMetrics};
use super::model::{backward_trace, forward_trace, loss_grad_logit, sample_patches, weighted_bce_loss, Gradients};
use super::params::{Head, ModelDims, ModelParams, Trunk};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Samples per gradient work unit. Fixed so the reduction order, and hence
/// every bit of the result, does not depend on the thread count.
pub const GRAD_CHUNK: usize = 5;
const SHUFFLE: u64 = 0x7368_7566;

#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: T,
    pub v: T,
    pub step: u64,
}

/// Optimizer state. The trunk and every head keep their own step counter:
/// the trunk is updated by every batch, a head only by its own predicate's.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub trunk: Moments<Trunk>,
    pub heads: BTreeMap<PredicateKind, Moments<Head>>,
}

impl AdamState {
    pub fn new(dims: &ModelDims) -> Self {
        AdamState {
            trunk: Moments {
                m: Trunk::zeros(dims),
                v: Trunk::zeros(dims),
                step: 0,
            },
            heads: BTreeMap::new(),
        }
    }
}

fn adam_update(params: Vec<&mut Vec<f64>>, grads: Vec<&Vec<f64>>, m: Vec<&mut Vec<f64>>, v: Vec<&mut Vec<f64>>, step: u64, lr: f64) {
    let c1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(step as i32);
    for (((p, g), m), v) in params.into_iter().zip(grads).zip(m).zip(v) {
        for i in 0..p.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}

/// One Adam update of the trunk and of every head present in `grads`.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    for k in grads.heads.keys() {
        params.head(*k)?;
    }
    let t = &mut state.trunk;
    t.step += 1;
    adam_update(
        params.trunk.tensors_mut(),
        grads.trunk.tensors().into_iter().map(|(_, g)| g).collect(),
        t.m.tensors_mut(),
        t.v.tensors_mut(),
        t.step,
        lr,
    );
    for (k, g) in &grads.heads {
        let hs = state.heads.entry(*k).or_insert_with(|| Moments {
            m: Head::zeros(&params.dims),
            v: Head::zeros(&params.dims),
            step: 0,
        });
        hs.step += 1;
        let head = params.heads.get_mut(k).expect("checked above");
        adam_update(head.tensors_mut(), g.tensors(), hs.m.tensors_mut(), hs.v.tensors_mut(), hs.step, lr);
    }
    Ok(())
}

/// Mean loss and its gradient over a batch.
pub struct BatchGradient {
    pub grads: Gradients,
    pub loss: f64,
}

struct ChunkSlot {
    grads: Gradients,
    loss: f64,
    error: Option<Error>,
}

/// Gradient buffers reused across batches: one per chunk plus the total.
pub struct GradWorkspace {
    slots: Vec<ChunkSlot>,
    pub total: Gradients,
}

impl GradWorkspace {
    pub fn new(dims: &ModelDims) -> Self {
        GradWorkspace {
            slots: Vec::new(),
            total: Gradients::zeros(dims),
        }
    }
}

/// Like [`backward`], leaving the gradient in `ws.total` and returning the
/// mean loss.
pub fn backward_into(ws: &mut GradWorkspace, batch: &[&Sample], params: &ModelParams, eta: f64, exec: Exec) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dims = &params.dims;
    let n_chunks = batch.len().div_ceil(GRAD_CHUNK);
    while ws.slots.len() < n_chunks {
        ws.slots.push(ChunkSlot {
            grads: Gradients::zeros(dims),
            loss: 0.0,
            error: None,
        });
    }
    exec.for_each_mut(&mut ws.slots[..n_chunks], |ci, slot| {
        slot.grads.clear();
        slot.loss = 0.0;
        slot.error = None;
        let chunk = &batch[ci * GRAD_CHUNK..((ci + 1) * GRAD_CHUNK).min(batch.len())];
        for s in chunk {
            let step = sample_patches(s).and_then(|x| forward_trace(x, params, s.predicate)).and_then(|trace| {
                slot.loss += weighted_bce_loss(trace.prob, s.label, eta);
                backward_trace(&trace, loss_grad_logit(trace.prob, s.label, eta), params, &mut slot.grads)
            });
            if let Err(e) = step {
                slot.error = Some(e);
                return;
            }
        }
    });
    ws.total.clear();
    let mut loss = 0.0;
    for slot in &mut ws.slots[..n_chunks] {
        if let Some(e) = slot.error.take() {
            return Err(e);
        }
        ws.total.add(&slot.grads, dims);
        loss += slot.loss;
    }
    let n = batch.len() as f64;
    ws.total.scale(1.0 / n);
    if !ws.total.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    Ok(loss / n)
}

/// Gradient of the mean weighted loss over `batch`. Every sample uses the
/// same `eta`. Work is split into fixed chunks of [`GRAD_CHUNK`] samples
/// that are reduced in order.
pub fn backward(batch: &[&Sample], params: &ModelParams, eta: f64, exec: Exec) -> Result<BatchGradient> {
    let mut ws = GradWorkspace::new(&params.dims);
    let loss = backward_into(&mut ws, batch, params, eta, exec)?;
    Ok(BatchGradient { grads: ws.total, loss })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Positive-class weight per predicate; missing kinds use their default.
    pub eta: BTreeMap<PredicateKind, f64>,
    pub beta: f64,
    pub epochs: usize,
    pub seed: u64,
    #[serde(skip)]
    pub dims: ModelDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            batch_size: 50,
            eta: BTreeMap::new(),
            beta: 0.5,
            epochs: 20,
            seed: 0,
            dims: ModelDims::default(),
        }
    }
}

impl TrainConfig {
    pub fn eta_for(&self, kind: PredicateKind) -> f64 {
        self.eta.get(&kind).copied().unwrap_or_else(|| kind.default_eta())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if let Some((k, e)) = self.eta.iter().find(|(_, e)| !(**e > 0.0 && **e <= 1.0)) {
            return Err(Error::InvalidArgument(format!("eta for {k} must be in (0, 1], got {e}")));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidArgument("beta must be in [0, 1]".into()));
        }
        self.dims.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: AdamState,
    pub epochs_completed: usize,
}

impl TrainState {
    pub fn fresh(config: &TrainConfig, kinds: &[PredicateKind]) -> Result<Self> {
        Ok(TrainState {
            params: ModelParams::init(config.dims, kinds, config.seed)?,
            adam: AdamState::new(&config.dims),
            epochs_completed: 0,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub predicate: PredicateKind,
    pub train_loss: f64,
    pub train_samples: usize,
    pub updates: usize,
    pub heldout: Option<EvalMetrics>,
}

/// Permutation of `0..n` for one pass over a predicate's dataset.
pub fn pass_order(seed: u64, kind: PredicateKind, epoch: usize, pass: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = rng_from(derive_seed(seed, &[SHUFFLE, kind.code() as u64, epoch as u64, pass as u64]));
    idx.shuffle(&mut rng);
    idx
}

struct Cursor {
    pass: usize,
    order: Vec<usize>,
    pos: usize,
}

/// Trains with batch polling until `config.epochs` epochs are complete.
///
/// A round draws one batch from every predicate in enum order and applies
/// one update per batch. An epoch has `ceil(max_len / batch_size)` rounds,
/// so the largest dataset is seen once and smaller ones wrap around with a
/// fresh permutation per pass. `on_epoch` runs after every epoch with the
/// state and that epoch's metrics.
pub fn train_batch_polling<F>(
    datasets: &BTreeMap<PredicateKind, Dataset>,
    held_out: &BTreeMap<PredicateKind, Dataset>,
    config: &TrainConfig,
    resume: Option<TrainState>,
    exec: Exec,
    mut on_epoch: F,
) -> Result<(TrainState, Vec<EpochMetrics>)>
where
    F: FnMut(&TrainState, &[EpochMetrics]) -> Result<()>,
{
    config.validate()?;
    if datasets.is_empty() || datasets.values().any(|d| d.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    let kinds: Vec<PredicateKind> = datasets.keys().copied().collect();
    let mut state = match resume {
        Some(s) => {
            for k in &kinds {
                s.params.head(*k)?;
            }
            s
        }
        None => TrainState::fresh(config, &kinds)?,
    };
    let max_len = datasets.values().map(|d| d.len()).max().expect("non-empty");
    let rounds = max_len.div_ceil(config.batch_size);
    let mut ws = GradWorkspace::new(&state.params.dims);
    let mut all = Vec::new();

    for epoch in state.epochs_completed + 1..=config.epochs {
        let mut cursors: BTreeMap<PredicateKind, Cursor> = datasets
            .iter()
            .map(|(k, d)| {
                (
                    *k,
                    Cursor {
                        pass: 0,
                        order: pass_order(config.seed, *k, epoch, 0, d.len()),
                        pos: 0,
                    },
                )
            })
            .collect();
        let mut loss_sum: BTreeMap<PredicateKind, (f64, usize, usize)> = BTreeMap::new();
        for _ in 0..rounds {
            for (kind, data) in datasets {
                let c = cursors.get_mut(kind).expect("cursor per kind");
                if c.pos == c.order.len() {
                    c.pass += 1;
                    c.order = pass_order(config.seed, *kind, epoch, c.pass, data.len());
                    c.pos = 0;
                }
                let end = (c.pos + config.batch_size).min(c.order.len());
                let batch: Vec<&Sample> = c.order[c.pos..end].iter().map(|&i| &data.samples[i]).collect();
                c.pos = end;
                let loss = backward_into(&mut ws, &batch, &state.params, config.eta_for(*kind), exec)?;
                adam_step(&mut state.params, &ws.total, &mut state.adam, config.learning_rate)?;
                let e = loss_sum.entry(*kind).or_insert((0.0, 0, 0));
                e.0 += loss * batch.len() as f64;
                e.1 += batch.len();
                e.2 += 1;
            }
        }
        state.epochs_completed = epoch;
        let mut metrics = Vec::with_capacity(kinds.len());
        for kind in &kinds {
            let (sum, n, updates) = loss_sum[kind];
            let heldout = match held_out.get(kind) {
                Some(d) if !d.is_empty() => Some(evaluate(&state.params, d, config.beta, exec)?),
                _ => None,
            };
            metrics.push(EpochMetrics {
                epoch,
                predicate: *kind,
                train_loss: sum / n as f64,
                train_samples: n,
                updates,
                heldout,
            });
        }
        on_epoch(&state, &metrics)?;
        all.extend(metrics);
    }
    Ok((state, all))
}

/// Mean weighted loss of `params` over a dataset, without updating.
pub fn dataset_loss(params: &ModelParams, data: &Dataset, eta: f64, exec: Exec) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let losses = exec.map(&data.samples, |s| -> Result<f64> {
        let t = forward_trace(sample_patches(s)?, params, s.predicate)?;
        Ok(weighted_bce_loss(t.prob, s.label, eta))
    });
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / data.len() as f64)
}

/// Splits a dataset by scene: the scenes whose ids sort into the last
/// `fraction` go to the held-out part.
pub fn split_holdout(data: &Dataset, fraction: f64) -> (Dataset, Dataset) {
    let mut ids: Vec<u64> = data.samples.iter().map(|s| s.scene_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let n_held = ((ids.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    let cut = ids.len() - n_held;
    let held: std::collections::BTreeSet<u64> = ids[cut..].iter().copied().collect();
    let (mut train, mut test) = (Dataset::default(), Dataset::default());
    for s in &data.samples {
        if held.contains(&s.scene_id) {
            test.samples.push(s.clone());
        } else {
            train.samples.push(s.clone());
        }
    }
    (train, test)
}
