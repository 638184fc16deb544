//! Full-batch training: AdamW with decoupled weight decay, linear warmup into
//! cosine decay, global-norm clipping and early stopping on validation loss
//! with best-checkpoint restore.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Mode, Tape};
use crate::model::{forward, Bound, ForwardOptions, GraphInputs, ModelConfig, ModelKind, ParamStore};
use crate::{math, rng, Error, Result};

pub const DEFAULT_SEEDS: [u64; 5] = [42, 123, 456, 789, 1024];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 5e-4,
            warmup_epochs: 10,
            max_epochs: 200,
            patience: 30,
            clip_norm: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seeds: DEFAULT_SEEDS.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if self.warmup_epochs >= self.max_epochs {
            return fail("warmup_epochs must be below max_epochs");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        if !(self.lr >= 0.0 && self.weight_decay >= 0.0 && self.clip_norm > 0.0 && self.eps > 0.0) {
            return fail("lr and weight_decay must be non-negative, clip_norm and eps positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return fail("betas must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Learning rate for 1-based epoch `epoch`.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> f64 {
    let warmup = cfg.warmup_epochs;
    if epoch <= warmup {
        return cfg.lr * epoch as f64 / warmup as f64;
    }
    let progress = (epoch - warmup) as f64 / (cfg.max_epochs - warmup) as f64;
    cfg.lr * 0.5 * (1.0 + math::cos(PI * progress))
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Matrix], max_norm: f64) -> Result<f64> {
    let norm = math::sqrt(grads.iter().map(Matrix::sq_norm).sum::<f64>());
    if !norm.is_finite() {
        return Err(Error::NonFinite { op: "clip_global_norm" });
    }
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(s);
        }
    }
    Ok(norm)
}

/// First and second moments per parameter, in the store's name order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    beta1_pow: f64,
    beta2_pow: f64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Matrix> = store.params().map(|(_, m)| Matrix::zeros(m.rows(), m.cols())).collect();
        Self {
            step: 0,
            first: zeros.clone(),
            second: zeros,
            beta1_pow: 1.0,
            beta2_pow: 1.0,
        }
    }
}

/// One AdamW update. `grads` follow the store's name order.
pub fn adamw_step(
    store: &mut ParamStore,
    grads: &[Matrix],
    state: &mut OptimizerState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != state.first.len() {
        return Err(Error::Invalid(format!(
            "{} gradients for {} parameters",
            grads.len(),
            state.first.len()
        )));
    }
    state.step += 1;
    state.beta1_pow *= cfg.beta1;
    state.beta2_pow *= cfg.beta2;
    let c1 = 1.0 - state.beta1_pow;
    let c2 = 1.0 - state.beta2_pow;
    for (((_, theta), g), (m, v)) in store
        .params_mut()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        if theta.shape() != g.shape() || m.shape() != g.shape() {
            return Err(Error::Shape {
                op: "adamw_step",
                detail: format!("param {:?}, grad {:?}", theta.shape(), g.shape()),
            });
        }
        let decay = 1.0 - lr * cfg.weight_decay;
        for (((t, &gi), mi), vi) in theta
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *t *= decay;
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            *t -= lr * (*mi / c1) / (math::sqrt(*vi / c2) + cfg.eps);
        }
    }
    Ok(())
}

/// Patience counter over strictly improving validation losses.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records an epoch's loss; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

/// Companies a loss is taken over: graph inputs plus row positions and labels.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub inputs: GraphInputs,
    pub rows: Vec<usize>,
    pub labels: Vec<usize>,
}

impl SplitData {
    pub fn new(inputs: GraphInputs, rows: Vec<usize>, labels: Vec<usize>) -> Result<Self> {
        if rows.len() != labels.len() || rows.is_empty() {
            return Err(Error::Invalid(format!(
                "split needs matching non-empty rows and labels ({} / {})",
                rows.len(),
                labels.len()
            )));
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= inputs.num_companies()) {
            return Err(Error::Invalid(format!("row {r} beyond {} companies", inputs.num_companies())));
        }
        Ok(Self { inputs, rows, labels })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Train-mode loss of the forward pass that produced this epoch's step.
    pub train_loss: f64,
    /// Eval-mode loss after the step.
    pub val_loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: ModelKind,
    pub seed: u64,
    pub param_count: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_epoch: usize,
    pub early_stopped: bool,
    /// Filled in by callers that can read a clock.
    pub wall_time_secs: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: ParamStore,
    pub report: TrainReport,
}

/// Mean cross-entropy of the model on a split in eval mode.
pub fn eval_loss(store: &ParamStore, data: &SplitData, cfg: &ModelConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = Bound::bind(&mut tape, store, false);
    let fwd = forward(&mut tape, &bound, &data.inputs, cfg, Some(&data.rows), ForwardOptions::eval())?;
    let loss = tape.softmax_cross_entropy(fwd.logits, &data.labels)?;
    Ok(tape.value(loss).get(0, 0))
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::Diverged { epoch },
        other => other,
    }
}

/// Trains one model from a fresh seeded initialization and returns the
/// parameters of the best validation epoch.
pub fn train_model(
    kind: ModelKind,
    train: &SplitData,
    val: &SplitData,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Trained> {
    cfg.validate()?;
    let init = ParamStore::init(kind, model_cfg, rng::derive(seed, 1))?;
    train_from(init, train, val, model_cfg, cfg, seed)
}

/// Like [`train_model`] but starting from given parameters.
pub fn train_from(
    mut params: ParamStore,
    train: &SplitData,
    val: &SplitData,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Trained> {
    cfg.validate()?;
    model_cfg.validate()?;
    let mut state = OptimizerState::new(&params);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut epochs = Vec::new();
    let dropout_root = rng::derive(seed, 2);
    let mut early_stopped = false;

    for epoch in 1..=cfg.max_epochs {
        let lr = lr_at_epoch(epoch, cfg);
        let mut tape = Tape::new();
        let bound = Bound::bind(&mut tape, &params, true);
        let opts = ForwardOptions {
            mode: Mode::Train,
            dropout_seed: rng::derive(dropout_root, epoch as u64),
        };
        let step = forward(&mut tape, &bound, &train.inputs, model_cfg, Some(&train.rows), opts)
            .and_then(|fwd| {
                let loss = tape.softmax_cross_entropy(fwd.logits, &train.labels)?;
                Ok((fwd, loss))
            })
            .map_err(diverged(epoch))?;
        let (fwd, loss) = step;
        let train_loss = tape.value(loss).get(0, 0);
        let vars: Vec<_> = bound.vars().map(|(_, v)| v).collect();
        drop(bound);
        let mut grads = tape.backward(loss)?;
        let mut grads: Vec<Matrix> = vars
            .iter()
            .zip(params.params())
            .map(|(&v, (_, p))| grads.take(v).unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols())))
            .collect();
        let grad_norm = clip_global_norm(&mut grads, cfg.clip_norm).map_err(diverged(epoch))?;
        adamw_step(&mut params, &grads, &mut state, lr, cfg)?;
        update_running_stats(&mut params, &fwd.batch_stats, model_cfg.batch_norm_momentum)?;
        if !params.is_finite() {
            return Err(Error::Diverged { epoch });
        }

        let val_loss = eval_loss(&params, val, model_cfg).map_err(diverged(epoch))?;
        epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            grad_norm,
        });
        if stopper.observe(epoch, val_loss) {
            best.clone_from(&params);
        }
        if stopper.should_stop() {
            early_stopped = true;
            break;
        }
    }

    let (best_epoch, best_val_loss) = stopper.best();
    let report = TrainReport {
        model: params.kind,
        seed,
        param_count: params.param_count(),
        stopped_epoch: epochs.len(),
        epochs,
        best_epoch,
        best_val_loss,
        early_stopped,
        wall_time_secs: None,
    };
    Ok(Trained { params: best, report })
}

/// Exponential moving update of batch-norm buffers; the stored variance is
/// the unbiased batch estimate.
pub fn update_running_stats(
    store: &mut ParamStore,
    stats: &[crate::model::BatchStats],
    momentum: f64,
) -> Result<()> {
    for s in stats {
        let (mean_name, var_name) = crate::model::names::mlp_running(s.layer);
        let unbias = if s.rows > 1 { s.rows as f64 / (s.rows - 1) as f64 } else { 1.0 };
        let running = store.buffer_mut(&mean_name)?;
        for (r, m) in running.iter_mut().zip(&s.mean) {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        let running = store.buffer_mut(&var_name)?;
        for (r, v) in running.iter_mut().zip(&s.var) {
            *r = (1.0 - momentum) * *r + momentum * v * unbias;
        }
    }
    Ok(())
}
