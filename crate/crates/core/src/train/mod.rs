//! Losses, two-phase training with early stopping, per-horizon evaluation and
//! checkpoints.

mod checkpoint;
mod eval;
mod loss;

pub use checkpoint::{config_fingerprint, Checkpoint, CheckpointMeta, CHECKPOINT_FORMAT};
pub use eval::{evaluate, evaluate_baseline, evaluate_predictions, horizon_rmse, EvalReport, HORIZON_STEPS};
pub use loss::{nll_loss, nll_sum, rmse_loss, squared_error_sum, step_nll};

use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Sample;
use crate::predictor::{PredictError, Predictor};
use crate::tensor::{Adam, AdamConfig, ParamSet, ParamVars, Tape, Tensor, TensorError};

/// Samples per independently recorded tape inside a batch. Gradients are
/// reduced in chunk order, so results do not depend on the thread count.
pub const CHUNK: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Shape(#[from] TensorError),
    #[error("invalid params: {0}")]
    InvalidParams(String),
    #[error("numerical failure in {phase} epoch {epoch} batch {batch}: {msg}")]
    Numerical { phase: Phase, epoch: usize, batch: usize, msg: String },
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error("io: {0}")]
    Io(String),
    #[error("checkpoint format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub pretrain_epochs: usize,
    pub formal_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Rescales the gradient when its global L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
    /// Learning rate of the NLL phase; `lr` when unset.
    pub formal_lr: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            lr: 0.001,
            pretrain_epochs: 5,
            formal_epochs: 10,
            early_stop_patience: 2,
            seed: 0,
            clip_norm: None,
            formal_lr: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.early_stop_patience == 0 {
            return Err(TrainError::InvalidConfig("batch_size and early_stop_patience must be positive".into()));
        }
        for lr in [Some(self.lr), self.formal_lr].into_iter().flatten() {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(TrainError::InvalidConfig(format!("lr {lr}")));
            }
        }
        if self.clip_norm.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return Err(TrainError::InvalidConfig("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// RMSE on the predicted means.
    Pretrain,
    /// Negative log-likelihood of the full Gaussian output.
    Formal,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pretrain => "pretrain",
            Phase::Formal => "formal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based across both phases.
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub phase: Phase,
    /// Epochs completed in the current phase.
    pub phase_epoch: usize,
    pub current: ParamSet,
    pub best: Option<ParamSet>,
    pub best_val: Option<f64>,
    pub since_best: usize,
    /// Best parameters of the finished pretraining phase.
    pub pretrain_best: Option<ParamSet>,
    pub adam: Adam,
    pub curve: Vec<EpochRecord>,
    pub finished: bool,
}

/// Final model and its loss history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub predictor: Predictor,
    pub curve: Vec<EpochRecord>,
    pub checkpoint: Checkpoint,
}

pub struct Trainer<'a> {
    train: &'a [Sample],
    val: &'a [Sample],
    config: TrainConfig,
    model: Predictor,
    state: TrainState,
}

fn adam_for(params: &ParamSet, lr: f64) -> Adam {
    Adam::new(AdamConfig { lr, ..AdamConfig::default() }, &params.tensors())
}

/// Loss contribution and gradients of one chunk of samples.
fn chunk_pass(model: &Predictor, params: &ParamSet, chunk: &[&Sample], phase: Phase, grads: bool) -> Result<(f64, Vec<Tensor>), TrainError> {
    let batch = model.batch(chunk);
    let mut tape = Tape::new();
    let vars = ParamVars::load(&mut tape, params);
    let out = model.forward(&mut tape, &vars, &batch)?;
    let target = tape.leaf(batch.targets.clone());
    let loss = match phase {
        Phase::Pretrain => squared_error_sum(&mut tape, out.mu, target)?,
        Phase::Formal => nll_sum(&mut tape, &out, target)?,
    };
    let value = tape.value(loss).data()[0];
    if !grads {
        return Ok((value, Vec::new()));
    }
    tape.backward(loss)?;
    Ok((value, vars.grads(&tape)))
}

/// Batch loss (pooled RMSE or mean NLL) and, optionally, its gradient.
fn batch_pass(model: &Predictor, params: &ParamSet, samples: &[&Sample], phase: Phase, grads: bool) -> Result<(f64, Vec<Tensor>), TrainError> {
    let parts: Vec<(f64, Vec<Tensor>)> = samples
        .par_chunks(CHUNK)
        .map(|c| chunk_pass(model, params, c, phase, grads))
        .collect::<Result<_, _>>()?;
    let total: f64 = parts.iter().map(|p| p.0).sum();
    let n = samples.len() as f64;
    let (loss, scale) = match phase {
        Phase::Pretrain => {
            let cells = n * model.config.future_len as f64 * 2.0;
            let rmse = (total / cells).sqrt();
            (rmse, if rmse > 0.0 { 1.0 / (2.0 * rmse * cells) } else { 0.0 })
        }
        Phase::Formal => (total / n, 1.0 / n),
    };
    if !grads {
        return Ok((loss, Vec::new()));
    }
    let mut iter = parts.into_iter().map(|p| p.1);
    let mut sum = iter.next().unwrap_or_default();
    for g in iter {
        for (a, b) in sum.iter_mut().zip(g) {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
        }
    }
    for t in &mut sum {
        t.data_mut().iter_mut().for_each(|x| *x *= scale);
    }
    Ok((loss, sum))
}

/// Pooled RMSE (all samples, steps and coordinates) or mean per-sample NLL.
pub fn dataset_loss(model: &Predictor, samples: &[Sample], phase: Phase) -> Result<f64, TrainError> {
    let refs: Vec<&Sample> = samples.iter().collect();
    Ok(batch_pass(model, &model.params, &refs, phase, false)?.0)
}

impl<'a> Trainer<'a> {
    pub fn new(train: &'a [Sample], val: &'a [Sample], model: Predictor, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        if train.is_empty() {
            return Err(TrainError::EmptySplit("train"));
        }
        if val.is_empty() {
            return Err(TrainError::EmptySplit("validation"));
        }
        let state = TrainState {
            phase: Phase::Pretrain,
            phase_epoch: 0,
            adam: adam_for(&model.params, config.lr),
            current: model.params.clone(),
            best: None,
            best_val: None,
            since_best: 0,
            pretrain_best: None,
            curve: Vec::new(),
            finished: false,
        };
        Ok(Self { train, val, config, model, state })
    }

    /// Continues from a checkpoint's saved training state.
    pub fn resume(train: &'a [Sample], val: &'a [Sample], checkpoint: &Checkpoint) -> Result<Self, TrainError> {
        let config = checkpoint
            .train_config
            .ok_or_else(|| TrainError::Format("checkpoint has no training config".into()))?;
        let state = checkpoint
            .resume
            .clone()
            .ok_or_else(|| TrainError::Format("checkpoint has no resume state".into()))?;
        let mut t = Self::new(train, val, checkpoint.model.clone(), config)?;
        t.state = state;
        Ok(t)
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn is_finished(&self) -> bool {
        self.state.finished
    }

    fn phase_limit(&self, phase: Phase) -> usize {
        match phase {
            Phase::Pretrain => self.config.pretrain_epochs,
            Phase::Formal => self.config.formal_epochs,
        }
    }

    fn end_phase(&mut self) {
        let s = &mut self.state;
        match s.phase {
            Phase::Pretrain => {
                if let Some(best) = s.best.take() {
                    s.current = best;
                }
                s.pretrain_best = Some(s.current.clone());
                s.phase = Phase::Formal;
                s.phase_epoch = 0;
                s.best_val = None;
                s.since_best = 0;
                s.adam = adam_for(&s.current, self.config.formal_lr.unwrap_or(self.config.lr));
            }
            Phase::Formal => s.finished = true,
        }
    }

    /// Trains one epoch; `None` once both phases are complete.
    pub fn run_epoch(&mut self) -> Result<Option<EpochRecord>, TrainError> {
        while !self.state.finished && self.state.phase_epoch >= self.phase_limit(self.state.phase) {
            self.end_phase();
        }
        if self.state.finished {
            return Ok(None);
        }
        let phase = self.state.phase;
        let epoch = self.state.curve.len() + 1;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);

        let mut weighted = 0.0;
        for (bi, idx) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &self.train[i]).collect();
            let numerical = |msg: String| TrainError::Numerical { phase, epoch, batch: bi, msg };
            let (loss, mut grads) = match batch_pass(&self.model, &self.state.current, &batch, phase, true) {
                Err(TrainError::Predict(PredictError::Numerical(m))) => return Err(numerical(m)),
                other => other?,
            };
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(numerical(format!("loss {loss}")));
            }
            if let Some(max) = self.config.clip_norm {
                let norm = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
                if norm > max {
                    grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= max / norm));
                }
            }
            self.state.adam.step(self.state.current.tensors_mut(), &grads)?;
            weighted += loss * batch.len() as f64;
        }
        let train_loss = weighted / self.train.len() as f64;

        let evaluated = Predictor { params: self.state.current.clone(), ..self.model.clone() };
        let val_loss = dataset_loss(&evaluated, self.val, phase)?;
        if !val_loss.is_finite() {
            return Err(TrainError::Numerical { phase, epoch, batch: 0, msg: format!("validation loss {val_loss}") });
        }
        let s = &mut self.state;
        if s.best_val.is_none_or(|b| val_loss < b) {
            s.best_val = Some(val_loss);
            s.best = Some(s.current.clone());
            s.since_best = 0;
        } else {
            s.since_best += 1;
        }
        s.phase_epoch += 1;
        if s.since_best >= self.config.early_stop_patience {
            log::info!("early stop in {phase} after {} epochs", s.phase_epoch);
            s.phase_epoch = usize::MAX;
        }
        let record = EpochRecord { epoch, phase, train_loss, val_loss };
        log::info!("epoch {epoch} {phase}: train {train_loss:.6} val {val_loss:.6}");
        s.curve.push(record);
        Ok(Some(record))
    }

    /// Best-validation parameters of the most advanced phase reached.
    pub fn best_predictor(&self) -> Predictor {
        let s = &self.state;
        let params = s.best.clone().or_else(|| s.pretrain_best.clone()).unwrap_or_else(|| s.current.clone());
        Predictor { params, ..self.model.clone() }
    }

    /// Best parameters plus the resume state.
    pub fn checkpoint(&self) -> Checkpoint {
        let s = &self.state;
        Checkpoint::new(
            self.best_predictor(),
            Some(self.config),
            CheckpointMeta {
                epochs_completed: s.curve.len(),
                phase: Some(s.phase),
                best_val_loss: s.best_val,
                train_samples: self.train.len(),
            },
            Some(self.state.clone()),
        )
    }

    pub fn run(mut self) -> Result<TrainOutcome, TrainError> {
        while self.run_epoch()?.is_some() {}
        Ok(TrainOutcome {
            predictor: self.best_predictor(),
            curve: self.state.curve.clone(),
            checkpoint: self.checkpoint(),
        })
    }
}

/// Trains from scratch with both phases.
pub fn train(train: &[Sample], val: &[Sample], model: Predictor, config: TrainConfig) -> Result<TrainOutcome, TrainError> {
    Trainer::new(train, val, model, config)?.run()
}

/// `epoch,phase,train_loss,val_loss` rows.
pub fn write_loss_curve<W: Write>(out: W, curve: &[EpochRecord]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| TrainError::Io(e.to_string());
    w.write_record(["epoch", "phase", "train_loss", "val_loss"]).map_err(io)?;
    for r in curve {
        w.write_record([r.epoch.to_string(), r.phase.to_string(), r.train_loss.to_string(), r.val_loss.to_string()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| TrainError::Io(e.to_string()))
}
