use std::path::PathBuf;

use ndarray::{Array2, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::checkpoint::save_checkpoint;
use super::model::{EncodedExample, FusionModel, Gradients};
use super::FusionError;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            lr: 3e-5,
            warmup_steps: 2000,
            total_steps: 10_000,
            batch_size: 32,
            weight_decay: 0.01,
            seed: 0,
            max_grad_norm: Some(1.0),
        }
    }
}

impl Schedule {
    /// Linear warmup from 0 to `lr`, constant afterwards.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step >= self.warmup_steps {
            self.lr
        } else {
            self.lr * (step + 1) as f64 / self.warmup_steps as f64
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Write a checkpoint every this many steps (and after the last one).
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss of every executed step.
    pub loss_curve: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("loss diverged at step {step}; parameters restored to the last finite state")]
    Diverged { step: usize, last_checkpoint: Option<PathBuf> },
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

/// Adam with decoupled weight decay. Decay skips single-row tensors
/// (biases and layer-norm parameters).
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
    t: i32,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &[Array2<T>], weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Array2<T>], grads: &Gradients<T>, lr: f64) {
        self.t += 1;
        let c = T::from_f64_lossy;
        let (b1, b2) = (c(self.beta1), c(self.beta2));
        let bc1 = c(1.0 - self.beta1.powi(self.t));
        let bc2 = c(1.0 - self.beta2.powi(self.t));
        let (lr_t, eps) = (c(lr), c(self.eps));
        for (i, p) in params.iter_mut().enumerate() {
            let decay = if p.nrows() > 1 { c(lr * self.weight_decay) } else { T::zero() };
            Zip::from(p).and(&mut self.m[i]).and(&mut self.v[i]).and(&grads.tensors[i]).for_each(|p, m, v, &g| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                *p = *p - decay * *p - lr_t * update;
            });
        }
    }
}

fn clip(grads: &mut Gradients<impl Scalar>, max_norm: f64) {
    let norm = grads.global_norm();
    if norm > max_norm {
        let s = Scalar::from_f64_lossy(max_norm / norm);
        for t in &mut grads.tensors {
            t.mapv_inplace(|v| v * s);
        }
    }
}

/// Trains with [`train_with`] and no early stop.
pub fn train<T: Scalar>(
    model: &mut FusionModel<T>,
    data: &[EncodedExample],
    schedule: &Schedule,
    opts: &TrainOptions,
) -> Result<TrainReport, TrainError> {
    train_with(model, data, schedule, opts, |_, _, _| true)
}

/// Runs up to `total_steps` optimizer steps over seeded shuffled batches.
/// After every step `keep_going(step, loss, model)` decides whether to go on.
pub fn train_with<T: Scalar>(
    model: &mut FusionModel<T>,
    data: &[EncodedExample],
    schedule: &Schedule,
    opts: &TrainOptions,
    mut keep_going: impl FnMut(usize, f64, &FusionModel<T>) -> bool,
) -> Result<TrainReport, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if schedule.batch_size == 0 {
        return Err(TrainError::Schedule("batch_size must be positive".into()));
    }
    if !(schedule.lr.is_finite() && schedule.lr >= 0.0) {
        return Err(TrainError::Schedule("lr must be finite and non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut opt = AdamW::new(model.params(), schedule.weight_decay);
    let mut report = TrainReport::default();
    let mut last_checkpoint = None;

    for step in 0..schedule.total_steps {
        let mut batch = Vec::with_capacity(schedule.batch_size.min(data.len()));
        for _ in 0..schedule.batch_size.min(data.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(data[order[cursor]].clone());
            cursor += 1;
        }
        let (loss, mut grads) = match model.loss_and_gradients(&batch) {
            Ok(r) => r,
            Err(FusionError::NonFiniteGradient(name)) => {
                log::error!("step {step}: non-finite gradient in {name}");
                return Err(TrainError::Diverged { step, last_checkpoint });
            }
            Err(e) => return Err(e.into()),
        };
        let loss = loss.to_f64_lossy();
        if !loss.is_finite() {
            return Err(TrainError::Diverged { step, last_checkpoint });
        }
        report.loss_curve.push(loss);
        let lr = schedule.lr_at(step);
        if lr > 0.0 {
            if let Some(max) = schedule.max_grad_norm {
                clip(&mut grads, max);
            }
            let snapshot = model.params().to_vec();
            opt.step(model.params_mut(), &grads, lr);
            if model.params().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
                model.params_mut().clone_from_slice(&snapshot);
                return Err(TrainError::Diverged { step, last_checkpoint });
            }
        }
        let done = step + 1 == schedule.total_steps;
        let stop = !keep_going(step, loss, model);
        if let (Some(every), Some(dir)) = (opts.checkpoint_every, &opts.checkpoint_dir) {
            if every > 0 && ((step + 1) % every == 0 || done || stop) {
                let path = dir.join(format!("step-{:06}.ckpt", step + 1));
                save_checkpoint(model, &path)?;
                report.checkpoints.push(path.clone());
                last_checkpoint = Some(path);
            }
        }
        if stop {
            break;
        }
    }
    Ok(report)
}
