//! Full-weight pre-training and LoRA fine-tuning with Adam.

use serde::{Deserialize, Serialize};

use super::backward::{batch_gradients, batch_loss, Example};
use super::config::MicroLmConfig;
use super::lora::{LoraAdapter, LoraConfig};
use super::weights::MicroLmWeights;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHyper {
    pub steps: usize,
    pub learning_rate: f64,
    /// Examples per step; `None` uses the whole set every step.
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Validation cadence in steps (fine-tuning only).
    pub eval_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
}

impl TrainingHyper {
    pub fn pretraining() -> Self {
        Self {
            steps: 600,
            learning_rate: 3e-3,
            batch_size: Some(32),
            seed: 0,
            eval_every: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(1.0),
        }
    }

    pub fn lora() -> Self {
        Self {
            steps: 200,
            learning_rate: 1e-3,
            batch_size: None,
            seed: 0,
            eval_every: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: None,
        }
    }
}

/// Adam over a fixed list of flat parameter tensors.
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, hyper: &TrainingHyper, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, grad_scale: f64) {
        self.t += 1;
        let clip = match hyper.clip_norm {
            Some(max) => {
                let norm = grads
                    .iter()
                    .flat_map(|g| g.iter())
                    .map(|g| (g * grad_scale).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if norm > max { max / norm } else { 1.0 }
            }
            None => 1.0,
        };
        let scale = grad_scale * clip;
        let bc1 = 1.0 - hyper.beta1.powi(self.t);
        let bc2 = 1.0 - hyper.beta2.powi(self.t);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g[i] * scale;
                m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
                v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
                p[i] -= hyper.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + hyper.epsilon);
            }
        }
    }
}

/// Cycles through shuffled epochs of the data.
struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: SeededRng,
}

impl BatchSampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = SeededRng::derive(seed, 0xBA7C);
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        Self { order, cursor: 0, rng }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        (0..size.min(self.order.len()))
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.rng.shuffle(&mut self.order);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }
}

fn select(data: &[Example], batch_size: Option<usize>, sampler: &mut BatchSampler) -> Vec<Example> {
    match batch_size {
        Some(b) if b < data.len() => sampler.next(b).into_iter().map(|i| data[i].clone()).collect(),
        _ => data.to_vec(),
    }
}

fn check_finite(loss: f64, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Training(format!("non-finite loss at step {step}")))
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub weights: MicroLmWeights,
    /// Mean batch loss before each update.
    pub loss_trace: Vec<f64>,
}

/// Trains every weight on the answer token of each example.
pub fn pretrain(config: &MicroLmConfig, corpus: &[Example], hyper: &TrainingHyper) -> Result<PretrainOutcome> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::arg("pre-training corpus is empty"));
    }
    let mut weights = MicroLmWeights::init(config, hyper.seed);
    let sizes: Vec<usize> = weights.tensors().iter().map(|t| t.data.len()).collect();
    let mut adam = Adam::new(&sizes);
    let mut sampler = BatchSampler::new(corpus.len(), hyper.seed);
    let mut loss_trace = Vec::with_capacity(hyper.steps);
    for step in 0..hyper.steps {
        let batch = select(corpus, hyper.batch_size, &mut sampler);
        let grads = batch_gradients(&weights, None, &batch, true)?;
        let mean_loss = grads.loss / batch.len() as f64;
        check_finite(mean_loss, step)?;
        loss_trace.push(mean_loss);
        let g = grads.base.expect("base gradients requested");
        let gs: Vec<&[f64]> = g.tensors().into_iter().map(|t| t.data).collect();
        let ps: Vec<&mut [f64]> = weights.tensors_mut().into_iter().map(|t| t.data).collect();
        adam.step(hyper, ps, gs, 1.0 / batch.len() as f64);
    }
    if !weights.is_finite() {
        return Err(Error::Training("weights became non-finite".into()));
    }
    Ok(PretrainOutcome { weights, loss_trace })
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    /// Snapshot with the lowest validation loss.
    pub adapter: LoraAdapter,
    pub best_step: usize,
    pub best_val_loss: f64,
    pub final_adapter: LoraAdapter,
    pub final_val_loss: f64,
    pub loss_trace: Vec<f64>,
    /// `(step, validation loss)` at every evaluation point.
    pub val_trace: Vec<(usize, f64)>,
}

/// Mean loss per example; `NaN` for an empty set.
pub fn mean_loss(weights: &MicroLmWeights, adapter: Option<&LoraAdapter>, data: &[Example]) -> Result<f64> {
    Ok(batch_loss(weights, adapter, data)? / data.len() as f64)
}

/// Trains only the adapter; the base weights are borrowed immutably.
///
/// Validation loss is measured at step 0, every `eval_every` steps and after
/// the last step; the adapter with the lowest one (earliest on ties) is
/// returned. Without validation data the final adapter is returned.
pub fn finetune_lora(
    base: &MicroLmWeights,
    shots: &[Example],
    val: &[Example],
    lora: &LoraConfig,
    hyper: &TrainingHyper,
) -> Result<FinetuneOutcome> {
    if shots.is_empty() {
        return Err(Error::arg("fine-tuning needs at least one shot"));
    }
    let mut adapter = LoraAdapter::init(base, lora, hyper.seed)?;
    let sizes: Vec<usize> = adapter.tensors().iter().map(|t| t.data.len()).collect();
    let mut adam = Adam::new(&sizes);
    let mut sampler = BatchSampler::new(shots.len(), hyper.seed);
    let mut loss_trace = Vec::with_capacity(hyper.steps);
    let mut val_trace = Vec::new();

    let evaluate = |a: &LoraAdapter| -> Result<Option<f64>> {
        if val.is_empty() {
            return Ok(None);
        }
        let loss = mean_loss(base, Some(a), val)?;
        check_finite(loss, 0)?;
        Ok(Some(loss))
    };

    let mut best = (adapter.clone(), 0usize, f64::INFINITY);
    if let Some(l) = evaluate(&adapter)? {
        val_trace.push((0, l));
        best = (adapter.clone(), 0, l);
    }
    let eval_every = hyper.eval_every.max(1);
    for step in 1..=hyper.steps {
        let batch = select(shots, hyper.batch_size, &mut sampler);
        let grads = batch_gradients(base, Some(&adapter), &batch, false)?;
        let train_loss = grads.loss / batch.len() as f64;
        check_finite(train_loss, step)?;
        loss_trace.push(train_loss);
        let g = grads.lora.expect("adapter gradients");
        let gs: Vec<&[f64]> = g.tensors().into_iter().map(|t| t.data).collect();
        let ps: Vec<&mut [f64]> = adapter.tensors_mut().into_iter().map(|t| t.data).collect();
        adam.step(hyper, ps, gs, 1.0 / batch.len() as f64);

        if step % eval_every == 0 || step == hyper.steps {
            if let Some(l) = evaluate(&adapter)? {
                val_trace.push((step, l));
                if l < best.2 {
                    best = (adapter.clone(), step, l);
                }
            }
        }
    }
    if !adapter.is_finite() {
        return Err(Error::Training("adapter became non-finite".into()));
    }
    let final_val_loss = val_trace.last().map_or(f64::NAN, |&(_, l)| l);
    if val.is_empty() {
        best = (adapter.clone(), hyper.steps, f64::NAN);
    }
    Ok(FinetuneOutcome {
        adapter: best.0,
        best_step: best.1,
        best_val_loss: best.2,
        final_adapter: adapter,
        final_val_loss,
        loss_trace,
        val_trace,
    })
}
