use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backprop::{batch_gradient, Sequence};
use super::{LstmModel, OUTPUT_SIZE};
use crate::error::{Error, Result};
use crate::parallel::parallel_map;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden_size: usize,
    pub fc_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Drop probability on the FC activations.
    pub dropout: f64,
    /// Episodes per optimizer step.
    pub batch_size: usize,
    /// Global gradient-norm clip; `0` disables clipping.
    #[serde(default)]
    pub max_grad_norm: f64,
    pub seed: u64,
    /// Worker threads for per-episode passes. Does not affect results.
    #[serde(default = "one", skip_serializing)]
    pub jobs: usize,
}

fn one() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_size: 30,
            fc_size: 30,
            epochs: 200,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            dropout: 0.2,
            batch_size: 8,
            max_grad_norm: 0.0,
            seed: 0,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.hidden_size > 0
            && self.fc_size > 0
            && self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && (0.0..1.0).contains(&self.dropout)
            && self.batch_size > 0
            && self.max_grad_norm >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training config: {self:?}")))
        }
    }

    /// SHA-256 of the canonical JSON form (thread count excluded).
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_val_rmse: f64,
}

impl TrainingLog {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_rmse";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{}", e.epoch, e.train_loss, e.val_rmse);
        }
        out
    }
}

/// Inference-mode RMSE over all components of all sequences.
pub fn rmse(model: &LstmModel, set: &[Sequence], jobs: usize) -> f64 {
    let parts = parallel_map(set, jobs, |_, seq| {
        let sse: f64 = model
            .predict_sequence(&seq.inputs)
            .iter()
            .zip(&seq.targets)
            .map(|(y, t)| (y[0] - t.0[0]).powi(2) + (y[1] - t.0[1]).powi(2))
            .sum();
        (sse, seq.len() * OUTPUT_SIZE)
    });
    let (sse, n) = parts
        .iter()
        .fold((0.0, 0usize), |(a, b), (s, n)| (a + s, b + n));
    (sse / n.max(1) as f64).sqrt()
}

fn clip(grad: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= k);
    }
}

/// Trains a fresh model with Adam and dropout; returns the parameters with
/// the lowest validation RMSE together with the per-epoch log.
pub fn train(
    train_set: &[Sequence],
    val_set: &[Sequence],
    config: &TrainConfig,
    z_max: f64,
) -> Result<(LstmModel, TrainingLog)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidInput(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let mut model = LstmModel::new(config.hidden_size, config.fc_size, z_max, config.dropout, config.seed);
    model.metadata.config_hash = config.hash();
    let mut adam = Adam::new(
        model.layout.len(),
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.epsilon,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = TrainingLog {
        best_val_rmse: f64::INFINITY,
        ..TrainingLog::default()
    };
    let mut best = model.params.clone();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut sq, mut count) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sequence> = chunk.iter().map(|&i| &train_set[i]).collect();
            let seed = rng.next_u64();
            let (loss, mut grad) = batch_gradient(&model, &batch, Some(seed), config.jobs);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            clip(&mut grad, config.max_grad_norm);
            adam.step(&mut model.params, &grad);
            let n: usize = batch.iter().map(|s| s.len() * OUTPUT_SIZE).sum();
            sq += loss * loss * n as f64;
            count += n;
        }
        if !model.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let val_rmse = rmse(&model, val_set, config.jobs);
        if !val_rmse.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        if val_rmse < log.best_val_rmse {
            log.best_val_rmse = val_rmse;
            log.best_epoch = epoch;
            best.clone_from(&model.params);
        }
        log.epochs.push(EpochLog {
            epoch,
            train_loss: (sq / count as f64).sqrt(),
            val_rmse,
        });
    }
    if config.epochs == 0 {
        log.best_val_rmse = rmse(&model, val_set, config.jobs);
    }
    model.params = best;
    Ok((model, log))
}
