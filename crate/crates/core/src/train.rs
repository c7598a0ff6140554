//! Mini-batch training with Adam and a linear learning-rate decay, plus
//! evaluation over a sample set.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentConfig, DepthSample};
use crate::model::{DepthNet, DepthPredictor};
use crate::objective::{compute_metrics, MetricReport, SilogParams};
use crate::optim::{Adam, AdamConfig};
use crate::param::ParamGrads;
use crate::{Error, Result, Scalar, Tape};

pub const DEFAULT_BATCH: usize = 8;
pub const DEFAULT_LR_START: f64 = 4e-5;
pub const DEFAULT_LR_END: f64 = 4e-6;

/// `lr(s) = start + (end − start)·s/steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSchedule {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

impl LinearSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if self.steps == 0 {
            return self.start;
        }
        let t = step.min(self.steps) as f64 / self.steps as f64;
        self.start + (self.end - self.start) * t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    /// Clamped to the number of scenes.
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub adam: AdamConfig,
    pub silog: SilogParams,
    pub augment: Option<AugmentConfig>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: DEFAULT_BATCH,
            lr_start: DEFAULT_LR_START,
            lr_end: DEFAULT_LR_END,
            adam: AdamConfig::default(),
            silog: SilogParams::default(),
            augment: Some(AugmentConfig::default()),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LinearSchedule {
        LinearSchedule {
            start: self.lr_start,
            end: self.lr_end,
            steps: self.steps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Sample indices for `step`: consecutive windows over a sequence of
/// seeded per-epoch permutations.
pub fn batch_indices(step: usize, n: usize, batch: usize, seed: u64) -> Vec<usize> {
    let b = batch.clamp(1, n.max(1));
    let start = step * b;
    let mut out = Vec::with_capacity(b);
    let mut epoch = usize::MAX;
    let mut perm: Vec<usize> = Vec::new();
    for pos in start..start + b {
        if pos / n != epoch {
            epoch = pos / n;
            perm = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        }
        out.push(perm[pos % n]);
    }
    out
}

pub struct Trainer<T: Scalar> {
    pub model: DepthNet<T>,
    pub config: TrainConfig,
    optimizer: Adam<T>,
    rng: ChaCha8Rng,
    step: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: DepthNet<T>, config: TrainConfig) -> Self {
        let optimizer = Adam::new(&model.params, config.adam);
        let rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
        Trainer {
            model,
            config,
            optimizer,
            rng,
            step: 0,
        }
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Mean loss and gradient over one batch, then one optimizer update.
    pub fn step(&mut self, samples: &[DepthSample<T>]) -> Result<StepLog> {
        if samples.is_empty() {
            return Err(Error::invalid("train", "no training samples"));
        }
        let batch = batch_indices(self.step, samples.len(), self.config.batch_size, self.config.seed);
        let mut grads = ParamGrads::zeros_like(&self.model.params);
        let mut total = 0.0;
        for &i in &batch {
            let sample = match &self.config.augment {
                Some(cfg) => augment(&samples[i], &mut self.rng, cfg),
                None => samples[i].clone(),
            };
            let tape = Tape::new(&self.model.params);
            let loss = self.model.forward_loss(&tape, &sample, self.config.silog)?;
            total += loss.value().item().as_f64();
            grads.accumulate(&tape.backward(loss)?);
        }
        let k = batch.len() as f64;
        grads.scale(T::lit(1.0 / k));
        let lr = self.config.schedule().lr(self.step);
        self.optimizer.step(&mut self.model.params, &grads, lr)?;
        let log = StepLog {
            step: self.step,
            lr,
            loss: total / k,
        };
        self.step += 1;
        Ok(log)
    }

    /// Runs the remaining steps, calling `on_step` after each.
    pub fn run(&mut self, samples: &[DepthSample<T>], mut on_step: impl FnMut(&StepLog)) -> Result<Vec<StepLog>> {
        let mut logs = Vec::with_capacity(self.config.steps.saturating_sub(self.step));
        while self.step < self.config.steps {
            let log = self.step(samples)?;
            if !log.loss.is_finite() {
                return Err(Error::invalid("train", format!("non-finite loss at step {}", log.step)));
            }
            on_step(&log);
            logs.push(log);
        }
        Ok(logs)
    }
}

pub fn train<T: Scalar>(model: DepthNet<T>, samples: &[DepthSample<T>], config: TrainConfig) -> Result<(DepthNet<T>, Vec<StepLog>)> {
    let mut trainer = Trainer::new(model, config);
    let logs = trainer.run(samples, |_| {})?;
    Ok((trainer.model, logs))
}

pub fn loss_csv(logs: &[StepLog]) -> String {
    let mut s = String::from("step,lr,loss\n");
    for l in logs {
        let _ = writeln!(s, "{},{:e},{:e}", l.step, l.lr, l.loss);
    }
    s
}

pub fn write_loss_csv(path: impl AsRef<Path>, logs: &[StepLog]) -> std::io::Result<()> {
    std::fs::write(path, loss_csv(logs))
}

/// Pixel-weighted metrics of `model` over `samples`.
pub fn evaluate<T: Scalar>(model: &impl DepthPredictor<T>, samples: &[DepthSample<T>], flip_average: bool) -> Result<MetricReport> {
    let reports = samples
        .iter()
        .map(|s| {
            let pred = if flip_average {
                crate::model::infer_flip_averaged(model, &s.rgb)?
            } else {
                model.predict(&s.rgb)?
            };
            compute_metrics(&pred, &s.depth, &s.mask)
        })
        .collect::<Result<Vec<_>>>()?;
    MetricReport::average(&reports).ok_or(Error::EmptyMask)
}

/// Ground truth evaluated against itself.
pub fn evaluate_oracle<T: Scalar>(samples: &[DepthSample<T>]) -> Result<MetricReport> {
    let reports = samples
        .iter()
        .map(|s| compute_metrics(&s.depth, &s.depth, &s.mask))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::average(&reports).ok_or(Error::EmptyMask)
}
