use ndarray::{Array2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{batch_loss_grad, Objective, Targets};
use super::{init_model, MlpModel, MlpSpec, Params};
use crate::error::{Error, Result};
use crate::featurestore::{FeatureMatrix, LabelVector};

/// Mini-batch SGD with momentum and a step-halving learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Number of equally spaced halvings over the run.
    pub halvings: u32,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            lr0: 0.1,
            halvings: 13,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("training needs at least one epoch".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 {} must be positive", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "momentum {} / weight decay {} out of range",
                self.momentum, self.weight_decay
            )));
        }
        Ok(())
    }

    /// Same run stretched to `factor`x the epochs; the halvings stretch with it.
    pub fn stretched(&self, factor: usize) -> Self {
        Self {
            epochs: self.epochs * factor,
            ..self.clone()
        }
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

/// Learning rate at optimizer step `step` of `total_steps`:
/// `lr0 * 2^-floor(step * s / total_steps)`.
pub fn lr_at(cfg: &TrainConfig, step: usize, total_steps: usize) -> f64 {
    let halvings = (step as u128 * cfg.halvings as u128 / total_steps.max(1) as u128) as i32;
    cfg.lr0 * 0.5f64.powi(halvings)
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: MlpModel,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Trains a freshly initialized `spec` model on `inputs`.
///
/// Initialization uses `cfg.seed`; shuffling uses an independent stream of
/// the same seed. Each epoch visits every row once in a new random order.
pub fn train(
    spec: &MlpSpec,
    inputs: &FeatureMatrix,
    labels: &LabelVector,
    cfg: &TrainConfig,
    objective: &Objective<'_>,
) -> Result<TrainReport> {
    cfg.validate()?;
    labels.check_pairs_with(inputs)?;
    if spec.input != inputs.d() {
        return Err(Error::Shape(format!(
            "inputs have {} columns, model expects {}",
            inputs.d(),
            spec.input
        )));
    }
    let mut model = init_model(spec, cfg.seed)?;
    objective.check(&model, labels)?;
    let n = inputs.n();
    if n == 0 {
        return Err(Error::Validation("empty training set".into()));
    }

    let mut heads: Vec<&[u32]> = vec![labels.as_slice()];
    let (teacher_logits, distill) = match objective {
        Objective::Distill { config, teacher } => {
            let mut logits = Array2::zeros((n, teacher.spec().heads[0]));
            const BLOCK: usize = 4096;
            for start in (0..n).step_by(BLOCK) {
                let end = (start + BLOCK).min(n);
                let block = teacher.logits_view(inputs.view().slice(ndarray::s![start..end, ..]))?;
                logits
                    .slice_mut(ndarray::s![start..end, ..])
                    .assign(&block[0]);
            }
            (Some(logits), Some(*config))
        }
        Objective::MultiTask { extra } => {
            heads.extend(extra.iter().map(|l| l.as_slice()));
            (None, None)
        }
        Objective::CrossEntropy => (None, None),
    };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut velocity = Params::zeros_like(spec);
    let total_steps = cfg.epochs * cfg.steps_per_epoch(n);
    let mut step = 0;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let x = inputs.view();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), idx);
            let tb = teacher_logits.as_ref().map(|t| t.select(Axis(0), idx));
            let targets = Targets {
                hard: heads
                    .iter()
                    .map(|h| idx.iter().map(|&i| h[i]).collect())
                    .collect(),
                soft: tb.as_ref().map(|t| (t.view(), distill.unwrap())),
            };
            let (loss, grad) = batch_loss_grad(&model, xb.view(), &targets);
            if !loss.is_finite() {
                return Err(Error::Divergence { step, loss });
            }
            epoch_sum += loss * idx.len() as f64;
            let lr = lr_at(cfg, step, total_steps);
            sgd_step(model.params_mut(), &mut velocity, &grad, lr, cfg);
            step += 1;
        }
        epoch_losses.push(epoch_sum / n as f64);
    }
    Ok(TrainReport {
        model,
        epoch_losses,
        steps: step,
    })
}

fn sgd_step(params: &mut Params, velocity: &mut Params, grad: &Params, lr: f64, cfg: &TrainConfig) {
    let (mu, wd) = (cfg.momentum, cfg.weight_decay);
    for ((p, v), g) in params
        .layers_mut()
        .zip(velocity.layers_mut())
        .zip(grad.layers())
    {
        Zip::from(&mut p.weight)
            .and(&mut v.weight)
            .and(&g.weight)
            .for_each(|w, v, &g| {
                *v = mu * *v + g + wd * *w;
                *w -= lr * *v;
            });
        Zip::from(&mut p.bias)
            .and(&mut v.bias)
            .and(&g.bias)
            .for_each(|b, v, &g| {
                *v = mu * *v + g;
                *b -= lr * *v;
            });
    }
}
