//! Losses and their exact gradients.
//!
//! Every loss is a mean over the batch. Distillation mixes a soft term on
//! temperature-scaled logits with ordinary cross-entropy:
//!
//! ```text
//! L = alpha * T^2 * CE(softmax(t / T), softmax(s / T)) + (1 - alpha) * CE(y, softmax(s))
//! ```
//!
//! where `t` are teacher logits and `s` student logits. The `T^2` factor keeps
//! the soft-term gradient on the same scale as the hard term for any `T`.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{log_softmax_rows, softmax_rows, Linear, MlpModel, Params};
use crate::error::{Error, Result};
use crate::featurestore::{FeatureMatrix, LabelVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    pub temperature: f64,
    /// Weight of the soft term; the hard term gets `1 - alpha`.
    pub alpha: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            temperature: 20.0,
            alpha: 0.75,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} is outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// What the network is trained to predict.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Cross-entropy on a single head.
    CrossEntropy,
    /// Soft targets from a frozen teacher blended with the hard labels.
    Distill {
        config: DistillConfig,
        teacher: &'a MlpModel,
    },
    /// One cross-entropy per head, summed. Head 0 uses the primary labels,
    /// head `i` uses `extra[i - 1]`.
    MultiTask { extra: &'a [LabelVector] },
}

impl Objective<'_> {
    pub(crate) fn check(&self, model: &MlpModel, labels: &LabelVector) -> Result<()> {
        let heads = &model.spec().heads;
        let check_head = |h: usize, l: &LabelVector| -> Result<()> {
            if l.num_classes() > heads[h] {
                return Err(Error::Validation(format!(
                    "head {h} has {} outputs but labels span {} classes",
                    heads[h],
                    l.num_classes()
                )));
            }
            Ok(())
        };
        match self {
            Objective::CrossEntropy | Objective::Distill { .. } => {
                if heads.len() != 1 {
                    return Err(Error::Config(format!(
                        "single-task objective on a model with {} heads",
                        heads.len()
                    )));
                }
                check_head(0, labels)?;
            }
            Objective::MultiTask { extra } => {
                if heads.len() != extra.len() + 1 {
                    return Err(Error::Config(format!(
                        "{} label sets for a model with {} heads",
                        extra.len() + 1,
                        heads.len()
                    )));
                }
                check_head(0, labels)?;
                for (i, l) in extra.iter().enumerate() {
                    check_head(i + 1, l)?;
                    if l.n() != labels.n() {
                        return Err(Error::Shape(format!(
                            "head {} has {} labels, head 0 has {}",
                            i + 1,
                            l.n(),
                            labels.n()
                        )));
                    }
                }
            }
        }
        if let Objective::Distill { config, teacher } = self {
            config.validate()?;
            if teacher.spec().input != model.spec().input {
                return Err(Error::Shape(format!(
                    "teacher input width {} differs from student {}",
                    teacher.spec().input,
                    model.spec().input
                )));
            }
            if teacher.spec().heads.first() != heads.first() {
                return Err(Error::Shape(format!(
                    "teacher predicts {:?} classes, student {:?}",
                    teacher.spec().heads.first(),
                    heads.first()
                )));
            }
        }
        Ok(())
    }
}

/// Per-batch targets after the teacher has been evaluated.
pub struct Targets<'a> {
    /// Hard labels per head.
    pub hard: Vec<Vec<u32>>,
    /// Teacher logits for the batch, when distilling.
    pub soft: Option<(ArrayView2<'a, f64>, DistillConfig)>,
}

/// Loss and gradient on one batch.
pub fn loss_and_grad(
    model: &MlpModel,
    batch: &FeatureMatrix,
    labels: &LabelVector,
    objective: &Objective<'_>,
) -> Result<(f64, Params)> {
    labels.check_pairs_with(batch)?;
    objective.check(model, labels)?;
    let mut hard = vec![labels.as_slice().to_vec()];
    let teacher_logits;
    let soft = match objective {
        Objective::CrossEntropy => None,
        Objective::MultiTask { extra } => {
            hard.extend(extra.iter().map(|l| l.as_slice().to_vec()));
            None
        }
        Objective::Distill { config, teacher } => {
            teacher_logits = teacher.logits_view(batch.view())?.swap_remove(0);
            Some((teacher_logits.view(), *config))
        }
    };
    Ok(batch_loss_grad(model, batch.view(), &Targets { hard, soft }))
}

pub(crate) fn batch_loss_grad(
    model: &MlpModel,
    x: ArrayView2<'_, f64>,
    targets: &Targets<'_>,
) -> (f64, Params) {
    let n = x.nrows() as f64;
    let mut acts = model.run(x);
    let mut total = 0.0;
    let mut dlogits = Vec::with_capacity(acts.logits.len());

    for (h, logits) in acts.logits.iter().enumerate() {
        let labels = &targets.hard[h];
        let logp = log_softmax_rows(logits.view(), 1.0);
        let hard_sum: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -logp[[i, y as usize]])
            .sum();
        let mut grad = logp.mapv(f64::exp);
        for (i, &y) in labels.iter().enumerate() {
            grad[[i, y as usize]] -= 1.0;
        }
        match (&targets.soft, h) {
            (Some((teacher, cfg)), 0) => {
                let t = cfg.temperature;
                let q = softmax_rows(*teacher, t);
                let logp_t = log_softmax_rows(logits.view(), t);
                let soft_sum = -(&q * &logp_t).sum();
                total += cfg.alpha * t * t * (soft_sum / n) + (1.0 - cfg.alpha) * (hard_sum / n);
                let soft_grad = logp_t.mapv(f64::exp) - &q;
                grad.zip_mut_with(&soft_grad, |g, &s| {
                    *g = cfg.alpha * t * s + (1.0 - cfg.alpha) * *g;
                });
            }
            _ => total += hard_sum / n,
        }
        grad.mapv_inplace(|g| g / n);
        dlogits.push(grad);
    }

    let params = model.params();
    let top = acts.inputs.pop().unwrap();
    let mut heads = Vec::with_capacity(dlogits.len());
    let mut dtop = Array2::<f64>::zeros(top.raw_dim());
    for (layer, g) in params.heads.iter().zip(&dlogits) {
        heads.push(Linear {
            weight: top.t().dot(g),
            bias: g.sum_axis(Axis(0)),
        });
        dtop = dtop + g.dot(&layer.weight.t());
    }

    let mut trunk = Vec::with_capacity(params.trunk.len());
    let mut upstream = dtop;
    let mut out = top;
    for (l, layer) in params.trunk.iter().enumerate().rev() {
        // ReLU derivative from the layer's own output.
        upstream.zip_mut_with(&out, |g, &a| {
            if a <= 0.0 {
                *g = 0.0;
            }
        });
        let input = acts.inputs.pop().unwrap();
        trunk.push(Linear {
            weight: input.t().dot(&upstream),
            bias: upstream.sum_axis(Axis(0)),
        });
        if l > 0 {
            upstream = upstream.dot(&layer.weight.t());
        }
        out = input;
    }
    trunk.reverse();
    (total, Params { trunk, heads })
}
