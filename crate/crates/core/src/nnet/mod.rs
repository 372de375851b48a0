//! A small multilayer perceptron: ReLU trunk, one or more softmax heads.
//!
//! Stands in for the pre-trained network, the refit network, the longer
//! pre-training baseline and the distilled student. All math is `f64`.

mod checkpoint;
mod loss;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader};
pub use loss::{loss_and_grad, DistillConfig, Objective, Targets};
pub use train::{lr_at, train, TrainConfig, TrainReport};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestore::FeatureMatrix;

/// Layer widths: input, hidden trunk layers, and one entry per head.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub heads: Vec<usize>,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: Vec<usize>, heads: Vec<usize>) -> Result<Self> {
        let spec = Self {
            input,
            hidden,
            heads,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `[input, hidden.., classes]` with a single head.
    pub fn from_widths(widths: &[usize]) -> Result<Self> {
        match widths {
            [input, hidden @ .., classes] => {
                Self::new(*input, hidden.to_vec(), vec![*classes])
            }
            _ => Err(Error::Config(
                "an MLP needs at least an input and an output width".into(),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads.is_empty() {
            return Err(Error::Config("an MLP needs at least one head".into()));
        }
        let widths = std::iter::once(&self.input)
            .chain(&self.hidden)
            .chain(&self.heads);
        if widths.into_iter().any(|&w| w == 0) {
            return Err(Error::Config(format!("zero-width layer in {self:?}")));
        }
        Ok(())
    }

    /// Width of the last trunk layer (the input width with no hidden layers).
    pub fn penultimate_width(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input)
    }

    /// Same spec with every hidden width scaled by `factor` (at least 1).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            input: self.input,
            hidden: self
                .hidden
                .iter()
                .map(|&w| ((w as f64 * factor).round() as usize).max(1))
                .collect(),
            heads: self.heads.clone(),
        }
    }

    pub fn with_heads(&self, heads: Vec<usize>) -> Self {
        Self {
            heads,
            ..self.clone()
        }
    }

    pub fn param_count(&self) -> usize {
        let mut prev = self.input;
        let mut total = 0;
        for &h in &self.hidden {
            total += prev * h + h;
            prev = h;
        }
        total + self.heads.iter().map(|&c| prev * c + c).sum::<usize>()
    }
}

/// Affine layer `x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

/// Trunk and head parameters. Gradients share this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub trunk: Vec<Linear>,
    pub heads: Vec<Linear>,
}

impl Params {
    pub fn zeros_like(spec: &MlpSpec) -> Self {
        let mut prev = spec.input;
        let trunk = spec
            .hidden
            .iter()
            .map(|&h| {
                let l = Linear::zeros(prev, h);
                prev = h;
                l
            })
            .collect();
        let heads = spec.heads.iter().map(|&c| Linear::zeros(prev, c)).collect();
        Self { trunk, heads }
    }

    pub fn layers(&self) -> impl Iterator<Item = &Linear> {
        self.trunk.iter().chain(&self.heads)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Linear> {
        self.trunk.iter_mut().chain(&mut self.heads)
    }

    /// Every parameter in checkpoint order: per layer, weights then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in self.layers() {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub(crate) fn load_flat(&mut self, values: &[f64]) -> Result<()> {
        let expected: usize = self.layers().map(|l| l.weight.len() + l.bias.len()).sum();
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "{} parameter values for a model with {expected}",
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        for l in self.layers_mut() {
            for w in l.weight.iter_mut() {
                *w = it.next().unwrap();
            }
            for b in l.bias.iter_mut() {
                *b = it.next().unwrap();
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    spec: MlpSpec,
    params: Params,
    seed: u64,
}

/// Builds a fresh model.
///
/// Hidden weights are `N(0, 1/fan_in)`; head weights and every bias start at
/// zero, so each head initially predicts the uniform distribution.
pub fn init_model(spec: &MlpSpec, seed: u64) -> Result<MlpModel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::zeros_like(spec);
    for layer in &mut params.trunk {
        let fan_in = layer.weight.nrows();
        let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt())
            .map_err(|e| Error::Config(e.to_string()))?;
        for w in layer.weight.iter_mut() {
            *w = normal.sample(&mut rng);
        }
    }
    Ok(MlpModel {
        spec: spec.clone(),
        params,
        seed,
    })
}

/// Head probabilities and trunk output for one batch.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Vec<Array2<f64>>,
    pub probs: Vec<Array2<f64>>,
    pub penultimate: Array2<f64>,
}

/// Activations kept for backpropagation.
pub(crate) struct Activations {
    /// `inputs[l]` is the input of trunk layer `l`; the last entry is the
    /// penultimate output.
    pub inputs: Vec<Array2<f64>>,
    pub logits: Vec<Array2<f64>>,
}

impl MlpModel {
    pub fn from_params(spec: MlpSpec, params: Params, seed: u64) -> Result<Self> {
        spec.validate()?;
        let fresh = Params::zeros_like(&spec);
        let same_shape = fresh
            .layers()
            .zip(params.layers())
            .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.dim() == b.bias.dim())
            && fresh.trunk.len() == params.trunk.len()
            && fresh.heads.len() == params.heads.len();
        if !same_shape {
            return Err(Error::Shape(format!(
                "parameters do not chain for {spec:?}"
            )));
        }
        if params.layers().any(|l| {
            l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite())
        }) {
            return Err(Error::Validation("non-finite model parameter".into()));
        }
        Ok(Self { spec, params, seed })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    fn check_input(&self, d: usize) -> Result<()> {
        if d != self.spec.input {
            return Err(Error::Shape(format!(
                "batch has {d} columns, model expects {}",
                self.spec.input
            )));
        }
        Ok(())
    }

    pub(crate) fn run(&self, x: ArrayView2<'_, f64>) -> Activations {
        let mut inputs = Vec::with_capacity(self.params.trunk.len() + 1);
        inputs.push(x.to_owned());
        for layer in &self.params.trunk {
            let mut z = layer.apply(inputs.last().unwrap().view());
            z.mapv_inplace(|v| v.max(0.0));
            inputs.push(z);
        }
        let top = inputs.last().unwrap().view();
        let logits = self.params.heads.iter().map(|h| h.apply(top)).collect();
        Activations { inputs, logits }
    }

    pub(crate) fn logits_view(&self, x: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>> {
        self.check_input(x.ncols())?;
        Ok(self.run(x).logits)
    }

    pub fn forward(&self, batch: &FeatureMatrix) -> Result<ForwardOutput> {
        self.check_input(batch.d())?;
        let mut acts = self.run(batch.view());
        let penultimate = acts.inputs.pop().unwrap();
        let probs = acts.logits.iter().map(|l| softmax_rows(l.view(), 1.0)).collect();
        Ok(ForwardOutput {
            logits: acts.logits,
            probs,
            penultimate,
        })
    }
}

/// Penultimate activations for every row. Never mutates the model.
pub fn extract_features(model: &MlpModel, inputs: &FeatureMatrix) -> Result<FeatureMatrix> {
    model.check_input(inputs.d())?;
    const BLOCK: usize = 4096;
    let n = inputs.n();
    let mut out = Array2::zeros((n, model.spec.penultimate_width()));
    let x = inputs.view();
    let mut start = 0;
    while start < n {
        let end = (start + BLOCK).min(n);
        let mut acts = model.run(x.slice(s![start..end, ..]));
        out.slice_mut(s![start..end, ..])
            .assign(&acts.inputs.pop().unwrap());
        start = end;
    }
    FeatureMatrix::new(out)
}

/// Row-wise softmax of `logits / temperature`.
pub fn softmax_rows(logits: ArrayView2<'_, f64>, temperature: f64) -> Array2<f64> {
    let mut out = logits.mapv(|v| v / temperature);
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Row-wise log-softmax of `logits / temperature`.
pub fn log_softmax_rows(logits: ArrayView2<'_, f64>, temperature: f64) -> Array2<f64> {
    let mut out = logits.mapv(|v| v / temperature);
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}
