//! Linear probes: multinomial logistic regression on frozen features.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestore::{FeatureMatrix, LabelVector};
use crate::nnet::softmax_rows;

/// SGD settings for the probe. The learning rate drops by 10x at two equally
/// spaced points of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Z-score each feature column with training-set statistics first.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 256,
            lr0: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            standardize: true,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr0 > 0.0) {
            return Err(Error::Config(format!(
                "probe needs a positive batch size and lr0, got {} / {}",
                self.batch_size, self.lr0
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize, total_steps: usize) -> f64 {
        let drops = (3 * step / total_steps.max(1)).min(2) as i32;
        self.lr0 * 0.1f64.powi(drops)
    }
}

/// `argmax(x W + b)` classifier, with optional input standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    /// `d x C`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    shift: Option<Array1<f64>>,
    scale: Option<Array1<f64>>,
    train_top1: f64,
}

impl LinearClassifier {
    /// A classifier with the given parameters and no standardization.
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.ncols() != bias.len() {
            return Err(Error::Shape(format!(
                "weight has {} classes, bias {}",
                weight.ncols(),
                bias.len()
            )));
        }
        Ok(Self {
            weight,
            bias,
            shift: None,
            scale: None,
            train_top1: 0.0,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn train_top1(&self) -> f64 {
        self.train_top1
    }

    fn prepare(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut x = x.to_owned();
        if let (Some(shift), Some(scale)) = (&self.shift, &self.scale) {
            for mut row in x.outer_iter_mut() {
                Zip::from(&mut row)
                    .and(shift)
                    .and(scale)
                    .for_each(|v, &m, &s| *v = (*v - m) * s);
            }
        }
        x
    }

    fn scores(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.prepare(x).dot(&self.weight) + &self.bias
    }

    /// Predicted class per row; ties go to the lowest class id.
    pub fn predict(&self, features: &FeatureMatrix) -> Result<Vec<usize>> {
        if features.d() != self.dim() {
            return Err(Error::Shape(format!(
                "features have dimension {}, classifier expects {}",
                features.d(),
                self.dim()
            )));
        }
        Ok(self
            .scores(features.view())
            .outer_iter()
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub top1: f64,
    pub train_top1: f64,
    pub num_eval: usize,
    /// Accuracy per class; `None` for classes absent from the eval split.
    pub per_class: Vec<Option<f64>>,
}

/// Fits a softmax classifier on fixed features. `train_features` is only read.
pub fn probe_fit(
    train_features: &FeatureMatrix,
    train_labels: &LabelVector,
    cfg: &ProbeConfig,
) -> Result<LinearClassifier> {
    cfg.validate()?;
    train_labels.check_pairs_with(train_features)?;
    let present = train_labels.class_counts().iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::Degenerate(format!(
            "probe training set covers {present} class(es); need at least 2"
        )));
    }
    let (n, d, c) = (
        train_features.n(),
        train_features.d(),
        train_labels.num_classes(),
    );
    let mut clf = LinearClassifier::new(Array2::zeros((d, c)), Array1::zeros(c))?;
    if cfg.standardize {
        let x = train_features.view();
        let mean = x.mean_axis(Axis(0)).unwrap();
        let var = x.var_axis(Axis(0), 0.0);
        clf.shift = Some(mean);
        clf.scale = Some(var.mapv(|v| if v > 1e-24 { 1.0 / v.sqrt() } else { 1.0 }));
    }
    let x = clf.prepare(train_features.view());
    let labels = train_labels.as_slice();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut vw = Array2::<f64>::zeros((d, c));
    let mut vb = Array1::<f64>::zeros(c);
    let total_steps = cfg.epochs * n.div_ceil(cfg.batch_size);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), idx);
            let scores = xb.dot(&clf.weight) + &clf.bias;
            let mut g = softmax_rows(scores.view(), 1.0);
            for (r, &i) in idx.iter().enumerate() {
                g[[r, labels[i] as usize]] -= 1.0;
            }
            g.mapv_inplace(|v| v / idx.len() as f64);
            let gw = xb.t().dot(&g);
            let gb = g.sum_axis(Axis(0));
            let lr = cfg.lr_at(step, total_steps);
            Zip::from(&mut clf.weight)
                .and(&mut vw)
                .and(&gw)
                .for_each(|w, v, &g| {
                    *v = cfg.momentum * *v + g + cfg.weight_decay * *w;
                    *w -= lr * *v;
                });
            Zip::from(&mut clf.bias).and(&mut vb).and(&gb).for_each(|b, v, &g| {
                *v = cfg.momentum * *v + g;
                *b -= lr * *v;
            });
            step += 1;
        }
    }
    if clf.weight.iter().chain(clf.bias.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            step,
            loss: f64::NAN,
        });
    }
    clf.train_top1 = accuracy(&clf.predict(train_features)?, train_labels);
    Ok(clf)
}

/// Top-1 accuracy of `clf` on the eval split.
pub fn probe_eval(
    clf: &LinearClassifier,
    eval_features: &FeatureMatrix,
    eval_labels: &LabelVector,
) -> Result<ProbeResult> {
    eval_labels.check_pairs_with(eval_features)?;
    if eval_labels.n() == 0 {
        return Err(Error::Validation("empty eval split".into()));
    }
    let pred = clf.predict(eval_features)?;
    let c = clf.num_classes().max(eval_labels.num_classes());
    let mut hits = vec![0usize; c];
    let mut totals = vec![0usize; c];
    for (p, y) in pred.iter().zip(eval_labels.iter()) {
        totals[y] += 1;
        if *p == y {
            hits[y] += 1;
        }
    }
    Ok(ProbeResult {
        top1: accuracy(&pred, eval_labels),
        train_top1: clf.train_top1,
        num_eval: eval_labels.n(),
        per_class: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
            .collect(),
    })
}

/// Fits one probe per learning rate and keeps the best eval top-1 (first
/// wins on ties).
pub fn probe_lr_sweep(
    train_features: &FeatureMatrix,
    train_labels: &LabelVector,
    eval_features: &FeatureMatrix,
    eval_labels: &LabelVector,
    cfg: &ProbeConfig,
    lr_grid: &[f64],
) -> Result<(ProbeResult, f64)> {
    let grid: Vec<f64> = if lr_grid.is_empty() {
        vec![cfg.lr0]
    } else {
        lr_grid.to_vec()
    };
    let mut best: Option<(ProbeResult, f64)> = None;
    for lr in grid {
        let clf = probe_fit(
            train_features,
            train_labels,
            &ProbeConfig {
                lr0: lr,
                ..cfg.clone()
            },
        )?;
        let res = probe_eval(&clf, eval_features, eval_labels)?;
        if best.as_ref().is_none_or(|(b, _)| res.top1 > b.top1) {
            best = Some((res, lr));
        }
    }
    Ok(best.unwrap())
}

fn accuracy(pred: &[usize], labels: &LabelVector) -> f64 {
    let hits = pred.iter().zip(labels.iter()).filter(|(p, y)| **p == *y).count();
    hits as f64 / labels.n().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn counts_argmax_matches() {
        // Always predicts class 0.
        let clf = LinearClassifier::new(Array2::zeros((1, 2)), array![1.0, 0.0]).unwrap();
        let x = FeatureMatrix::from_vec(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = LabelVector::new(vec![0, 1, 0, 1], 2).unwrap();
        let r = probe_eval(&clf, &x, &y).unwrap();
        assert_eq!(r.top1, 0.5);
        assert_eq!(r.per_class, vec![Some(1.0), Some(0.0)]);
        assert_eq!(r.num_eval, 4);
    }

    #[test]
    fn ties_pick_lowest_class() {
        let clf = LinearClassifier::new(Array2::zeros((2, 3)), Array1::zeros(3)).unwrap();
        let x = FeatureMatrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(clf.predict(&x).unwrap(), vec![0]);
    }

    #[test]
    fn memorizes_three_points() {
        let x = FeatureMatrix::from_vec(3, 2, vec![0.0, 0.0, 5.0, 0.0, 0.0, 5.0]).unwrap();
        let y = LabelVector::new(vec![0, 1, 2], 3).unwrap();
        let cfg = ProbeConfig {
            epochs: 200,
            batch_size: 3,
            lr0: 0.5,
            ..Default::default()
        };
        let clf = probe_fit(&x, &y, &cfg).unwrap();
        assert_eq!(probe_eval(&clf, &x, &y).unwrap().top1, 1.0);
        assert_eq!(clf.train_top1(), 1.0);
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = FeatureMatrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        let y = LabelVector::new(vec![1, 1], 3).unwrap();
        assert!(matches!(
            probe_fit(&x, &y, &ProbeConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn zero_epochs_leaves_zero_classifier() {
        let x = FeatureMatrix::from_vec(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = LabelVector::new(vec![0, 1, 2, 3], 4).unwrap();
        let clf = probe_fit(&x, &y, &ProbeConfig { epochs: 0, ..Default::default() }).unwrap();
        assert!(clf.weight.iter().all(|&w| w == 0.0));
        assert_eq!(probe_eval(&clf, &x, &y).unwrap().top1, 0.25);
    }

    #[test]
    fn shape_mismatch() {
        let clf = LinearClassifier::new(Array2::zeros((2, 3)), Array1::zeros(3)).unwrap();
        let x = FeatureMatrix::from_vec(1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        let y = LabelVector::new(vec![0], 3).unwrap();
        assert!(matches!(probe_eval(&clf, &x, &y), Err(Error::Shape(_))));
    }

    #[test]
    fn probe_schedule_drops_twice() {
        let cfg = ProbeConfig { lr0: 0.01, ..Default::default() };
        assert_eq!(cfg.lr_at(0, 90), 0.01);
        assert!((cfg.lr_at(30, 90) - 0.001).abs() < 1e-18);
        assert!((cfg.lr_at(89, 90) - 0.0001).abs() < 1e-18);
    }
}
