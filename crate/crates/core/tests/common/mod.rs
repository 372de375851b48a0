#![allow(dead_code)]

use clusterfit::featurestore::{FeatureMatrix, LabelVector};
use clusterfit::kmeans::squared_distance;
use clusterfit::nnet::{init_model, loss_and_grad, MlpModel, MlpSpec, Objective, Params};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize, std: f64) -> FeatureMatrix {
    let dist = Normal::new(0.0, std).unwrap();
    FeatureMatrix::from_vec(n, d, (0..n * d).map(|_| dist.sample(rng)).collect()).unwrap()
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, c: usize) -> LabelVector {
    LabelVector::new((0..n).map(|_| rng.random_range(0..c as u32)).collect(), c).unwrap()
}

/// `n_per` points around each center, labeled by center.
pub fn blobs(
    rng: &mut ChaCha8Rng,
    centers: &[Vec<f64>],
    n_per: usize,
    spread: f64,
) -> (FeatureMatrix, LabelVector) {
    let d = centers[0].len();
    let noise = Normal::new(0.0, spread).unwrap();
    let mut x = Vec::with_capacity(centers.len() * n_per * d);
    let mut y = Vec::with_capacity(centers.len() * n_per);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per {
            x.extend(center.iter().map(|v| v + noise.sample(rng)));
            y.push(c as u32);
        }
    }
    (
        FeatureMatrix::from_vec(y.len(), d, x).unwrap(),
        LabelVector::new(y, centers.len()).unwrap(),
    )
}

/// A model with every parameter random, so no gradient is trivially zero.
pub fn random_model(spec: &MlpSpec, seed: u64) -> MlpModel {
    let base = init_model(spec, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    let dist = Normal::new(0.0, 0.5).unwrap();
    let mut params = base.params().clone();
    for layer in params.heads.iter_mut() {
        layer.weight.mapv_inplace(|_| dist.sample(&mut r));
    }
    for layer in params.layers_mut() {
        layer.bias.mapv_inplace(|_| 0.2 * dist.sample(&mut r));
    }
    MlpModel::from_params(spec.clone(), params, seed).unwrap()
}

fn with_flat(template: &Params, values: &[f64]) -> Params {
    let mut p = template.clone();
    let mut it = values.iter().copied();
    for l in p.layers_mut() {
        l.weight.mapv_inplace(|_| it.next().unwrap());
        l.bias.mapv_inplace(|_| it.next().unwrap());
    }
    p
}

/// Smallest |pre-activation| of any hidden unit on `x`. Central differences
/// are meaningless when a perturbation can push a unit across the ReLU kink,
/// so gradient checks redraw inputs that come too close.
pub fn kink_margin(model: &MlpModel, x: &FeatureMatrix) -> f64 {
    let mut a = x.view().to_owned();
    let mut margin = f64::INFINITY;
    for layer in &model.params().trunk {
        let z = a.dot(&layer.weight) + &layer.bias;
        margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
        a = z.mapv(|v| v.max(0.0));
    }
    margin
}

/// Draws inputs until no hidden unit is within `KINK_MARGIN` of zero.
pub fn smooth_batch(
    model: &MlpModel,
    r: &mut ChaCha8Rng,
    n: usize,
) -> FeatureMatrix {
    loop {
        let x = gaussian(r, n, model.spec().input, 1.0);
        if kink_margin(model, &x) > KINK_MARGIN {
            return x;
        }
    }
}

pub const KINK_MARGIN: f64 = 1e-2;

/// Largest relative error between the analytic gradient and central
/// differences, over every parameter.
pub fn max_grad_rel_error(
    model: &MlpModel,
    x: &FeatureMatrix,
    y: &LabelVector,
    objective: &Objective<'_>,
) -> f64 {
    max_grad_rel_error_step(model, x, y, objective, 1e-4)
}

/// Relative error is `|fd - g| / max(|fd|, |g|, 1e-5)`.
pub fn max_grad_rel_error_step(
    model: &MlpModel,
    x: &FeatureMatrix,
    y: &LabelVector,
    objective: &Objective<'_>,
    step: f64,
) -> f64 {
    const FLOOR: f64 = 1e-5;
    let (_, grad) = loss_and_grad(model, x, y, objective).unwrap();
    let analytic = grad.flatten();
    let flat = model.params().flatten();
    let loss_at = |values: &[f64]| {
        let m = MlpModel::from_params(
            model.spec().clone(),
            with_flat(model.params(), values),
            model.seed(),
        )
        .unwrap();
        loss_and_grad(&m, x, y, objective).unwrap().0
    };
    let mut worst: f64 = 0.0;
    let mut probe = flat.clone();
    for i in 0..flat.len() {
        probe[i] = flat[i] + step;
        let up = loss_at(&probe);
        probe[i] = flat[i] - step;
        let down = loss_at(&probe);
        probe[i] = flat[i];
        let fd = (up - down) / (2.0 * step);
        let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(FLOOR);
        worst = worst.max(err);
    }
    worst
}

/// Minimum inertia over all `k^n` assignments that use every cluster.
pub fn exhaustive_min_inertia(x: &FeatureMatrix, k: usize) -> f64 {
    let n = x.n();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut used = vec![false; k];
        labels.iter().for_each(|&l| used[l] = true);
        if used.iter().all(|&u| u) {
            best = best.min(partition_inertia(x, &labels, k));
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
    }
}

pub fn partition_inertia(x: &FeatureMatrix, labels: &[usize], k: usize) -> f64 {
    let means = cluster_means(x, labels, k);
    let d = x.d();
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| squared_distance(x.row(i).as_slice().unwrap(), &means[l * d..(l + 1) * d]))
        .sum()
}

/// Row-major `k x d` means; empty clusters stay at zero.
pub fn cluster_means(x: &FeatureMatrix, labels: &[usize], k: usize) -> Vec<f64> {
    let d = x.d();
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums[l * d..(l + 1) * d].iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    for l in 0..k {
        for s in &mut sums[l * d..(l + 1) * d] {
            *s /= counts[l].max(1) as f64;
        }
    }
    sums
}
