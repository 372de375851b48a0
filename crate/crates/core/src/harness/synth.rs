//! Hierarchical Gaussian mixture with a coarse/fine granularity gap.
//!
//! Coarse centers are drawn around the origin, each coarse class owns
//! `fines_per_coarse` fine centers scattered around it, and samples are a fine
//! center plus isotropic noise. Pre-training and clustering splits carry the
//! coarse label; the target splits carry the fine label.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestore::{Dataset, DatasetRole, FeatureMatrix, LabelVector};
use crate::kmeans::squared_distance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_coarse: usize,
    pub fines_per_coarse: usize,
    pub d_input: usize,
    /// Per-coordinate standard deviation of sample noise around a fine center.
    pub noise_scale: f64,
    /// Per-coordinate standard deviation of coarse centers around the origin.
    pub coarse_separation: f64,
    /// Per-coordinate standard deviation of fine centers around their coarse
    /// center.
    pub fine_separation: f64,
    pub n_pretrain: usize,
    /// Ignored while `alias_clusterfit` is set.
    pub n_clusterfit: usize,
    pub n_target_train: usize,
    pub n_target_eval: usize,
    /// Reuse the pre-training split as the clustering split.
    pub alias_clusterfit: bool,
    /// Draw pre-training samples from only the first `m` coarse classes,
    /// keeping `n_pretrain` fixed.
    pub pretrain_top_m: Option<usize>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_coarse: 20,
            fines_per_coarse: 5,
            d_input: 32,
            noise_scale: 0.8,
            coarse_separation: 1.0,
            fine_separation: 0.5,
            n_pretrain: 20_000,
            n_clusterfit: 20_000,
            n_target_train: 10_000,
            n_target_eval: 5_000,
            alias_clusterfit: true,
            pretrain_top_m: None,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn num_fine(&self) -> usize {
        self.num_coarse * self.fines_per_coarse
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.num_coarse,
            self.fines_per_coarse,
            self.d_input,
            self.n_pretrain,
            self.n_target_train,
            self.n_target_eval,
        ];
        if counts.contains(&0) || (!self.alias_clusterfit && self.n_clusterfit == 0) {
            return Err(Error::Config(format!("synthetic spec has a zero count: {self:?}")));
        }
        if !(self.coarse_separation > 0.0 && self.fine_separation > 0.0) {
            return Err(Error::Config(format!(
                "separations must be positive, got coarse {} / fine {}",
                self.coarse_separation, self.fine_separation
            )));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::Config(format!(
                "noise scale {} is negative",
                self.noise_scale
            )));
        }
        if let Some(m) = self.pretrain_top_m {
            if m == 0 || m > self.num_coarse {
                return Err(Error::Config(format!(
                    "top-m {m} must be in 1..={}",
                    self.num_coarse
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    /// Coarse labels (restricted to top-m when configured).
    pub pretrain: Dataset,
    /// Coarse labels; equal to `pretrain` when aliased.
    pub clusterfit: Dataset,
    /// Fine labels.
    pub target_train: Dataset,
    pub target_eval: Dataset,
    /// `num_fine x d_input`
    pub fine_centers: FeatureMatrix,
    pub coarse_of_fine: Vec<usize>,
    /// Nearest-true-fine-center accuracy on the eval split.
    pub reference_top1: f64,
}

impl SynthData {
    /// Maps fine target labels to their coarse class.
    pub fn coarse_labels(&self, fine: &LabelVector) -> Result<LabelVector> {
        let num_coarse = self.coarse_of_fine.iter().max().map_or(0, |m| m + 1);
        fine.map(num_coarse, |f| self.coarse_of_fine[f])
    }
}

pub fn synth_generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let d = spec.d_input;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let coarse_dist = normal(spec.coarse_separation)?;
    let fine_dist = normal(spec.fine_separation)?;
    let coarse: Vec<f64> = (0..spec.num_coarse * d)
        .map(|_| coarse_dist.sample(&mut rng))
        .collect();
    let num_fine = spec.num_fine();
    let coarse_of_fine: Vec<usize> = (0..num_fine).map(|f| f / spec.fines_per_coarse).collect();
    let mut fine = vec![0.0; num_fine * d];
    for (f, row) in fine.chunks_exact_mut(d).enumerate() {
        let c = coarse_of_fine[f];
        for (j, v) in row.iter_mut().enumerate() {
            *v = coarse[c * d + j] + fine_dist.sample(&mut rng);
        }
    }

    let split = |stream: u64, n: usize, fine_pool: usize| -> Result<(FeatureMatrix, Vec<usize>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream);
        let noise = normal(spec.noise_scale)?;
        let mut x = Array2::zeros((n, d));
        let mut labels = Vec::with_capacity(n);
        for mut row in x.outer_iter_mut() {
            let f = rng.random_range(0..fine_pool);
            for (j, v) in row.iter_mut().enumerate() {
                *v = fine[f * d + j] + noise.sample(&mut rng);
            }
            labels.push(f);
        }
        Ok((FeatureMatrix::new(x)?, labels))
    };
    let coarse_vec = |fines: &[usize], classes: usize| {
        LabelVector::new(
            fines.iter().map(|&f| coarse_of_fine[f] as u32).collect(),
            classes,
        )
    };

    let m = spec.pretrain_top_m.unwrap_or(spec.num_coarse);
    let (x, f) = split(1, spec.n_pretrain, m * spec.fines_per_coarse)?;
    let pretrain = Dataset::new(x, Some(coarse_vec(&f, m)?), DatasetRole::Pretrain)?;
    let clusterfit = if spec.alias_clusterfit {
        Dataset {
            role: DatasetRole::Clusterfit,
            ..pretrain.clone()
        }
    } else {
        let (x, f) = split(2, spec.n_clusterfit, num_fine)?;
        Dataset::new(
            x,
            Some(coarse_vec(&f, spec.num_coarse)?),
            DatasetRole::Clusterfit,
        )?
    };
    let fine_vec = |f: &[usize]| LabelVector::new(f.iter().map(|&v| v as u32).collect(), num_fine);
    let (x, f) = split(3, spec.n_target_train, num_fine)?;
    let target_train = Dataset::new(x, Some(fine_vec(&f)?), DatasetRole::Target)?;
    let (x, f) = split(4, spec.n_target_eval, num_fine)?;
    let target_eval = Dataset::new(x, Some(fine_vec(&f)?), DatasetRole::Target)?;

    let fine_centers = FeatureMatrix::from_vec(num_fine, d, fine)?;
    let reference_top1 = nearest_center_accuracy(&target_eval, &fine_centers)?;
    log::info!("synthetic data: nearest-true-center eval top-1 = {reference_top1:.4}");
    Ok(SynthData {
        pretrain,
        clusterfit,
        target_train,
        target_eval,
        fine_centers,
        coarse_of_fine,
        reference_top1,
    })
}

/// Accuracy of assigning each row to its nearest true center.
pub fn nearest_center_accuracy(data: &Dataset, centers: &FeatureMatrix) -> Result<f64> {
    let labels = data.require_labels()?;
    let d = centers.d();
    let hits = data
        .features
        .as_slice()
        .chunks_exact(d)
        .zip(labels.iter())
        .filter(|(row, y)| {
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for (j, c) in centers.as_slice().chunks_exact(d).enumerate() {
                let dist = squared_distance(row, c);
                if dist < best_dist {
                    best = j;
                    best_dist = dist;
                }
            }
            best == *y
        })
        .count();
    Ok(hits as f64 / data.n().max(1) as f64)
}

fn normal(std: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))
}
