//! Pseudo-label strategies and synthetic label noise.
//!
//! - [`pseudo_labels`]: unsupervised cluster ids over the whole set
//! - [`per_label_pseudo_labels`]: clustering within each class, `k_l ∝ √n_l`
//! - [`prototype_labels`]: one reassignment step to the nearest class mean
//! - [`inject_noise`]: uniform label flips that never keep the original label

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestore::{FeatureMatrix, LabelVector};
use crate::kmeans::{kmeans_assign, kmeans_fit, squared_distance, KMeansConfig};

/// Uniform label noise: each label is replaced with probability `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub p: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(p: f64, seed: u64) -> Result<Self> {
        let spec = Self { p, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!(
                "noise probability {} is outside [0, 1]",
                self.p
            )));
        }
        Ok(())
    }
}

/// Cluster ids from k-means on `features`, one per row.
pub fn pseudo_labels(features: &FeatureMatrix, cfg: &KMeansConfig) -> Result<LabelVector> {
    let centroids = kmeans_fit(features, cfg)?;
    kmeans_assign(features, &centroids)?.into_labels(cfg.k)
}

/// Flips each label with probability `spec.p` to a uniformly chosen *other*
/// class.
///
/// Sample `i` draws from its own ChaCha stream (`stream = i`), so the outcome
/// for a row does not depend on how many rows precede it.
pub fn inject_noise(labels: &LabelVector, spec: &NoiseSpec) -> Result<LabelVector> {
    spec.validate()?;
    let c = labels.num_classes();
    if spec.p > 0.0 && c < 2 {
        return Err(Error::Infeasible(format!(
            "cannot flip labels with only {c} class(es)"
        )));
    }
    if spec.p == 0.0 {
        return Ok(labels.clone());
    }
    let flipped = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            if rng.random::<f64>() < spec.p {
                let r = rng.random_range(0..c - 1);
                (if r < l { r } else { r + 1 }) as u32
            } else {
                l as u32
            }
        })
        .collect();
    LabelVector::new(flipped, c)
}

/// Per-class cluster budget for per-label clustering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerLabelPlan {
    /// Clusters for each class (0 for empty classes).
    pub k_per_class: Vec<usize>,
    pub n_per_class: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PlanEntry {
    n: usize,
    k: usize,
}

impl PerLabelPlan {
    pub fn total_k(&self) -> usize {
        self.k_per_class.iter().sum()
    }

    /// First global id of each class's clusters.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.k_per_class
            .iter()
            .map(|&k| {
                let start = acc;
                acc += k;
                start
            })
            .collect()
    }

    /// `{"<class_id>": {"n": .., "k": ..}, ...}`
    pub fn to_json(&self) -> Result<String> {
        let map: BTreeMap<String, PlanEntry> = self
            .n_per_class
            .iter()
            .zip(&self.k_per_class)
            .enumerate()
            .map(|(c, (&n, &k))| (c.to_string(), PlanEntry { n, k }))
            .collect();
        Ok(serde_json::to_string_pretty(&map)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let map: BTreeMap<String, PlanEntry> = serde_json::from_str(s)?;
        let mut entries: Vec<(usize, PlanEntry)> = map
            .into_iter()
            .map(|(c, e)| {
                c.parse::<usize>()
                    .map(|c| (c, e))
                    .map_err(|_| Error::Format(format!("plan key {c:?} is not a class id")))
            })
            .collect::<Result<_>>()?;
        entries.sort_by_key(|(c, _)| *c);
        if entries.iter().enumerate().any(|(i, (c, _))| i != *c) {
            return Err(Error::Format("plan class ids are not 0..C".into()));
        }
        Ok(Self {
            n_per_class: entries.iter().map(|(_, e)| e.n).collect(),
            k_per_class: entries.iter().map(|(_, e)| e.k).collect(),
        })
    }
}

/// Splits `total_k` clusters across classes proportionally to `√n_l`.
///
/// Uses largest-remainder apportionment (ties to the lowest class id). Any
/// class pushed below 1 or above `n_l` is pinned at that bound and the rest
/// is re-apportioned among the remaining classes.
pub fn per_label_plan(labels: &LabelVector, total_k: usize) -> Result<PerLabelPlan> {
    let counts = labels.class_counts();
    let non_empty = counts.iter().filter(|&&n| n > 0).count();
    if total_k < non_empty {
        return Err(Error::Infeasible(format!(
            "{total_k} clusters cannot cover {non_empty} non-empty classes"
        )));
    }
    let mut k = vec![0usize; counts.len()];
    let mut pinned = vec![false; counts.len()];
    for (c, &n) in counts.iter().enumerate() {
        pinned[c] = n == 0;
    }
    loop {
        let active: Vec<usize> = (0..counts.len()).filter(|&c| !pinned[c]).collect();
        if active.is_empty() {
            break;
        }
        let fixed: usize = (0..counts.len()).filter(|&c| pinned[c]).map(|c| k[c]).sum();
        let remaining = total_k.saturating_sub(fixed);
        let weights: Vec<f64> = active.iter().map(|&c| (counts[c] as f64).sqrt()).collect();
        let seats = largest_remainder(remaining, &weights);
        for (&c, &s) in active.iter().zip(&seats) {
            k[c] = s;
        }
        // Lower bounds first: raising a class to 1 takes seats from others.
        let low: Vec<usize> = active.iter().copied().filter(|&c| k[c] < 1).collect();
        if !low.is_empty() {
            for c in low {
                k[c] = 1;
                pinned[c] = true;
            }
            continue;
        }
        let high: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&c| k[c] > counts[c])
            .collect();
        if high.is_empty() {
            break;
        }
        for c in high {
            k[c] = counts[c];
            pinned[c] = true;
        }
    }
    Ok(PerLabelPlan {
        k_per_class: k,
        n_per_class: counts,
    })
}

fn largest_remainder(seats: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| seats as f64 * w / total).collect();
    let mut out: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let given: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(seats.saturating_sub(given)) {
        out[i] += 1;
    }
    out
}

/// Clusters each class separately with `k_l` clusters and merges the ids.
///
/// Cluster `j` of class `c` gets global id `Σ_{c' < c} k_{c'} + j`. Each class
/// uses seed `cfg.seed ^ c`.
pub fn per_label_pseudo_labels(
    features: &FeatureMatrix,
    labels: &LabelVector,
    plan: &PerLabelPlan,
    cfg: &KMeansConfig,
) -> Result<LabelVector> {
    labels.check_pairs_with(features)?;
    if plan.k_per_class.len() != labels.num_classes() {
        return Err(Error::Shape(format!(
            "plan covers {} classes, labels have {}",
            plan.k_per_class.len(),
            labels.num_classes()
        )));
    }
    let rows = labels.class_rows();
    for (c, r) in rows.iter().enumerate() {
        let k = plan.k_per_class[c];
        if r.len() < k || (k == 0 && !r.is_empty()) {
            return Err(Error::Infeasible(format!(
                "class {c} has {} rows but the plan asks for {k} clusters",
                r.len()
            )));
        }
    }
    let offsets = plan.offsets();
    let per_class: Vec<Vec<u32>> = rows
        .par_iter()
        .enumerate()
        .map(|(c, r)| -> Result<Vec<u32>> {
            let k = plan.k_per_class[c];
            if k <= 1 {
                return Ok(vec![0; r.len()]);
            }
            let sub = features.select_rows(r);
            let class_cfg = KMeansConfig {
                k,
                seed: cfg.seed ^ c as u64,
                ..cfg.clone()
            };
            pseudo_labels(&sub, &class_cfg).map(|l| l.as_slice().to_vec())
        })
        .collect::<Result<_>>()?;

    let mut out = vec![0u32; labels.n()];
    for (c, (r, local)) in rows.iter().zip(&per_class).enumerate() {
        for (&i, &j) in r.iter().zip(local) {
            out[i] = (offsets[c] + j as usize) as u32;
        }
    }
    LabelVector::new(out, plan.total_k())
}

/// Prototype alignment: relabel every row to its nearest class mean.
///
/// Exactly one assignment step; ties go to the lowest class id.
pub fn prototype_labels(features: &FeatureMatrix, labels: &LabelVector) -> Result<LabelVector> {
    labels.check_pairs_with(features)?;
    let (c, d) = (labels.num_classes(), features.d());
    let counts = labels.class_counts();
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Degenerate(format!(
            "class {empty} has no rows, so it has no prototype"
        )));
    }
    let mut means = vec![0.0f64; c * d];
    for (row, l) in features.view().outer_iter().zip(labels.iter()) {
        for (m, &x) in means[l * d..(l + 1) * d].iter_mut().zip(row.iter()) {
            *m += x;
        }
    }
    for (l, &n) in counts.iter().enumerate() {
        for m in &mut means[l * d..(l + 1) * d] {
            *m /= n as f64;
        }
    }
    let out = features
        .as_slice()
        .chunks_exact(d.max(1))
        .map(|row| {
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for (j, m) in means.chunks_exact(d.max(1)).enumerate() {
                let dist = squared_distance(row, m);
                if dist < best_dist {
                    best = j;
                    best_dist = dist;
                }
            }
            best as u32
        })
        .collect();
    LabelVector::new(out, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(labels: &[u32], c: usize) -> LabelVector {
        LabelVector::new(labels.to_vec(), c).unwrap()
    }

    fn repeat_labels(counts: &[usize]) -> LabelVector {
        let labels: Vec<u32> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c as u32, n))
            .collect();
        LabelVector::new(labels, counts.len()).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let l = lv(&[0, 1, 2, 1, 0], 3);
        assert_eq!(inject_noise(&l, &NoiseSpec::new(0.0, 9).unwrap()).unwrap(), l);
    }

    #[test]
    fn full_noise_flips_everything() {
        let l = lv(&[0, 1, 2, 1, 0, 2, 2], 3);
        let out = inject_noise(&l, &NoiseSpec::new(1.0, 9).unwrap()).unwrap();
        assert!(l.iter().zip(out.iter()).all(|(a, b)| a != b));
    }

    #[test]
    fn noise_needs_two_classes() {
        let l = lv(&[0, 0], 1);
        assert!(matches!(
            inject_noise(&l, &NoiseSpec::new(0.1, 0).unwrap()),
            Err(Error::Infeasible(_))
        ));
        assert!(NoiseSpec::new(1.5, 0).is_err());
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let l = repeat_labels(&[50, 50, 50]);
        let spec = NoiseSpec::new(0.3, 17).unwrap();
        assert_eq!(inject_noise(&l, &spec).unwrap(), inject_noise(&l, &spec).unwrap());
        let other = NoiseSpec::new(0.3, 18).unwrap();
        assert_ne!(inject_noise(&l, &spec).unwrap(), inject_noise(&l, &other).unwrap());
    }

    #[test]
    fn plan_apportions_by_sqrt() {
        let plan = per_label_plan(&repeat_labels(&[100, 400]), 3).unwrap();
        assert_eq!(plan.k_per_class, vec![1, 2]);
        assert_eq!(plan.n_per_class, vec![100, 400]);
    }

    #[test]
    fn plan_equal_classes_split_evenly() {
        let plan = per_label_plan(&repeat_labels(&[30, 30, 30, 30]), 12).unwrap();
        assert_eq!(plan.k_per_class, vec![3, 3, 3, 3]);
    }

    #[test]
    fn plan_clamps_to_class_size() {
        // sqrt weights 1 and 10 would give the small class too little or the
        // big one too much; clamps pin them.
        let plan = per_label_plan(&repeat_labels(&[1, 100]), 20).unwrap();
        assert_eq!(plan.k_per_class, vec![1, 19]);
        let plan = per_label_plan(&repeat_labels(&[2, 2, 400]), 30).unwrap();
        assert_eq!(plan.total_k(), 30);
        assert!(plan.k_per_class[0] <= 2 && plan.k_per_class[1] <= 2);
    }

    #[test]
    fn plan_skips_empty_classes_and_rejects_tiny_totals() {
        let plan = per_label_plan(&repeat_labels(&[10, 0, 10]), 4).unwrap();
        assert_eq!(plan.k_per_class, vec![2, 0, 2]);
        assert!(matches!(
            per_label_plan(&repeat_labels(&[10, 10, 10]), 2),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn plan_json_shape() {
        let plan = per_label_plan(&repeat_labels(&[100, 400]), 3).unwrap();
        let json = plan.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["1"]["n"], 400);
        assert_eq!(v["1"]["k"], 2);
        assert_eq!(PerLabelPlan::from_json(&json).unwrap(), plan);
    }

    #[test]
    fn global_ids_follow_class_offsets() {
        let plan = PerLabelPlan {
            k_per_class: vec![2, 3, 1],
            n_per_class: vec![5, 5, 5],
        };
        assert_eq!(plan.offsets(), vec![0, 2, 5]);
    }

    #[test]
    fn per_label_with_single_clusters_keeps_labels() {
        let x = FeatureMatrix::from_vec(6, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let l = lv(&[2, 0, 1, 0, 2, 1], 3);
        let plan = per_label_plan(&l, 3).unwrap();
        let out = per_label_pseudo_labels(&x, &l, &plan, &KMeansConfig::new(1, 0)).unwrap();
        assert_eq!(out, l);
    }

    #[test]
    fn prototype_moves_misplaced_point() {
        // Class 0 mean is (0,0) with the outlier at (9,0) included; class 1
        // mean is (10,0).
        let x = FeatureMatrix::from_vec(
            5,
            2,
            vec![-4.5, 0.0, -4.5, 0.0, 9.0, 0.0, 10.0, 0.0, 10.0, 0.0],
        )
        .unwrap();
        let l = lv(&[0, 0, 0, 1, 1], 2);
        let out = prototype_labels(&x, &l).unwrap();
        assert_eq!(out.as_slice(), &[0, 0, 1, 1, 1]);
        assert_eq!(out.num_classes(), 2);
    }

    #[test]
    fn prototype_rejects_empty_class() {
        let x = FeatureMatrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        let l = lv(&[0, 0], 2);
        assert!(matches!(prototype_labels(&x, &l), Err(Error::Degenerate(_))));
    }

    #[test]
    fn prototype_ties_go_to_lowest_class() {
        let x = FeatureMatrix::from_vec(3, 1, vec![-1.0, 1.0, 0.0]).unwrap();
        let l = lv(&[1, 0, 1], 2);
        // class 0 mean = 1.0, class 1 mean = -0.5
        let out = prototype_labels(&x, &l).unwrap();
        assert_eq!(out.as_slice(), &[1, 0, 1]);
        let x = FeatureMatrix::from_vec(4, 1, vec![1.0, -1.0, 0.0, 0.0]).unwrap();
        let l = lv(&[0, 1, 0, 1], 2);
        // means 0.5 and -0.5; the rows at 0 are equidistant
        let out = prototype_labels(&x, &l).unwrap();
        assert_eq!(out.as_slice(), &[0, 1, 0, 0]);
    }
}
