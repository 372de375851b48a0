//! Lloyd's k-means with a two-stage schedule: a number of iterations on a
//! random subsample, then a few refinement iterations on every row.
//!
//! Assignment and the per-cluster sums run in parallel over fixed
//! [`CHUNK_ROWS`]-row chunks. Partial results are reduced in chunk order, so
//! a fixed seed gives bit-identical centers on any number of threads.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestore::{read_features, write_features, Centroids, FeatureMatrix, LabelVector};

/// Rows per unit of parallel work; also fixes the reduction order.
pub const CHUNK_ROWS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KMeansInit {
    RandomPoints,
    #[serde(alias = "kpp")]
    KMeansPlusPlus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmptyClusterPolicy {
    /// Move an empty center onto the row farthest from its own center.
    #[default]
    RespawnFarthest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub k: usize,
    pub init: KMeansInit,
    /// Fraction of rows used in stage 1, in `(0, 1]`.
    pub stage1_fraction: f64,
    pub stage1_iters: usize,
    /// Iterations on the full data after stage 1.
    pub stage2_iters: usize,
    pub seed: u64,
    /// Stop a stage once the relative inertia improvement drops below this.
    pub tol: f64,
    pub empty_cluster_policy: EmptyClusterPolicy,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 8,
            init: KMeansInit::KMeansPlusPlus,
            stage1_fraction: 0.2,
            stage1_iters: 30,
            stage2_iters: 5,
            seed: 0,
            tol: 1e-6,
            empty_cluster_policy: EmptyClusterPolicy::RespawnFarthest,
        }
    }
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            ..Self::default()
        }
    }

    /// Plain Lloyd on all rows for up to `iters` iterations.
    pub fn full_batch(k: usize, iters: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            stage1_fraction: 1.0,
            stage1_iters: iters,
            stage2_iters: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k-means needs k >= 1".into()));
        }
        if !(self.stage1_fraction > 0.0 && self.stage1_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "stage1_fraction {} is outside (0, 1]",
                self.stage1_fraction
            )));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config(format!("tol {} is negative", self.tol)));
        }
        Ok(())
    }
}

/// Nearest center per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub assignments: Vec<u32>,
    /// Squared distance of each row to its assigned center.
    pub distances: Vec<f64>,
}

impl ClusterAssignment {
    /// Sum of squared distances, accumulated in chunk order.
    pub fn inertia(&self) -> f64 {
        self.distances
            .chunks(CHUNK_ROWS)
            .map(|c| c.iter().sum::<f64>())
            .fold(0.0, |a, b| a + b)
    }

    pub fn into_labels(self, k: usize) -> Result<LabelVector> {
        LabelVector::new(self.assignments, k)
    }
}

/// A finished run with its per-iteration inertia trace.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centroids: Centroids,
    /// Inertia on the stage-1 subsample, one entry per assignment step.
    pub stage1_inertia: Vec<f64>,
    /// Inertia on the full data, one entry per assignment step.
    pub stage2_inertia: Vec<f64>,
}

pub fn kmeans_fit(features: &FeatureMatrix, cfg: &KMeansConfig) -> Result<Centroids> {
    kmeans_fit_traced(features, cfg).map(|f| f.centroids)
}

/// [`kmeans_fit`], keeping the inertia trace of both stages.
pub fn kmeans_fit_traced(features: &FeatureMatrix, cfg: &KMeansConfig) -> Result<KMeansFit> {
    check_feasible(features, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let subsample = stage1_subsample(features, cfg, &mut rng);
    let stage1_data = subsample.as_ref().unwrap_or(features);
    let init = match cfg.init {
        KMeansInit::RandomPoints => init_random(stage1_data, cfg.k, &mut rng),
        KMeansInit::KMeansPlusPlus => init_plus_plus(stage1_data, cfg.k, &mut rng),
    };
    run_schedule(features, stage1_data, init, cfg)
}

/// Runs both stages from caller-supplied initial centers (`k x d`).
pub fn kmeans_fit_from(
    features: &FeatureMatrix,
    initial_centers: &FeatureMatrix,
    cfg: &KMeansConfig,
) -> Result<KMeansFit> {
    check_feasible(features, cfg)?;
    if initial_centers.n() != cfg.k || initial_centers.d() != features.d() {
        return Err(Error::Shape(format!(
            "initial centers are {}x{}, expected {}x{}",
            initial_centers.n(),
            initial_centers.d(),
            cfg.k,
            features.d()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let subsample = stage1_subsample(features, cfg, &mut rng);
    let stage1_data = subsample.as_ref().unwrap_or(features);
    run_schedule(
        features,
        stage1_data,
        initial_centers.as_slice().to_vec(),
        cfg,
    )
}

fn check_feasible(features: &FeatureMatrix, cfg: &KMeansConfig) -> Result<()> {
    cfg.validate()?;
    if features.d() == 0 {
        return Err(Error::Shape("k-means needs at least one feature column".into()));
    }
    if features.n() < cfg.k {
        return Err(Error::Infeasible(format!(
            "cannot form {} clusters from {} rows",
            cfg.k,
            features.n()
        )));
    }
    Ok(())
}

/// Stage-1 rows (sorted), or `None` when the fraction covers everything.
fn stage1_subsample(
    features: &FeatureMatrix,
    cfg: &KMeansConfig,
    rng: &mut ChaCha8Rng,
) -> Option<FeatureMatrix> {
    let n = features.n();
    let sub_n = ((cfg.stage1_fraction * n as f64).ceil() as usize).clamp(cfg.k, n);
    (sub_n < n).then(|| {
        let mut rows = index::sample(rng, n, sub_n).into_vec();
        rows.sort_unstable();
        features.select_rows(&rows)
    })
}

fn run_schedule(
    full: &FeatureMatrix,
    stage1_data: &FeatureMatrix,
    mut centers: Vec<f64>,
    cfg: &KMeansConfig,
) -> Result<KMeansFit> {
    let (k, d) = (cfg.k, full.d());
    let stage1 = lloyd(stage1_data, &mut centers, k, cfg.stage1_iters, cfg.tol);
    let stage2 = lloyd(full, &mut centers, k, cfg.stage2_iters, cfg.tol);
    let final_pass = assign_pass(full.as_slice(), d, &centers, k);
    let centers = FeatureMatrix::from_vec(k, d, centers)?;
    Ok(KMeansFit {
        centroids: Centroids::new(centers, final_pass.inertia, stage1.len() + stage2.len())?,
        stage1_inertia: stage1,
        stage2_inertia: stage2,
    })
}

/// Maps every row to its nearest center; ties go to the lowest index.
pub fn kmeans_assign(features: &FeatureMatrix, c: &Centroids) -> Result<ClusterAssignment> {
    if features.d() != c.d() {
        return Err(Error::Shape(format!(
            "features have dimension {}, centroids {}",
            features.d(),
            c.d()
        )));
    }
    let pass = assign_pass(features.as_slice(), c.d(), c.centers().as_slice(), c.k());
    Ok(ClusterAssignment {
        assignments: pass.labels,
        distances: pass.distances,
    })
}

/// Lloyd iterations in place. Returns the inertia seen at each assignment.
fn lloyd(data: &FeatureMatrix, centers: &mut [f64], k: usize, iters: usize, tol: f64) -> Vec<f64> {
    let d = data.d();
    let mut history = Vec::with_capacity(iters);
    let mut prev_labels: Option<Vec<u32>> = None;
    for _ in 0..iters {
        let pass = assign_pass(data.as_slice(), d, centers, k);
        let inertia = pass.inertia;
        let stalled = prev_labels.as_ref() == Some(&pass.labels);
        let converged = match history.last() {
            Some(&prev) if prev > 0.0 => (prev - inertia) / prev < tol,
            Some(_) => true,
            None => false,
        };
        history.push(inertia);
        if stalled || converged {
            break;
        }
        update_centers(data.as_slice(), d, &pass, centers, k);
        prev_labels = Some(pass.labels);
    }
    history
}

struct Pass {
    labels: Vec<u32>,
    distances: Vec<f64>,
    /// `k x d` per-cluster coordinate sums.
    sums: Vec<f64>,
    counts: Vec<usize>,
    inertia: f64,
}

struct ChunkPartial {
    labels: Vec<u32>,
    distances: Vec<f64>,
    sums: Vec<f64>,
    counts: Vec<usize>,
    inertia: f64,
}

fn assign_pass(data: &[f64], d: usize, centers: &[f64], k: usize) -> Pass {
    let partials: Vec<ChunkPartial> = data
        .par_chunks(CHUNK_ROWS * d.max(1))
        .map(|chunk| {
            let rows = if d == 0 { 0 } else { chunk.len() / d };
            let mut p = ChunkPartial {
                labels: Vec::with_capacity(rows),
                distances: Vec::with_capacity(rows),
                sums: vec![0.0; k * d],
                counts: vec![0; k],
                inertia: 0.0,
            };
            for row in chunk.chunks_exact(d) {
                let (best, dist) = nearest(row, centers, d);
                p.labels.push(best as u32);
                p.distances.push(dist);
                p.counts[best] += 1;
                p.inertia += dist;
                for (s, &x) in p.sums[best * d..(best + 1) * d].iter_mut().zip(row) {
                    *s += x;
                }
            }
            p
        })
        .collect();

    let n = data.len() / d.max(1);
    let mut pass = Pass {
        labels: Vec::with_capacity(n),
        distances: Vec::with_capacity(n),
        sums: vec![0.0; k * d],
        counts: vec![0; k],
        inertia: 0.0,
    };
    for p in partials {
        pass.labels.extend(p.labels);
        pass.distances.extend(p.distances);
        for (a, b) in pass.sums.iter_mut().zip(&p.sums) {
            *a += b;
        }
        for (a, b) in pass.counts.iter_mut().zip(&p.counts) {
            *a += b;
        }
        pass.inertia += p.inertia;
    }
    pass
}

fn update_centers(data: &[f64], d: usize, pass: &Pass, centers: &mut [f64], k: usize) {
    for c in 0..k {
        let count = pass.counts[c];
        if count > 0 {
            let inv = count as f64;
            for (dst, &s) in centers[c * d..(c + 1) * d]
                .iter_mut()
                .zip(&pass.sums[c * d..(c + 1) * d])
            {
                *dst = s / inv;
            }
        }
    }
    let empty: Vec<usize> = (0..k).filter(|&c| pass.counts[c] == 0).collect();
    if empty.is_empty() {
        return;
    }
    // Farthest rows first, lowest index on ties.
    let mut order: Vec<usize> = (0..pass.distances.len()).collect();
    order.sort_by(|&a, &b| {
        pass.distances[b]
            .total_cmp(&pass.distances[a])
            .then(a.cmp(&b))
    });
    if pass.distances.iter().all(|&v| v == 0.0) {
        log::warn!(
            "k-means: {} empty clusters and every row sits on a center; duplicates remain",
            empty.len()
        );
    }
    for (c, &row) in empty.iter().zip(order.iter()) {
        centers[c * d..(c + 1) * d].copy_from_slice(&data[row * d..(row + 1) * d]);
    }
}

#[inline]
fn nearest(row: &[f64], centers: &[f64], d: usize) -> (usize, f64) {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (j, c) in centers.chunks_exact(d).enumerate() {
        let dist = squared_distance(row, c);
        if dist < best_dist {
            best = j;
            best_dist = dist;
        }
    }
    (best, best_dist)
}

/// Squared Euclidean distance with four independent accumulators.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for j in 0..4 {
            let t = x[j] - y[j];
            acc[j] += t * t;
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let t = x - y;
        s += t * t;
    }
    s
}

fn init_random(data: &FeatureMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut rows = index::sample(rng, data.n(), k).into_vec();
    rows.sort_unstable();
    data.select_rows(&rows).as_slice().to_vec()
}

fn init_plus_plus(data: &FeatureMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (n, d) = (data.n(), data.d());
    let x = data.as_slice();
    let mut centers = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(&x[first * d..(first + 1) * d]);
    let mut min_dist: Vec<f64> = x
        .chunks_exact(d)
        .map(|r| squared_distance(r, &x[first * d..(first + 1) * d]))
        .collect();
    let mut warned = false;
    for _ in 1..k {
        let total: f64 = min_dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in min_dist.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            if !warned {
                log::warn!("k-means++: all remaining rows coincide with chosen centers");
                warned = true;
            }
            rng.random_range(0..n)
        };
        let c = &x[pick * d..(pick + 1) * d];
        centers.extend_from_slice(c);
        for (m, r) in min_dist.iter_mut().zip(x.chunks_exact(d)) {
            let dist = squared_distance(r, c);
            if dist < *m {
                *m = dist;
            }
        }
    }
    centers
}

/// Sidecar metadata written next to a centroid file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidsMeta {
    pub k: usize,
    pub inertia: f64,
    pub iterations_run: usize,
    pub seed: u64,
}

/// `c.cff` -> `c.cff.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the centers as `CFF1` plus a JSON sidecar.
pub fn write_centroids(path: impl AsRef<Path>, c: &Centroids, seed: u64) -> Result<()> {
    let path = path.as_ref();
    write_features(path, c.centers())?;
    let meta = CentroidsMeta {
        k: c.k(),
        inertia: c.inertia(),
        iterations_run: c.iterations_run(),
        seed,
    };
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(side, e))
}

pub fn read_centroids(path: impl AsRef<Path>) -> Result<(Centroids, CentroidsMeta)> {
    let path = path.as_ref();
    let centers = read_features(path)?;
    let side = sidecar_path(path);
    let meta: CentroidsMeta =
        serde_json::from_slice(&fs::read(&side).map_err(|e| Error::io(&side, e))?)?;
    if meta.k != centers.n() {
        return Err(Error::Format(format!(
            "sidecar says k = {}, centroid file has {} rows",
            meta.k,
            centers.n()
        )));
    }
    Ok((
        Centroids::new(centers, meta.inertia, meta.iterations_run)?,
        meta,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(rows: &[&[f64]]) -> FeatureMatrix {
        let d = rows[0].len();
        FeatureMatrix::from_vec(rows.len(), d, rows.iter().flat_map(|r| r.to_vec()).collect())
            .unwrap()
    }

    fn centroids(rows: &[&[f64]]) -> Centroids {
        Centroids::new(fm(rows), 0.0, 0).unwrap()
    }

    #[test]
    fn point_on_center_has_zero_distance() {
        let c = centroids(&[&[0.0, 0.0], &[1.5, -2.0], &[7.0, 7.0]]);
        let a = kmeans_assign(&fm(&[&[1.5, -2.0]]), &c).unwrap();
        assert_eq!(a.assignments, vec![1]);
        assert_eq!(a.distances, vec![0.0]);
    }

    #[test]
    fn ties_go_to_lowest_center() {
        let c = centroids(&[&[5.0, 5.0], &[9.0, 9.0], &[1.0, 0.0], &[8.0, 8.0], &[-1.0, 0.0]]);
        let a = kmeans_assign(&fm(&[&[0.0, 0.0]]), &c).unwrap();
        assert_eq!(a.assignments, vec![2]);
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let c = centroids(&[&[0.0, 0.0]]);
        assert!(matches!(
            kmeans_assign(&fm(&[&[1.0, 2.0, 3.0]]), &c),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn too_few_rows_is_infeasible() {
        let x = fm(&[&[0.0], &[1.0]]);
        assert!(matches!(
            kmeans_fit(&x, &KMeansConfig::new(3, 0)),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn k_one_is_the_mean() {
        let x = fm(&[&[1.0, 2.0], &[3.0, 6.0], &[5.0, 1.0]]);
        let c = kmeans_fit(&x, &KMeansConfig::full_batch(1, 10, 4)).unwrap();
        let center = c.centers().row(0);
        assert!((center[0] - 3.0).abs() < 1e-12);
        assert!((center[1] - 3.0).abs() < 1e-12);
        // (4+0+4) + (1+9+4)
        assert!((c.inertia() - 22.0).abs() < 1e-12);
    }

    #[test]
    fn identical_points_keep_k_clusters() {
        let row: &[f64] = &[2.0, 2.0];
        let x = fm(&[row; 6]);
        let c = kmeans_fit(&x, &KMeansConfig::full_batch(3, 10, 1)).unwrap();
        assert_eq!(c.k(), 3);
        assert_eq!(c.inertia(), 0.0);
    }

    #[test]
    fn empty_cluster_respawns_at_farthest_row() {
        let x = fm(&[&[0.0], &[1.0], &[10.0]]);
        // Center 1 starts far from everything and captures no rows.
        let init = fm(&[&[0.5], &[100.0]]);
        let fit = kmeans_fit_from(&x, &init, &KMeansConfig::full_batch(2, 1, 0)).unwrap();
        let c = fit.centroids.centers();
        assert_eq!(c.row(1)[0], 10.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = KMeansConfig::new(2, 0);
        cfg.stage1_fraction = 0.0;
        assert!(cfg.validate().is_err());
        cfg.stage1_fraction = 1.0;
        cfg.tol = -1.0;
        assert!(cfg.validate().is_err());
        assert!(KMeansConfig::new(0, 0).validate().is_err());
    }

    #[test]
    fn centroid_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cff");
        let c = Centroids::new(fm(&[&[0.5, 1.0], &[2.0, 3.0]]), 1.25, 7).unwrap();
        write_centroids(&path, &c, 42).unwrap();
        let (back, meta) = read_centroids(&path).unwrap();
        assert_eq!(back, c);
        assert_eq!(meta.seed, 42);
        assert!(sidecar_path(&path).exists());
    }
}
