//! Feature matrices, label vectors and their on-disk formats.
//!
//! Everything downstream (clustering, relabeling, training, probing) consumes
//! these types. They validate on construction and are immutable afterwards, so
//! they can be shared freely across threads.

mod io;

pub use io::{
    decode_features, decode_labels, encode_features, encode_labels, read_features, read_labels,
    write_features, write_labels, FEATURE_MAGIC, FORMAT_VERSION, LABEL_MAGIC,
};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows whose norm deviates from 1 by more than this are not "normalized".
pub const UNIT_NORM_TOL: f64 = 1e-4;

/// Dense `n x d` matrix of embeddings or raw inputs, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
    l2_normalized: bool,
}

impl FeatureMatrix {
    /// Wraps `data`, rejecting any non-finite value.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if let Some((idx, v)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let d = data.ncols().max(1);
            return Err(Error::Validation(format!(
                "non-finite value {v} at row {}, column {}",
                idx / d,
                idx % d
            )));
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
            l2_normalized: false,
        })
    }

    pub fn from_vec(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * d {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {n}x{d} matrix",
                values.len()
            )));
        }
        let data = Array2::from_shape_vec((n, d), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(data)
    }

    /// Marks the matrix as l2-normalized after checking every row norm.
    pub fn with_l2_flag(mut self, flag: bool) -> Result<Self> {
        if flag {
            for (i, row) in self.data.outer_iter().enumerate() {
                let norm = row_norm(row);
                if (norm - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::Validation(format!(
                        "row {i} has norm {norm}, but the matrix is flagged l2-normalized"
                    )));
                }
            }
        }
        self.l2_normalized = flag;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_l2_normalized(&self) -> bool {
        self.l2_normalized
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    /// Contiguous row-major values.
    pub fn as_slice(&self) -> &[f64] {
        self.data
            .as_slice()
            .expect("feature storage is always standard layout")
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            data: self.data.select(Axis(0), rows),
            l2_normalized: self.l2_normalized,
        }
    }
}

/// Scales every row to unit Euclidean norm.
///
/// Zero rows have no direction and are rejected with their index.
pub fn l2_normalize(m: &FeatureMatrix) -> Result<FeatureMatrix> {
    let mut data = m.data.clone();
    for (i, mut row) in data.outer_iter_mut().enumerate() {
        let norm = row_norm(row.view());
        if norm == 0.0 {
            return Err(Error::Degenerate(format!(
                "row {i} is all zeros and cannot be l2-normalized"
            )));
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(FeatureMatrix {
        data,
        l2_normalized: true,
    })
}

fn row_norm(row: ArrayView1<'_, f64>) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Per-sample categorical labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelVector {
    num_classes: usize,
    labels: Vec<u32>,
}

impl LabelVector {
    pub fn new(labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        if let Some((i, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= num_classes)
        {
            return Err(Error::Validation(format!(
                "label {l} at position {i} is outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            num_classes,
            labels,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().map(|&l| l as usize)
    }

    /// Sample count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for l in self.iter() {
            counts[l] += 1;
        }
        counts
    }

    /// Row indices per class, ascending.
    pub fn class_rows(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.num_classes];
        for (i, l) in self.iter().enumerate() {
            rows[l].push(i);
        }
        rows
    }

    pub fn select(&self, rows: &[usize]) -> LabelVector {
        LabelVector {
            num_classes: self.num_classes,
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Applies `f` to every label; the result must fit in `num_classes`.
    pub fn map(&self, num_classes: usize, f: impl Fn(usize) -> usize) -> Result<LabelVector> {
        LabelVector::new(self.iter().map(|l| f(l) as u32).collect(), num_classes)
    }

    pub(crate) fn check_pairs_with(&self, features: &FeatureMatrix) -> Result<()> {
        if self.n() != features.n() {
            return Err(Error::Shape(format!(
                "{} labels paired with {} feature rows",
                self.n(),
                features.n()
            )));
        }
        Ok(())
    }
}

/// `k` cluster centers plus the objective they reached.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    pub(crate) centers: FeatureMatrix,
    pub(crate) inertia: f64,
    pub(crate) iterations_run: usize,
}

impl Centroids {
    pub fn new(centers: FeatureMatrix, inertia: f64, iterations_run: usize) -> Result<Self> {
        if centers.n() == 0 {
            return Err(Error::Validation("centroids need k >= 1".into()));
        }
        if !(inertia >= 0.0) {
            return Err(Error::Validation(format!("inertia {inertia} is negative")));
        }
        Ok(Self {
            centers,
            inertia,
            iterations_run,
        })
    }

    pub fn k(&self) -> usize {
        self.centers.n()
    }

    pub fn d(&self) -> usize {
        self.centers.d()
    }

    pub fn centers(&self) -> &FeatureMatrix {
        &self.centers
    }

    pub fn inertia(&self) -> f64 {
        self.inertia
    }

    pub fn iterations_run(&self) -> usize {
        self.iterations_run
    }
}

/// Which part of the pipeline a dataset feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetRole {
    /// Pre-training data for the first network.
    Pretrain,
    /// Data that gets clustered and refit on.
    Clusterfit,
    /// Transfer target used for probing.
    Target,
}

/// Inputs (or embeddings) with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: FeatureMatrix,
    pub labels: Option<LabelVector>,
    pub role: DatasetRole,
}

impl Dataset {
    pub fn new(
        features: FeatureMatrix,
        labels: Option<LabelVector>,
        role: DatasetRole,
    ) -> Result<Self> {
        if let Some(l) = &labels {
            l.check_pairs_with(&features)?;
        }
        Ok(Self {
            features,
            labels,
            role,
        })
    }

    pub fn n(&self) -> usize {
        self.features.n()
    }

    /// Labels, or an error naming the dataset role when they are missing.
    pub fn require_labels(&self) -> Result<&LabelVector> {
        self.labels
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("{:?} dataset has no labels", self.role)))
    }
}
