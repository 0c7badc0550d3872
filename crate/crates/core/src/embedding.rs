//! Embedding vectors and batches, plus the distance functions every other
//! module builds on.
//!
//! All arithmetic is `f64`. Single precision only appears in the on-disk
//! dataset format.

use serde::{Deserialize, Serialize};

use crate::error::{Result, XmaError};

/// A single `d`-dimensional embedding with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(XmaError::Shape("feature vector must have d > 0".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(XmaError::NonFinite(format!(
                "feature vector entry {i} is {}",
                values[i]
            )));
        }
        Ok(FeatureVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "feature vector must have d > 0");
        FeatureVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A batch of `B` embeddings of equal dimension, stored row-major, with
/// optional per-row ids and class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    rows: usize,
    dim: usize,
    ids: Option<Vec<u32>>,
    labels: Option<Vec<u32>>,
}

impl FeatureMatrix {
    /// Builds a matrix from row-major data. Entries must be finite.
    pub fn from_flat(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(XmaError::Shape(format!(
                "feature matrix needs B >= 1 and d >= 1, got {rows}x{dim}"
            )));
        }
        if data.len() != rows * dim {
            return Err(XmaError::Shape(format!(
                "expected {} values for {rows}x{dim}, got {}",
                rows * dim,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(XmaError::NonFinite(format!(
                "feature matrix entry ({}, {}) is {}",
                i / dim,
                i % dim,
                data[i]
            )));
        }
        Ok(FeatureMatrix {
            data,
            rows,
            dim,
            ids: None,
            labels: None,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(XmaError::Shape(format!(
                    "row {i} has dimension {}, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::from_flat(rows.len(), dim, data)
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != self.rows {
            return Err(XmaError::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                self.rows
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_ids(mut self, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != self.rows {
            return Err(XmaError::Shape(format!(
                "{} ids for {} rows",
                ids.len(),
                self.rows
            )));
        }
        self.ids = Some(ids);
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_vector(&self, i: usize) -> FeatureVector {
        FeatureVector(self.row(i).to_vec())
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn ids(&self) -> Option<&[u32]> {
        self.ids.as_deref()
    }

    pub fn same_shape(&self, other: &FeatureMatrix) -> bool {
        self.rows == other.rows && self.dim == other.dim
    }

    pub fn ensure_same_shape(&self, other: &FeatureMatrix, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(XmaError::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.rows, self.dim, other.rows, other.dim
            )))
        }
    }

    /// Row-wise unit normalization; any zero row is an error.
    pub fn normalized_rows(&self) -> Result<FeatureMatrix> {
        let mut data = self.data.clone();
        for (i, row) in data.chunks_exact_mut(self.dim).enumerate() {
            let n = norm(row);
            if n == 0.0 {
                return Err(XmaError::Degenerate(format!("row {i} has zero norm")));
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        Ok(FeatureMatrix {
            data,
            rows: self.rows,
            dim: self.dim,
            ids: self.ids.clone(),
            labels: self.labels.clone(),
        })
    }

    /// Reorders rows (and ids/labels) by `order`.
    pub fn select_rows(&self, order: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(order.len() * self.dim);
        for &i in order {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            data,
            rows: order.len(),
            dim: self.dim,
            ids: self.ids.as_ref().map(|v| order.iter().map(|&i| v[i]).collect()),
            labels: self
                .labels
                .as_ref()
                .map(|v| order.iter().map(|&i| v[i]).collect()),
        }
    }

    pub fn mean_row(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for row in self.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= self.rows as f64);
        mean
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(XmaError::Shape(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Unit normalization. Zero-norm input is reported, never divided through.
pub fn unit_normalize(v: &FeatureVector) -> Result<FeatureVector> {
    let n = v.norm();
    if n == 0.0 {
        return Err(XmaError::Degenerate(
            "cannot normalize a zero-norm vector".into(),
        ));
    }
    Ok(FeatureVector(v.0.iter().map(|x| x / n).collect()))
}

/// Euclidean distance `||a - b||_2`.
pub fn l2_distance(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    check_dims(&a.0, &b.0)?;
    Ok(l2_distance_slices(&a.0, &b.0))
}

pub(crate) fn l2_distance_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Cosine similarity, clamped into `[-1, 1]` against rounding.
pub fn cosine_similarity(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    check_dims(&a.0, &b.0)?;
    cosine_slices(&a.0, &b.0)
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(XmaError::Degenerate(
            "cosine similarity of a zero-norm vector".into(),
        ));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}
