//! Tabular domain types shared by every module.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::InvalidInput(format!(
                "matrix of {rows}x{cols} needs {} values, got {}",
                rows.saturating_mul(cols),
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::InvalidInput(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows picked by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::InvalidInput(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::InvalidInput(format!(
            "label {l} at row {i} is outside [0, {k})"
        )));
    }
    Ok(())
}

/// N×K raw classifier outputs with item ids and optional true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTable {
    item_ids: Vec<String>,
    logits: Matrix,
    labels: Option<Vec<usize>>,
}

impl LogitTable {
    pub fn new(item_ids: Vec<String>, logits: Matrix, labels: Option<Vec<usize>>) -> Result<Self> {
        if logits.cols() == 0 {
            return Err(Error::InvalidInput("class count must be at least 1".into()));
        }
        if item_ids.len() != logits.rows() {
            return Err(Error::InvalidInput(format!(
                "{} item ids for {} rows",
                item_ids.len(),
                logits.rows()
            )));
        }
        if let Some(pos) = logits.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite logit at row {}, class {}",
                pos / logits.cols(),
                pos % logits.cols()
            )));
        }
        if let Some(l) = &labels {
            check_labels(l, logits.rows(), logits.cols())?;
        }
        Ok(LogitTable {
            item_ids,
            logits,
            labels,
        })
    }

    /// Table with item ids `"0"`, `"1"`, ... .
    pub fn with_row_ids(logits: Matrix, labels: Option<Vec<usize>>) -> Result<Self> {
        let ids = (0..logits.rows()).map(|i| i.to_string()).collect();
        Self::new(ids, logits, labels)
    }

    pub fn len(&self) -> usize {
        self.logits.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_count(&self) -> usize {
        self.logits.cols()
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.logits.row(i)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Labels, or an invalid-input error naming the operation that needed them.
    pub fn require_labels(&self, op: &str) -> Result<&[usize]> {
        self.labels()
            .ok_or_else(|| Error::InvalidInput(format!("{op} requires labels for every row")))
    }

    pub fn select(&self, indices: &[usize]) -> LogitTable {
        LogitTable {
            item_ids: indices.iter().map(|&i| self.item_ids[i].clone()).collect(),
            logits: self.logits.select_rows(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }
}

/// N×d penultimate features with labels; input to head recomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    item_ids: Vec<String>,
    features: Matrix,
    labels: Vec<usize>,
}

impl FeatureTable {
    pub fn new(item_ids: Vec<String>, features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if item_ids.len() != features.rows() {
            return Err(Error::InvalidInput(format!(
                "{} item ids for {} rows",
                item_ids.len(),
                features.rows()
            )));
        }
        if !features.is_finite() {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        check_labels(&labels, features.rows(), usize::MAX)?;
        Ok(FeatureTable {
            item_ids,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn select(&self, indices: &[usize]) -> FeatureTable {
        FeatureTable {
            item_ids: indices.iter().map(|&i| self.item_ids[i].clone()).collect(),
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Linear classifier head: `logits(x) = weights · x + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    weights: Matrix,
    bias: Vec<f64>,
}

impl ClassifierHead {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::InvalidInput(
                "head needs at least one class and one feature".into(),
            ));
        }
        if bias.len() != weights.rows() {
            return Err(Error::InvalidInput(format!(
                "bias has {} entries for {} classes",
                bias.len(),
                weights.rows()
            )));
        }
        if !weights.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidInput("non-finite head parameter".into()));
        }
        Ok(ClassifierHead { weights, bias })
    }

    pub fn class_count(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn row(&self, class: usize) -> &[f64] {
        self.weights.row(class)
    }

    pub(crate) fn row_mut(&mut self, class: usize) -> &mut [f64] {
        self.weights.row_mut(class)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "feature vector has {} entries, head expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(self
            .weights
            .iter_rows()
            .zip(&self.bias)
            .map(|(w, b)| dot(w, x) + b)
            .collect())
    }

    /// Argmax class of the head logits; ties go to the lower index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(crate::prob::argmax(&self.logits(x)?))
    }

    /// Logit table for every row of `features`, labels carried over.
    pub fn logit_table(&self, features: &FeatureTable) -> Result<LogitTable> {
        let mut data = Vec::with_capacity(features.len() * self.class_count());
        for row in features.features().iter_rows() {
            data.extend(self.logits(row)?);
        }
        LogitTable::new(
            features.item_ids().to_vec(),
            Matrix::new(features.len(), self.class_count(), data)?,
            Some(features.labels().to_vec()),
        )
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Bidirectional map between dense class indices and taxon ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassIndexMap {
    taxa: Vec<i64>,
    index: HashMap<i64, usize>,
}

impl ClassIndexMap {
    /// `taxa[i]` is the taxon id of class `i`; ids must be distinct.
    pub fn new(taxa: Vec<i64>) -> Result<Self> {
        let mut index = HashMap::with_capacity(taxa.len());
        for (i, &t) in taxa.iter().enumerate() {
            if index.insert(t, i).is_some() {
                return Err(Error::InvalidInput(format!(
                    "taxon {t} mapped to more than one class"
                )));
            }
        }
        Ok(ClassIndexMap { taxa, index })
    }

    /// Identity-like map where class `i` is taxon `i`.
    pub fn identity(k: usize) -> Self {
        Self::new((0..k as i64).collect()).expect("distinct by construction")
    }

    pub fn len(&self) -> usize {
        self.taxa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taxa.is_empty()
    }

    pub fn taxon(&self, class: usize) -> Option<i64> {
        self.taxa.get(class).copied()
    }

    pub fn class_of(&self, taxon: i64) -> Option<usize> {
        self.index.get(&taxon).copied()
    }

    pub fn taxa(&self) -> &[i64] {
        &self.taxa
    }

    /// SHA-256 over the canonical `index,taxon\n` listing, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (i, t) in self.taxa.iter().enumerate() {
            h.update(format!("{i},{t}\n").as_bytes());
        }
        hex_string(&h.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
