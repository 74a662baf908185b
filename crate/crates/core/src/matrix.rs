//! Row-major dense feature matrices carrying node identifiers and optional
//! row weights.

use std::collections::HashSet;
use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense `rows x cols` matrix of node features.
///
/// Row `i` belongs to node `ids()[i]`. Weighted matrices arise when clustering
/// virtual nodes, each standing in for a cell of original nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    ids: Vec<u64>,
    weights: Option<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            data,
            ids: (0..rows as u64).collect(),
            weights: None,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols]).expect("shape is consistent")
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(m[(i, j)]);
            }
        }
        Self::new(rows, cols, data).expect("shape is consistent")
    }

    /// Replaces the node identifiers. Identifiers must be unique.
    pub fn with_ids(mut self, ids: Vec<u64>) -> Result<Self> {
        if ids.len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "{} ids for {} rows",
                ids.len(),
                self.rows
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::InvalidArgument(format!("duplicate node id {dup}")));
        }
        self.ids = ids;
        Ok(self)
    }

    /// Attaches strictly positive row weights.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} rows",
                weights.len(),
                self.rows
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "row weights must be positive and finite, got {w}"
            )));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Weight of row `i`, 1 for unweighted matrices.
    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    pub fn total_weight(&self) -> f64 {
        self.weights
            .as_ref()
            .map_or(self.rows as f64, |w| w.iter().sum())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Copies a contiguous block of columns, keeping ids and weights.
    pub fn column_slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start > range.end || range.end > self.cols {
            return Err(Error::InvalidArgument(format!(
                "column range {range:?} outside 0..{}",
                self.cols
            )));
        }
        let width = range.len();
        let mut data = Vec::with_capacity(self.rows * width);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[range.clone()]);
        }
        Ok(Self {
            rows: self.rows,
            cols: width,
            data,
            ids: self.ids.clone(),
            weights: self.weights.clone(),
        })
    }

    /// Copies the listed columns in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        if let Some(c) = columns.iter().find(|c| **c >= self.cols) {
            return Err(Error::InvalidArgument(format!(
                "column {c} outside 0..{}",
                self.cols
            )));
        }
        let mut data = Vec::with_capacity(self.rows * columns.len());
        for i in 0..self.rows {
            let row = self.row(i);
            data.extend(columns.iter().map(|&c| row[c]));
        }
        Ok(Self {
            rows: self.rows,
            cols: columns.len(),
            data,
            ids: self.ids.clone(),
            weights: self.weights.clone(),
        })
    }

    /// Copies the listed rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| **r >= self.rows) {
            return Err(Error::InvalidArgument(format!(
                "row {r} outside 0..{}",
                self.rows
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Ok(Self {
            rows: rows.len(),
            cols: self.cols,
            data,
            ids: rows.iter().map(|&r| self.ids[r]).collect(),
            weights: self
                .weights
                .as_ref()
                .map(|w| rows.iter().map(|&r| w[r]).collect()),
        })
    }

    /// Concatenates column blocks of the same nodes. Ids and weights are taken
    /// from the first block and must agree across blocks.
    pub fn hconcat(parts: &[FeatureMatrix]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("no blocks to concatenate".into()))?;
        for p in parts {
            if p.rows != first.rows || p.ids != first.ids {
                return Err(Error::DimensionMismatch(
                    "blocks describe different nodes".into(),
                ));
            }
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(first.rows * cols);
        for i in 0..first.rows {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Ok(Self {
            rows: first.rows,
            cols,
            data,
            ids: first.ids.clone(),
            weights: first.weights.clone(),
        })
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    /// Frobenius norm of `self - other`.
    pub fn frobenius_distance(&self, other: &FeatureMatrix) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Scales every row to unit Euclidean norm; zero rows stay zero.
    pub fn normalize_rows(&mut self) {
        let cols = self.cols;
        for row in self.data.chunks_mut(cols.max(1)) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slices_round_trip_through_hconcat() {
        let m = FeatureMatrix::new(2, 5, (0..10).map(f64::from).collect()).unwrap();
        let a = m.column_slice(0..2).unwrap();
        let b = m.column_slice(2..5).unwrap();
        assert_eq!(a.row(1), &[5.0, 6.0]);
        assert_eq!(FeatureMatrix::hconcat(&[a, b]).unwrap(), m);
    }

    #[test]
    fn rejects_bad_shapes_and_weights() {
        assert!(FeatureMatrix::new(2, 2, vec![0.0; 3]).is_err());
        let m = FeatureMatrix::zeros(2, 1);
        assert!(m.clone().with_weights(vec![1.0, 0.0]).is_err());
        assert!(m.clone().with_ids(vec![3, 3]).is_err());
        assert!(m.column_slice(0..2).is_err());
    }

    #[test]
    fn normalize_rows_leaves_zero_rows() {
        let mut m = FeatureMatrix::from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap();
        m.normalize_rows();
        assert_eq!(m.row(0), &[0.6, 0.8]);
        assert_eq!(m.row(1), &[0.0, 0.0]);
    }
}
