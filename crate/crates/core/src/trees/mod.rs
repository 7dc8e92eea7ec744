//! Decision-tree ensembles written from scratch: Random Forest and Extra Trees
//! similarity classifiers with impurity importances, and a least-squares
//! gradient-boosted regressor used as the direct-regression baseline.

mod forest;
mod gbt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use forest::{fit_ensemble, EnsembleKind, ForestConfig, TreeEnsemble};
pub use gbt::{fit_gbt_regressor, GbtConfig, GbtRegressor};

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matrix {
    data: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
}

impl Matrix {
    pub fn new(data: Vec<f64>, n_rows: usize, n_cols: usize) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::invalid(format!(
                "matrix buffer has {} values, expected {n_rows}x{n_cols}",
                data.len()
            )));
        }
        Ok(Self {
            data,
            n_rows,
            n_cols,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != n_cols {
                return Err(Error::invalid(format!(
                    "row {i} has {} columns, expected {n_cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            data,
            n_rows: rows.len(),
            n_cols,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols.max(1)).take(self.n_rows)
    }

    /// Column-major copy, used by the split search.
    pub(crate) fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.n_cols)
            .map(|c| {
                (0..self.n_rows)
                    .map(|r| self.data[r * self.n_cols + c])
                    .collect()
            })
            .collect()
    }

    /// Keeps the columns whose mask entry is true.
    pub fn select_columns(&self, mask: &[bool]) -> Matrix {
        assert_eq!(mask.len(), self.n_cols);
        let n_cols = mask.iter().filter(|&&m| m).count();
        let mut data = Vec::with_capacity(self.n_rows * n_cols);
        for r in self.rows() {
            data.extend(r.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| *v));
        }
        Matrix {
            data,
            n_rows: self.n_rows,
            n_cols,
        }
    }
}

/// Binary tree in struct-of-arrays form. Internal nodes send `x[feature] <= threshold` left.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DecisionTree {
    /// `-1` marks a leaf.
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    /// Leaf output: positive-class fraction (classification) or mean residual (regression).
    pub value: Vec<f64>,
    pub n_samples: Vec<u32>,
}

impl DecisionTree {
    pub(crate) fn push_node(&mut self, value: f64, n: usize) -> usize {
        self.feature.push(-1);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(value);
        self.n_samples.push(n as u32);
        self.feature.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.feature[node] < 0
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        while self.feature[node] >= 0 {
            node = if x[self.feature[node] as usize] <= self.threshold[node] {
                self.left[node] as usize
            } else {
                self.right[node] as usize
            };
        }
        self.value[node]
    }

    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, n: usize) -> usize {
            if t.is_leaf(n) {
                0
            } else {
                1 + go(t, t.left[n] as usize).max(go(t, t.right[n] as usize))
            }
        }
        if self.feature.is_empty() {
            0
        } else {
            go(self, 0)
        }
    }
}
