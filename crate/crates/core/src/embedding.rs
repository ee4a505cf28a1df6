//! Sample-by-dimension feature matrices with aligned concept labels.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::concept_space::Combo;
use crate::error::{Error, Result};

/// Dense `s x d` embedding matrix with one `(c1, c2)` label pair per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Array2<f64>,
    pub labels_c1: Vec<usize>,
    pub labels_c2: Vec<usize>,
    pub n: usize,
}

impl EmbeddingTable {
    pub fn new(
        matrix: Array2<f64>,
        labels_c1: Vec<usize>,
        labels_c2: Vec<usize>,
        n: usize,
    ) -> Result<Self> {
        let rows = matrix.nrows();
        if labels_c1.len() != rows || labels_c2.len() != rows {
            return Err(Error::InvalidInput(format!(
                "{} rows but {} / {} labels",
                rows,
                labels_c1.len(),
                labels_c2.len()
            )));
        }
        if matrix.ncols() == 0 {
            return Err(Error::InvalidInput("embedding dimension must be >= 1".into()));
        }
        if let Some((r, (&a, &b))) = labels_c1
            .iter()
            .zip(&labels_c2)
            .enumerate()
            .find(|(_, (&a, &b))| a >= n || b >= n)
        {
            return Err(Error::InvalidInput(format!(
                "row {r} has label ({a}, {b}) outside [0, {n})"
            )));
        }
        Ok(Self {
            matrix,
            labels_c1,
            labels_c2,
            n,
        })
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row(&self, r: usize) -> ArrayView1<'_, f64> {
        self.matrix.row(r)
    }

    pub fn combo(&self, r: usize) -> Combo {
        (self.labels_c1[r], self.labels_c2[r])
    }

    /// Row indices grouped by `(c1, c2)`, keyed in row-major order.
    pub fn rows_by_combo(&self) -> BTreeMap<Combo, Vec<usize>> {
        let mut groups: BTreeMap<Combo, Vec<usize>> = BTreeMap::new();
        for r in 0..self.rows() {
            groups.entry(self.combo(r)).or_default().push(r);
        }
        groups
    }

    /// Mean of the given rows.
    pub fn mean_of(&self, rows: &[usize]) -> Array1<f64> {
        let mut acc = Array1::zeros(self.dim());
        for &r in rows {
            acc += &self.matrix.row(r);
        }
        acc / rows.len() as f64
    }

    pub fn global_mean(&self) -> Array1<f64> {
        self.matrix
            .mean_axis(Axis(0))
            .unwrap_or_else(|| Array1::zeros(self.dim()))
    }

    /// Checks that every one of the `n^2` cells is present with the same count.
    pub fn check_balanced_complete(&self) -> Result<usize> {
        let groups = self.rows_by_combo();
        if groups.len() != self.n * self.n {
            return Err(Error::BalanceViolation(format!(
                "{} of {} combinations present",
                groups.len(),
                self.n * self.n
            )));
        }
        let per_cell = groups.values().next().map_or(0, Vec::len);
        if let Some((combo, rows)) = groups.iter().find(|(_, r)| r.len() != per_cell) {
            return Err(Error::BalanceViolation(format!(
                "combination {combo:?} has {} rows, expected {per_cell}",
                rows.len()
            )));
        }
        Ok(per_cell)
    }

    /// Rows whose combination satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(Combo) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.rows()).filter(|&r| keep(self.combo(r))).collect();
        self.select(&idx)
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            matrix: self.matrix.select(Axis(0), idx),
            labels_c1: idx.iter().map(|&r| self.labels_c1[r]).collect(),
            labels_c2: idx.iter().map(|&r| self.labels_c2[r]).collect(),
            n: self.n,
        }
    }

    /// Copy with every row mapped through `f`.
    pub fn map_rows(&self, f: impl Fn(ArrayView1<'_, f64>) -> Array1<f64>) -> Self {
        let rows: Vec<Array1<f64>> = self.matrix.rows().into_iter().map(f).collect();
        let d = rows.first().map_or(self.dim(), |r| r.len());
        let mut matrix = Array2::zeros((rows.len(), d));
        for (mut dst, src) in matrix.rows_mut().into_iter().zip(rows) {
            dst.assign(&src);
        }
        Self {
            matrix,
            labels_c1: self.labels_c1.clone(),
            labels_c2: self.labels_c2.clone(),
            n: self.n,
        }
    }
}
