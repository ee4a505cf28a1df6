//! Top-2 principal-component coordinates for plotting.

use std::path::Path;

use faer::Side;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::linalg::to_mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaPoint {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub row: usize,
    pub c1: usize,
    pub c2: usize,
    pub pc1: f64,
    pub pc2: f64,
}

/// Project every row onto the two leading eigenvectors of the sample
/// covariance. Each eigenvector's sign is fixed so that its largest-magnitude
/// entry is positive.
pub fn top2_projection(table: &EmbeddingTable) -> Result<Vec<[f64; 2]>> {
    let d = table.dim();
    if d < 2 || table.rows() < 2 {
        return Err(Error::InvalidInput(
            "PCA needs at least two rows and two columns".into(),
        ));
    }
    let centered = &table.matrix - &table.global_mean();
    let x = to_mat(&centered);
    let cov = x.transpose() * &x * faer::Scale(1.0 / (table.rows() - 1) as f64);
    let eig = cov
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::InvalidInput(format!("eigendecomposition failed: {e:?}")))?;
    let values = eig.S().column_vector();
    let vectors = eig.U();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let comps: Vec<Vec<f64>> = order[..2]
        .iter()
        .map(|&c| {
            let v: Vec<f64> = (0..d).map(|r| vectors[(r, c)]).collect();
            let peak = v
                .iter()
                .copied()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            let s = if peak < 0.0 { -1.0 } else { 1.0 };
            v.into_iter().map(|x| s * x).collect()
        })
        .collect();
    Ok(centered
        .rows()
        .into_iter()
        .map(|r| {
            let dot = |c: &[f64]| r.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [dot(&comps[0]), dot(&comps[1])]
        })
        .collect())
}

pub(crate) fn write_csv(path: &Path, points: &[PcaPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("{other:?}")),
    })?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
