//! Representation-structure metrics and zero-shot accuracy.

use serde::{Deserialize, Serialize};

use crate::concept_space::Combo;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::factorization::{conditional_vectors, FactoredModel};
use crate::probes::{eval_probe, fit_probe, ProbeArch, ProbeSpec};
use crate::trainer::TrainConfig;

/// Phase-3 reference: linearity above this counts as strongly linear.
pub const STRONGLY_LINEAR_R2: f64 = 0.8;
/// Phase-3 reference: |mean cosine| below this counts as orthogonal.
pub const ORTHOGONAL_COSINE: f64 = 0.1;
/// Phase-1 reference: decoded accuracy below this marks spurious features.
pub const SPURIOUS_DECODABILITY: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub zero_shot_acc_c1: f64,
    pub zero_shot_acc_c2: f64,
    pub decodability_c1: f64,
    pub decodability_c2: f64,
    pub linearity_r2: f64,
    pub orthogonality: f64,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub dataset: String,
}

impl MetricReport {
    /// `(metric name, value)` pairs in a fixed order, for CSV rows.
    pub fn named_values(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("zero_shot_acc_c1", self.zero_shot_acc_c1),
            ("zero_shot_acc_c2", self.zero_shot_acc_c2),
            ("zero_shot_acc", 0.5 * (self.zero_shot_acc_c1 + self.zero_shot_acc_c2)),
            ("decodability_c1", self.decodability_c1),
            ("decodability_c2", self.decodability_c2),
            ("linearity_r2", self.linearity_r2),
            ("orthogonality", self.orthogonality),
        ]
    }
}

/// Share of embedding variance explained by the additive reconstruction
/// `mean + u1[c1] + u2[c2]` fit with [`conditional_vectors`].
pub fn linearity_r2(table: &EmbeddingTable) -> Result<f64> {
    let model = conditional_vectors(table)?;
    linearity_r2_with(table, &model)
}

/// R² of `table` against the reconstructions of an already fitted model.
pub fn linearity_r2_with(table: &EmbeddingTable, model: &FactoredModel) -> Result<f64> {
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for r in 0..table.rows() {
        let (i, j) = table.combo(r);
        let recon = model.reconstruct(i, j)?;
        for ((x, rc), m) in table.row(r).iter().zip(&recon).zip(&model.global_mean) {
            ss_res += (x - rc) * (x - rc);
            ss_tot += (x - m) * (x - m);
        }
    }
    if ss_tot <= f64::MIN_POSITIVE {
        return Err(Error::DegenerateVariance);
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Mean cosine similarity over all `(u1[i], u2[j])` pairs; with
/// `absolute = true` the mean of absolute cosines.
pub fn orthogonality(model: &FactoredModel, absolute: bool) -> Result<f64> {
    let norms = |u: &ndarray::Array2<f64>, concept: usize| -> Result<Vec<f64>> {
        u.rows()
            .into_iter()
            .enumerate()
            .map(|(index, r)| {
                let n = r.dot(&r).sqrt();
                if n > 0.0 {
                    Ok(n)
                } else {
                    Err(Error::DegenerateVector { concept, index })
                }
            })
            .collect()
    };
    let n1 = norms(&model.u1, 1)?;
    let n2 = norms(&model.u2, 2)?;
    let mut total = 0.0;
    for (a, na) in model.u1.rows().into_iter().zip(&n1) {
        for (b, nb) in model.u2.rows().into_iter().zip(&n2) {
            let cos = a.dot(&b) / (na * nb);
            total += if absolute { cos.abs() } else { cos };
        }
    }
    Ok(total / (n1.len() * n2.len()) as f64)
}

/// Linear-probe accuracy per concept: fit on `table`, score on `heldout`.
pub fn decodability(
    table: &EmbeddingTable,
    heldout: &EmbeddingTable,
    tc: &TrainConfig,
    seed: u64,
) -> Result<[f64; 2]> {
    if table.n != heldout.n || table.dim() != heldout.dim() {
        return Err(Error::InvalidInput(format!(
            "label/feature space mismatch: (n = {}, d = {}) vs (n = {}, d = {})",
            table.n,
            table.dim(),
            heldout.n,
            heldout.dim()
        )));
    }
    let spec = ProbeSpec {
        arch: ProbeArch::Linear,
        train_config: tc.clone(),
        init_seed: seed,
    };
    let probe = fit_probe(table, &spec)?;
    eval_probe(&probe, heldout)
}

/// Per-concept accuracies and their mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroShot {
    pub acc_c1: f64,
    pub acc_c2: f64,
    pub mean: f64,
}

/// Score `predict` on every sample of `test` (inputs with their true pair).
pub fn zero_shot_accuracy<X, F>(predict: F, test: &[(X, Combo)]) -> Result<ZeroShot>
where
    F: Fn(&X) -> Result<Combo>,
{
    if test.is_empty() {
        return Err(Error::InvalidInput("empty test set".into()));
    }
    let mut hits = [0usize; 2];
    for (x, truth) in test {
        let (i, j) = predict(x)?;
        hits[0] += usize::from(i == truth.0);
        hits[1] += usize::from(j == truth.1);
    }
    let total = test.len() as f64;
    let acc_c1 = hits[0] as f64 / total;
    let acc_c2 = hits[1] as f64 / total;
    Ok(ZeroShot {
        acc_c1,
        acc_c2,
        mean: (acc_c1 + acc_c2) / 2.0,
    })
}

/// Per-concept accuracy of predicted pairs against the table's labels.
pub fn pair_accuracy(table: &EmbeddingTable, predicted: &[Combo]) -> Result<ZeroShot> {
    let rows: Vec<(usize, Combo)> = (0..table.rows()).map(|r| (r, table.combo(r))).collect();
    zero_shot_accuracy(|&r| Ok(predicted[r]), &rows)
}
