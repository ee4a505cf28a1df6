//! Factorization and probing of externally exported embeddings.

use std::time::Instant;

use super::{ExperimentConfig, ExperimentKind, ExperimentResult, IngestConfig, PointRows};
use crate::concept_space::{build_nk_split, NkSplit};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::factorization::{conditional_vectors, recover_from_table, Classifier};
use crate::io::ingest_embeddings;
use crate::metrics::{decodability, linearity_r2_with, orthogonality, pair_accuracy, MetricReport};
use crate::par::{self, Execution};
use crate::probes::{best_probe, normalize_by_max, ProbeArch};
use crate::trainer::TrainConfig;

fn load(cfg: &ExperimentConfig) -> Result<(&IngestConfig, EmbeddingTable, NkSplit)> {
    let ic = cfg
        .ingest
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{} needs an [ingest] section", cfg.experiment)))?;
    let table = ingest_embeddings(&ic.matrix, &ic.labels, ic.n)?;
    let split = build_nk_split(table.n, ic.k)?;
    Ok((ic, table, split))
}

/// Linearity and orthogonality of the conditional-mean model, or `NaN` when
/// the table is not a balanced, complete grid.
fn structure(table: &EmbeddingTable) -> Result<(f64, f64)> {
    if table.check_balanced_complete().is_err() {
        return Ok((f64::NAN, f64::NAN));
    }
    let model = conditional_vectors(table)?;
    Ok((linearity_r2_with(table, &model)?, orthogonality(&model, false)?))
}

/// Recover factored vectors from the `(n, k)` training cells of an ingested
/// table and classify the held-out cells.
///
/// Rows: `zero_shot_acc_c1`, `zero_shot_acc_c2`, `zero_shot_acc`,
/// `design_rank`, `residual`, `linearity_r2`, `orthogonality`.
pub fn run_ingest_factorize(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentResult> {
    let t0 = Instant::now();
    let (ic, table, split) = load(cfg)?;
    let train = table.filter(|c| split.is_train(c));
    let test = table.filter(|c| !split.is_train(c));
    let model = recover_from_table(&train, &split.train_combos, ic.k)?;
    let predicted = Classifier::new(&model, ic.rule)?.classify_rows(&test.matrix, exec)?;
    let zs = pair_accuracy(&test, &predicted)?;
    let (r2, orth) = structure(&table)?;
    let mut rows = PointRows::new(
        ExperimentKind::IngestFactorize,
        table.n,
        ic.k,
        cfg.grid.seeds[0],
        table.rows(),
    );
    rows.push("zero_shot_acc_c1", zs.acc_c1);
    rows.push("zero_shot_acc_c2", zs.acc_c2);
    rows.push("zero_shot_acc", zs.mean);
    rows.push("design_rank", model.design_rank as f64);
    rows.push("residual", model.residual);
    rows.push("linearity_r2", r2);
    rows.push("orthogonality", orth);
    Ok(ExperimentResult {
        rows: rows.finish(t0.elapsed().as_secs_f64()),
        pca: Vec::new(),
    })
}

/// Probe results for one seed.
#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    pub report: MetricReport,
    /// Mean held-out accuracy per architecture, in the order tried.
    pub per_arch: Vec<(ProbeArch, f64)>,
    pub best_arch: ProbeArch,
}

/// Full metric report for a table: zero-shot accuracy of the best probe
/// (trained on the `split` training cells, scored on the rest), linear
/// decodability (even rows vs odd rows), linearity and orthogonality.
pub fn probe_report(
    table: &EmbeddingTable,
    split: &NkSplit,
    archs: &[ProbeArch],
    tc: &TrainConfig,
    seed: u64,
    dataset: &str,
) -> Result<ProbeOutcome> {
    let train = table.filter(|c| split.is_train(c));
    let test = table.filter(|c| !split.is_train(c));
    if train.rows() == 0 || test.rows() == 0 {
        return Err(Error::InvalidInput(
            "split leaves no training or no held-out rows".into(),
        ));
    }
    let mut tc = tc.clone();
    tc.shuffle_seed = tc.shuffle_seed.wrapping_add(seed);
    let best = best_probe(&train, &test, archs, &tc, seed)?;
    let even: Vec<usize> = (0..table.rows()).step_by(2).collect();
    let odd: Vec<usize> = (1..table.rows()).step_by(2).collect();
    let dec = decodability(&table.select(&even), &table.select(&odd), &tc, seed)?;
    let (r2, orth) = structure(table)?;
    Ok(ProbeOutcome {
        report: MetricReport {
            zero_shot_acc_c1: best.heldout_acc[0],
            zero_shot_acc_c2: best.heldout_acc[1],
            decodability_c1: dec[0],
            decodability_c2: dec[1],
            linearity_r2: r2,
            orthogonality: orth,
            n: table.n,
            k: split.k,
            seed,
            dataset: dataset.to_string(),
        },
        per_arch: best.per_arch,
        best_arch: best.probe.arch,
    })
}

/// Per seed: the [`MetricReport`] values, then `probe_acc:<arch>` and
/// `probe_norm:<arch>` (accuracy divided by the best architecture's).
pub fn run_ingest_probe(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentResult> {
    let (ic, table, split) = load(cfg)?;
    let dataset = ic.matrix.display().to_string();
    let outputs = par::map(exec, cfg.grid.seeds.clone(), |seed| -> Result<_> {
        let t0 = Instant::now();
        let out = probe_report(&table, &split, &ic.archs, &cfg.probe, seed, &dataset)?;
        let mut rows = PointRows::new(ExperimentKind::IngestProbe, table.n, ic.k, seed, table.rows());
        for (name, v) in out.report.named_values() {
            rows.push(name, v);
        }
        let accs: Vec<f64> = out.per_arch.iter().map(|(_, a)| *a).collect();
        for ((arch, acc), norm) in out.per_arch.iter().zip(normalize_by_max(&accs)) {
            rows.push(format!("probe_acc:{}", arch.name()), *acc);
            rows.push(format!("probe_norm:{}", arch.name()), norm);
        }
        Ok(rows.finish(t0.elapsed().as_secs_f64()))
    });
    let mut result = ExperimentResult::default();
    for o in outputs {
        result.rows.extend(o?);
    }
    Ok(result)
}
