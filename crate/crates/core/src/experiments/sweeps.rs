//! Training-based suites: diversity, scale and three-phase sweeps.

use std::time::Instant;

use ndarray::Axis;

use super::{pca, ExperimentConfig, ExperimentResult, PcaPoint, PointRows};
use crate::concept_space::{build_nk_split, NkSplit};
use crate::error::{Error, Result};
use crate::factorization::conditional_vectors;
use crate::metrics::{decodability, linearity_r2_with, orthogonality};
use crate::par::{self, Execution};
use crate::synth_data::{generate, LabeledImageSet, SplitTag};
use crate::trainer::{accuracy, embed, train, Labeled, TrainedModel};

/// Metrics recorded by every training suite, in row order.
pub const TRAINING_METRICS: [&str; 6] = [
    "id_acc",
    "zero_shot_acc_c1",
    "zero_shot_acc_c2",
    "zero_shot_acc",
    "id_ood_gap",
    "best_epoch",
];

/// Extra metrics of the three-phase sweep, after [`TRAINING_METRICS`].
pub const STRUCTURE_METRICS: [&str; 5] = [
    "decodability_c1",
    "decodability_c2",
    "linearity_r2",
    "orthogonality",
    "orthogonality_abs",
];

#[derive(Debug, Clone, Copy)]
struct Point {
    n: usize,
    k: usize,
    seed: u64,
    n_cell: usize,
}

struct Trained {
    split: NkSplit,
    model: TrainedModel,
    /// Full grid, `probe_n_cell` images per cell, disjoint seed stream.
    probe: LabeledImageSet,
    dataset_size: usize,
}

fn train_point(cfg: &ExperimentConfig, p: Point) -> Result<Trained> {
    let split = build_nk_split(p.n, p.k)?;
    let mut spec = cfg.dataset.clone();
    spec.seed = spec.seed.wrapping_add(p.seed);
    spec.n_cell = p.n_cell;
    // Points already run concurrently; keep each one on its own thread.
    let exec = Execution::Sequential;
    let train_set = generate(&spec, p.n, &split.train_combos, SplitTag::Train, exec)?;
    let test_set = generate(&spec, p.n, &split.test_combos, SplitTag::Test, exec)?;
    let mut ec = cfg.extractor.clone();
    ec.init_seed = ec.init_seed.wrapping_add(p.seed);
    let mut tc = cfg.train.clone();
    tc.shuffle_seed = tc.shuffle_seed.wrapping_add(p.seed);
    let model = train(&train_set, &test_set, &ec, &tc)?;
    let mut probe_spec = spec.clone();
    probe_spec.n_cell = cfg.probe_n_cell;
    let probe = generate(&probe_spec, p.n, &split.full_grid(), SplitTag::Probe, exec)?;
    Ok(Trained {
        dataset_size: train_set.len(),
        split,
        model,
        probe,
    })
}

fn training_rows(t: &Trained, out: &mut PointRows) -> Result<()> {
    let idx: Vec<usize> = (0..t.probe.len())
        .filter(|&r| t.split.is_train((t.probe.labels_c1[r], t.probe.labels_c2[r])))
        .collect();
    let x = t.probe.pixels.select(Axis(0), &idx);
    let y1: Vec<usize> = idx.iter().map(|&r| t.probe.labels_c1[r]).collect();
    let y2: Vec<usize> = idx.iter().map(|&r| t.probe.labels_c2[r]).collect();
    let id = accuracy(&t.model.network, Labeled::new(x.view(), &y1, &y2));
    let id_mean = 0.5 * (id[0] + id[1]);
    let selected = t
        .model
        .selected()
        .ok_or_else(|| Error::InvalidParameter("training ran for zero epochs".into()))?;
    let ood = selected.ood_acc.unwrap_or([f64::NAN; 2]);
    let ood_mean = 0.5 * (ood[0] + ood[1]);
    out.push("id_acc", id_mean);
    out.push("zero_shot_acc_c1", ood[0]);
    out.push("zero_shot_acc_c2", ood[1]);
    out.push("zero_shot_acc", ood_mean);
    out.push("id_ood_gap", id_mean - ood_mean);
    out.push("best_epoch", t.model.best_epoch as f64);
    Ok(())
}

fn run_points<F>(
    cfg: &ExperimentConfig,
    exec: Execution,
    points: Vec<Point>,
    per_point: F,
) -> Result<ExperimentResult>
where
    F: Fn(&Trained, Point, &mut PointRows) -> Result<Vec<PcaPoint>> + Sync + Send,
{
    let kind = cfg.experiment;
    let outputs = par::map(exec, points, |p| -> Result<_> {
        let t0 = Instant::now();
        let trained = train_point(cfg, p)?;
        let mut rows = PointRows::new(kind, p.n, p.k, p.seed, trained.dataset_size);
        training_rows(&trained, &mut rows)?;
        let pca = per_point(&trained, p, &mut rows)?;
        Ok((rows.finish(t0.elapsed().as_secs_f64()), pca))
    });
    let mut result = ExperimentResult::default();
    for o in outputs {
        let (rows, pca) = o?;
        result.rows.extend(rows);
        result.pca.extend(pca);
    }
    Ok(result)
}

fn grid_points(cfg: &ExperimentConfig, sizes: &[usize]) -> Result<Vec<Point>> {
    let mut points = Vec::new();
    for (n, k) in cfg.training_points()? {
        for &n_cell in sizes {
            for &seed in &cfg.grid.seeds {
                points.push(Point { n, k, seed, n_cell });
            }
        }
    }
    Ok(points)
}

/// OOD accuracy as combination diversity grows: over `n` with `k = n - 1`
/// (`diversity_n`) or over `k` at fixed `n` (`diversity_k`).
pub fn run_diversity_sweeps(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentResult> {
    let points = grid_points(cfg, &[cfg.dataset.n_cell])?;
    run_points(cfg, exec, points, |_, _, _| Ok(Vec::new()))
}

/// ID/OOD accuracy at growing per-cell sample counts.
pub fn run_scale_sweep(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentResult> {
    let points = grid_points(cfg, &cfg.scale_sizes())?;
    run_points(cfg, exec, points, |_, _, _| Ok(Vec::new()))
}

/// Accuracy plus representation structure (decodability, linearity,
/// orthogonality, PCA coordinates) across `k / n`.
///
/// Structure metrics are computed on the full-grid probe set; decodability
/// fits a linear probe on even rows and scores it on odd rows.
pub fn run_three_phase(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentResult> {
    let points = grid_points(cfg, &[cfg.dataset.n_cell])?;
    run_points(cfg, exec, points, |t, p, rows| {
        let table = embed(&t.model, &t.probe)?;
        let even: Vec<usize> = (0..table.rows()).step_by(2).collect();
        let odd: Vec<usize> = (1..table.rows()).step_by(2).collect();
        let mut ptc = cfg.probe.clone();
        ptc.shuffle_seed = ptc.shuffle_seed.wrapping_add(p.seed);
        let dec = decodability(&table.select(&even), &table.select(&odd), &ptc, p.seed)?;
        let model = conditional_vectors(&table)?;
        rows.push("decodability_c1", dec[0]);
        rows.push("decodability_c2", dec[1]);
        rows.push("linearity_r2", linearity_r2_with(&table, &model)?);
        rows.push("orthogonality", orthogonality(&model, false)?);
        rows.push("orthogonality_abs", orthogonality(&model, true)?);
        let coords = pca::top2_projection(&table)?;
        Ok(coords
            .into_iter()
            .enumerate()
            .map(|(row, [pc1, pc2])| {
                let (c1, c2) = table.combo(row);
                PcaPoint {
                    n: p.n,
                    k: p.k,
                    seed: p.seed,
                    row,
                    c1,
                    c2,
                    pc1,
                    pc2,
                }
            })
            .collect())
    })
}
