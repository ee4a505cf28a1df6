use std::collections::BTreeSet;

use compgen::experiments::{
    read_results_csv, run, write_outputs, ExperimentConfig, ExperimentKind, Manifest, ResultRow,
    Summary, RESULTS_HEADER, STRUCTURE_METRICS, TRAINING_METRICS,
};
use compgen::synth_data::{DatasetSpec, Family};
use compgen::trainer::ExtractorConfig;
use compgen::Execution;

/// A training config small enough for tests: 8px images, a tiny extractor
/// and a few epochs.
fn tiny(kind: ExperimentKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk_scale(kind);
    let mut ds = DatasetSpec::standard(Family::SpriteGlyph, 8, 3, 5);
    ds.concept_spec.nuisance_dims.truncate(1);
    cfg.dataset = ds;
    cfg.extractor = ExtractorConfig {
        hidden_sizes: vec![16],
        feature_dim: 8,
        init_seed: 1,
    };
    cfg.train.epochs = 3;
    cfg.probe.epochs = 3;
    cfg.probe_n_cell = 2;
    cfg.grid.seeds = vec![0, 1];
    match kind {
        ExperimentKind::DiversityN => cfg.grid.n = vec![3, 4],
        ExperimentKind::DiversityK => {
            cfg.grid.n = vec![4];
            cfg.grid.k = vec![1, 2, 3];
        }
        ExperimentKind::Scale => {
            cfg.grid.n = vec![3];
            cfg.grid.k = vec![2];
            cfg.grid.dataset_sizes = vec![2, 4];
        }
        ExperimentKind::ThreePhase => {
            cfg.grid.n = vec![4];
            cfg.grid.k_over_n = vec![0.25, 0.75];
        }
        _ => {}
    }
    cfg
}

fn without_time(rows: &[ResultRow]) -> Vec<ResultRow> {
    rows.iter()
        .map(|r| ResultRow {
            wall_time_s: 0.0,
            ..r.clone()
        })
        .collect()
}

#[test]
fn training_grids_are_complete() {
    for kind in [
        ExperimentKind::DiversityN,
        ExperimentKind::DiversityK,
        ExperimentKind::Scale,
        ExperimentKind::ThreePhase,
    ] {
        let cfg = tiny(kind);
        let points = cfg.training_points().unwrap();
        let sizes = if kind == ExperimentKind::Scale { cfg.scale_sizes().len() } else { 1 };
        let metrics = TRAINING_METRICS.len()
            + if kind == ExperimentKind::ThreePhase { STRUCTURE_METRICS.len() } else { 0 };
        let result = run(&cfg, Execution::Parallel).unwrap();
        assert_eq!(
            result.rows.len(),
            points.len() * cfg.grid.seeds.len() * sizes * metrics,
            "{kind}"
        );
        let keys: BTreeSet<_> = result
            .rows
            .iter()
            .map(|r| (r.n, r.k, r.seed, r.dataset_size, r.metric.clone()))
            .collect();
        assert_eq!(keys.len(), result.rows.len(), "{kind}: duplicate rows");
        assert!(result.rows.iter().all(|r| r.experiment == kind.name()));
        if kind == ExperimentKind::ThreePhase {
            assert!(!result.pca.is_empty());
        }
    }
}

#[test]
fn scale_dataset_size_counts_training_images() {
    let cfg = tiny(ExperimentKind::Scale);
    let result = run(&cfg, Execution::Parallel).unwrap();
    let sizes: BTreeSet<usize> = result.rows.iter().map(|r| r.dataset_size).collect();
    let expected: BTreeSet<usize> = cfg.scale_sizes().iter().map(|c| 3 * 2 * c).collect();
    assert_eq!(sizes, expected);
}

#[test]
fn parallel_and_sequential_rows_match() {
    for kind in [ExperimentKind::DiversityK, ExperimentKind::Prop1] {
        let cfg = tiny(kind);
        let par = run(&cfg, Execution::Parallel).unwrap();
        let seq = run(&cfg, Execution::Sequential).unwrap();
        assert_eq!(without_time(&par.rows), without_time(&seq.rows), "{kind}");
        let bits = |rows: &[ResultRow]| rows.iter().map(|r| r.value.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&par.rows), bits(&seq.rows));
    }
}

#[test]
fn manifest_reproduces_the_run() {
    let cfg = tiny(ExperimentKind::ThreePhase);
    let dir = tempfile::tempdir().unwrap();
    let first = run(&cfg, Execution::Parallel).unwrap();
    let files = write_outputs(dir.path(), &cfg, Execution::Parallel, &first).unwrap();

    let header = std::fs::read_to_string(&files.results).unwrap();
    assert_eq!(header.lines().next().unwrap(), RESULTS_HEADER.join(","));
    let summary: Summary = serde_json::from_str(&std::fs::read_to_string(&files.summary).unwrap()).unwrap();
    assert_eq!(summary.rows, first.rows.len());
    assert!(files.pca.as_ref().is_some_and(|p| p.exists()));

    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(&files.manifest).unwrap()).unwrap();
    assert_eq!(manifest.config_hash, cfg.hash().unwrap());
    assert_eq!(manifest.seeds, cfg.grid.seeds);
    let again_cfg = manifest.config().unwrap();
    assert_eq!(again_cfg, cfg);
    let again = run(&again_cfg, Execution::Sequential).unwrap();
    let stored = read_results_csv(&files.results).unwrap();
    assert_eq!(without_time(&stored), without_time(&again.rows));
}

#[test]
fn prop1_accuracy_falls_and_error_grows_with_noise() {
    let mut cfg = ExperimentConfig::desk_scale(ExperimentKind::Prop1);
    cfg.grid.n = vec![4, 6];
    cfg.grid.noise = vec![0.0, 0.05, 0.3, 1.5];
    let result = run(&cfg, Execution::Parallel).unwrap();
    for n in [4, 6] {
        let metric = |base: &str, noise: f64| {
            let name = if noise > 0.0 { format!("{base}@noise={noise}") } else { base.to_string() };
            result.mean(&name, n, 2, None)
        };
        let acc: Vec<f64> = cfg.grid.noise.iter().map(|&s| metric("zero_shot_acc", s)).collect();
        let err: Vec<f64> = cfg.grid.noise.iter().map(|&s| metric("max_recovery_error", s)).collect();
        assert_eq!(acc[0], 1.0);
        assert!(err[0] < 1e-9);
        for i in 1..acc.len() {
            assert!(acc[i] <= acc[i - 1] + 1e-12, "n = {n}: {acc:?}");
            assert!(err[i] >= err[i - 1], "n = {n}: {err:?}");
        }
        assert!(acc[3] < 1.0, "n = {n}: {acc:?}");
    }
}
