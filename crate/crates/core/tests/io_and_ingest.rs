mod common;

use std::path::PathBuf;

use common::{grid, truth};
use compgen::experiments::{probe_report, run, ExperimentConfig, ExperimentKind, IngestConfig};
use compgen::factorization::ClassifyRule;
use compgen::io::{
    decode_cemb, encode_cemb, export_embeddings, ingest_embeddings, read_cemb, read_csv_matrix,
    write_cemb, write_csv_matrix,
};
use compgen::probes::ProbeArch;
use compgen::trainer::TrainConfig;
use compgen::{build_nk_split, Error, Execution, FormatError};
use ndarray::Array2;
use proptest::prelude::*;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn bits(m: &Array2<f32>) -> Vec<u32> {
    m.iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #[test]
    fn cemb_roundtrip_is_bit_exact(rows in 0usize..12, cols in 0usize..9, raw in prop::collection::vec(any::<u32>(), 108)) {
        let values: Vec<f32> = raw
            .iter()
            .take(rows * cols)
            .map(|&b| {
                let v = f32::from_bits(b);
                if v.is_finite() { v } else { -0.0 }
            })
            .collect();
        let m = Array2::from_shape_vec((rows, cols), values).unwrap();
        let bytes = encode_cemb(&m).unwrap();
        prop_assert_eq!(bytes.len(), 16 + 4 * rows * cols);
        let back = decode_cemb(&bytes).unwrap();
        prop_assert_eq!(back.dim(), m.dim());
        prop_assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn truncated_files_are_corrupt(cut in 0usize..40) {
        let m = Array2::from_shape_fn((3, 2), |(r, c)| (r * 2 + c) as f32 + 0.5);
        let bytes = encode_cemb(&m).unwrap();
        let end = cut.min(bytes.len() - 1);
        let err = decode_cemb(&bytes[..end]).unwrap_err();
        prop_assert!(matches!(err, Error::Format(FormatError::Corrupt(_))), "{:?}", err);
    }
}

#[test]
fn trailing_bytes_are_corrupt() {
    let mut bytes = encode_cemb(&Array2::<f32>::zeros((2, 2))).unwrap();
    bytes.push(0);
    assert!(matches!(decode_cemb(&bytes), Err(Error::Format(FormatError::Corrupt(_)))));
}

#[test]
fn version_magic_and_nan_are_rejected() {
    let good = encode_cemb(&Array2::<f32>::ones((2, 3))).unwrap();
    let mut v2 = good.clone();
    v2[4..8].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(
        decode_cemb(&v2),
        Err(Error::Format(FormatError::BadVersion { expected: 1, found: 2 }))
    ));
    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(matches!(decode_cemb(&magic), Err(Error::Format(FormatError::BadMagic { .. }))));
    let mut nan = good;
    let at = 16 + 4 * (1 * 3 + 2);
    nan[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(
        decode_cemb(&nan),
        Err(Error::Format(FormatError::NonFinite { row: 1, col: 2 }))
    ));
}

#[test]
fn fixture_header_and_formats_agree() {
    let cemb = read_cemb(fixture("additive_n4.cemb")).unwrap();
    assert_eq!(cemb.dim(), (48, 6));
    let csv = read_csv_matrix(fixture("additive_n4.csv")).unwrap();
    assert_eq!(bits(&cemb), bits(&csv));
    let a = ingest_embeddings(fixture("additive_n4.cemb"), fixture("additive_n4_labels.csv"), None).unwrap();
    let b = ingest_embeddings(fixture("additive_n4.csv"), fixture("additive_n4_labels.csv"), None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.n, 4);
    assert_eq!(a.check_balanced_complete().unwrap(), 3);
}

#[test]
fn file_roundtrips_through_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let m = Array2::from_shape_fn((5, 4), |(r, c)| ((r * 7 + c) as f32).sin() * 1e-3 + r as f32);
    write_cemb(dir.path().join("m.cemb"), &m).unwrap();
    write_csv_matrix(dir.path().join("m.csv"), &m).unwrap();
    assert_eq!(bits(&read_cemb(dir.path().join("m.cemb")).unwrap()), bits(&m));
    assert_eq!(bits(&read_csv_matrix(dir.path().join("m.csv")).unwrap()), bits(&m));

    let t = truth(3, 4, 1).table(&grid(3), 2, 0.1, 1);
    export_embeddings(&t, dir.path().join("t.cemb"), dir.path().join("t.csv")).unwrap();
    let back = ingest_embeddings(dir.path().join("t.cemb"), dir.path().join("t.csv"), Some(3)).unwrap();
    assert_eq!(back.labels_c1, t.labels_c1);
    assert_eq!(back.labels_c2, t.labels_c2);
    for (x, y) in back.matrix.iter().zip(&t.matrix) {
        assert_eq!(*x, f64::from(*y as f32));
    }
}

#[test]
fn row_count_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    write_cemb(dir.path().join("m.cemb"), &Array2::<f32>::zeros((47, 6))).unwrap();
    let err = ingest_embeddings(dir.path().join("m.cemb"), fixture("additive_n4_labels.csv"), None).unwrap_err();
    assert!(matches!(
        err,
        Error::Format(FormatError::RowCountMismatch { matrix: 47, labels: 48 })
    ));
}

fn ingest_config(kind: ExperimentKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk_scale(kind);
    cfg.ingest = Some(IngestConfig {
        matrix: fixture("additive_n4.cemb"),
        labels: fixture("additive_n4_labels.csv"),
        n: None,
        k: 2,
        rule: ClassifyRule::NearestReconstruction,
        archs: vec![ProbeArch::Linear, ProbeArch::Mlp512],
    });
    cfg
}

#[test]
fn ingested_fixture_factorizes() {
    let result = run(&ingest_config(ExperimentKind::IngestFactorize), Execution::Sequential).unwrap();
    let get = |m: &str| result.rows.iter().find(|r| r.metric == m).unwrap().value;
    assert_eq!(get("zero_shot_acc"), 1.0);
    assert_eq!(get("design_rank"), 7.0);
    assert!(get("linearity_r2") > 0.99);
    assert!(result.rows.iter().all(|r| r.n == 4 && r.k == 2 && r.dataset_size == 48));
}

#[test]
fn ingested_fixture_yields_a_complete_report() {
    let table = ingest_embeddings(fixture("additive_n4.cemb"), fixture("additive_n4_labels.csv"), None).unwrap();
    let split = build_nk_split(4, 2).unwrap();
    let tc = TrainConfig {
        learning_rate: 1e-2,
        epochs: 400,
        batch_size: 16,
        ..TrainConfig::probe()
    };
    let out = probe_report(&table, &split, &[ProbeArch::Linear, ProbeArch::Mlp512], &tc, 0, "fixture").unwrap();
    let r = &out.report;
    for (name, v) in r.named_values() {
        assert!(v.is_finite(), "{name} = {v}");
    }
    assert_eq!((r.n, r.k, r.dataset.as_str()), (4, 2, "fixture"));
    assert!(r.decodability_c1 >= 0.9 && r.decodability_c2 >= 0.9, "{r:?}");
    assert!(r.linearity_r2 > 0.99);
    assert_eq!(out.per_arch.len(), 2);

    let rows = run(&ingest_config(ExperimentKind::IngestProbe), Execution::Sequential).unwrap().rows;
    for m in ["zero_shot_acc", "decodability_c1", "probe_acc:linear", "probe_norm:mlp_512"] {
        assert!(rows.iter().any(|r| r.metric == m), "missing {m}");
    }
}
