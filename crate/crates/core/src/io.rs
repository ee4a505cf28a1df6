//! On-disk formats.
//!
//! Embedding matrix (`CEMB`), little-endian throughout:
//!
//! ```text
//! magic   b"CEMB"
//! u32     version (= 1)
//! u32     rows
//! u32     cols
//! f32     rows * cols values, row-major
//! ```
//!
//! Labels are CSV with header `index,c1,c2` (extra trailing columns are
//! allowed and ignored), 0-based, sorted by `index`.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::embedding::EmbeddingTable;
use crate::error::{Error, FormatError, Result};

pub const CEMB_MAGIC: [u8; 4] = *b"CEMB";
pub const CEMB_VERSION: u32 = 1;
const CEMB_HEADER: usize = 16;

/// Encode an `f32` matrix in the `CEMB` layout.
pub fn encode_cemb(matrix: &Array2<f32>) -> Result<Vec<u8>> {
    let (rows, cols) = matrix.dim();
    let rows32 = u32::try_from(rows)
        .map_err(|_| Error::InvalidInput(format!("{rows} rows exceed u32")))?;
    let cols32 = u32::try_from(cols)
        .map_err(|_| Error::InvalidInput(format!("{cols} columns exceed u32")))?;
    let mut buf = Vec::with_capacity(CEMB_HEADER + 4 * rows * cols);
    buf.extend_from_slice(&CEMB_MAGIC);
    buf.extend_from_slice(&CEMB_VERSION.to_le_bytes());
    buf.extend_from_slice(&rows32.to_le_bytes());
    buf.extend_from_slice(&cols32.to_le_bytes());
    for v in matrix.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

/// Decode a `CEMB` buffer, rejecting bad magic, versions, truncation and
/// non-finite entries.
pub fn decode_cemb(bytes: &[u8]) -> Result<Array2<f32>> {
    if bytes.len() < CEMB_HEADER {
        if bytes.len() >= 4 && bytes[..4] != CEMB_MAGIC {
            return Err(bad_magic(bytes).into());
        }
        return Err(FormatError::Corrupt(format!(
            "{} bytes is shorter than the {CEMB_HEADER}-byte header",
            bytes.len()
        ))
        .into());
    }
    if bytes[..4] != CEMB_MAGIC {
        return Err(bad_magic(bytes).into());
    }
    let version = read_u32(bytes, 4);
    if version != CEMB_VERSION {
        return Err(FormatError::BadVersion {
            expected: CEMB_VERSION,
            found: version,
        }
        .into());
    }
    let rows = read_u32(bytes, 8) as usize;
    let cols = read_u32(bytes, 12) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(CEMB_HEADER))
        .ok_or_else(|| FormatError::Corrupt("dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(FormatError::Corrupt(format!(
            "expected {expected} bytes for {rows}x{cols}, found {}",
            bytes.len()
        ))
        .into());
    }
    let mut values = Vec::with_capacity(rows * cols);
    for (idx, chunk) in bytes[CEMB_HEADER..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(FormatError::NonFinite {
                row: idx / cols.max(1),
                col: idx % cols.max(1),
            }
            .into());
        }
        values.push(v);
    }
    Ok(Array2::from_shape_vec((rows, cols), values).expect("length checked above"))
}

fn bad_magic(bytes: &[u8]) -> FormatError {
    let mut found = [0u8; 4];
    found.copy_from_slice(&bytes[..4]);
    FormatError::BadMagic {
        expected: CEMB_MAGIC,
        found,
    }
}

pub fn write_cemb(path: impl AsRef<Path>, matrix: &Array2<f32>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_cemb(matrix)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_cemb(path: impl AsRef<Path>) -> Result<Array2<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cemb(&bytes)
}

/// Parsed labels file: `(c1, c2)` per row plus any extra named columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRows {
    pub c1: Vec<usize>,
    pub c2: Vec<usize>,
    pub extra_names: Vec<String>,
    pub extra: Vec<Vec<usize>>,
}

pub fn write_labels(
    path: impl AsRef<Path>,
    c1: &[usize],
    c2: &[usize],
    extra_names: &[String],
    extra: &[Vec<usize>],
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["index".to_string(), "c1".into(), "c2".into()];
    header.extend(extra_names.iter().cloned());
    w.write_record(&header)?;
    for r in 0..c1.len() {
        let mut rec = vec![r.to_string(), c1[r].to_string(), c2[r].to_string()];
        if let Some(ex) = extra.get(r) {
            rec.extend(ex.iter().map(usize::to_string));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parse a labels CSV. Extra columns whose values are all non-negative
/// integers are kept (nuisance assignments); any other extra column is
/// ignored.
pub fn parse_labels(text: &str) -> Result<LabelRows> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    if header.len() < 3 || &header[0] != "index" || &header[1] != "c1" || &header[2] != "c2" {
        return Err(FormatError::Labels(format!(
            "header must start with `index,c1,c2`, found `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        ))
        .into());
    }
    let width = header.len();
    let mut c1 = Vec::new();
    let mut c2 = Vec::new();
    let mut raw_extra: Vec<Vec<Option<usize>>> = Vec::new();
    for (expected_index, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |col: usize| -> Result<usize> {
            rec.get(col)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| {
                    FormatError::Labels(format!(
                        "row {expected_index}: column {col} is not a non-negative integer"
                    ))
                    .into()
                })
        };
        let index = parse(0)?;
        if index != expected_index {
            return Err(FormatError::Labels(format!(
                "rows must be sorted with contiguous 0-based indices; found {index} at position {expected_index}"
            ))
            .into());
        }
        c1.push(parse(1)?);
        c2.push(parse(2)?);
        raw_extra.push((3..width).map(|c| parse(c).ok()).collect());
    }
    let keep: Vec<usize> = (0..width - 3)
        .filter(|&c| raw_extra.iter().all(|row| row[c].is_some()))
        .collect();
    Ok(LabelRows {
        c1,
        c2,
        extra_names: keep.iter().map(|&c| header[c + 3].to_string()).collect(),
        extra: raw_extra
            .into_iter()
            .map(|row| keep.iter().filter_map(|&c| row[c]).collect())
            .collect(),
    })
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelRows> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text)
}

/// Reads a plain CSV matrix (no header, one row per line).
pub fn read_csv_matrix(path: impl AsRef<Path>) -> Result<Array2<f32>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        if *cols.get_or_insert(rec.len()) != rec.len() {
            return Err(FormatError::Corrupt(format!("ragged CSV row {rows}")).into());
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f32 = field.trim().parse().map_err(|_| {
                FormatError::Corrupt(format!("row {rows}, column {c}: `{field}` is not a number"))
            })?;
            if !v.is_finite() {
                return Err(FormatError::NonFinite { row: rows, col: c }.into());
            }
            values.push(v);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), values)
        .map_err(|e| FormatError::Corrupt(e.to_string()).into())
}

/// Writes a plain CSV matrix using the shortest round-tripping `f32` text.
pub fn write_csv_matrix(path: impl AsRef<Path>, matrix: &Array2<f32>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for row in matrix.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Build a validated table from an `f32` matrix and label rows.
///
/// `n` defaults to one more than the largest label when not given.
pub fn table_from_parts(
    matrix: Array2<f32>,
    labels: LabelRows,
    n: Option<usize>,
) -> Result<EmbeddingTable> {
    if matrix.nrows() != labels.c1.len() {
        return Err(FormatError::RowCountMismatch {
            matrix: matrix.nrows(),
            labels: labels.c1.len(),
        }
        .into());
    }
    let n = n.unwrap_or_else(|| {
        labels
            .c1
            .iter()
            .chain(&labels.c2)
            .max()
            .map_or(0, |m| m + 1)
    });
    EmbeddingTable::new(matrix.mapv(f64::from), labels.c1, labels.c2, n)
}

/// Load and validate an externally exported embedding table.
///
/// Matrices ending in `.csv` are read as plain CSV, anything else as `CEMB`.
pub fn ingest_embeddings(
    matrix_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    n: Option<usize>,
) -> Result<EmbeddingTable> {
    let matrix_path = matrix_path.as_ref();
    let matrix = if matrix_path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        read_csv_matrix(matrix_path)?
    } else {
        read_cemb(matrix_path)?
    };
    let labels = read_labels(labels_path)?;
    table_from_parts(matrix, labels, n)
}

/// Write a table as `CEMB` + labels CSV.
pub fn export_embeddings(
    table: &EmbeddingTable,
    matrix_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    write_cemb(matrix_path, &table.matrix.mapv(|v| v as f32))?;
    write_labels(labels_path, &table.labels_c1, &table.labels_c2, &[], &[])
}
