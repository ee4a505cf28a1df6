//! Experiment suites, their TOML configuration and result files.
//!
//! Every suite expands its grid into independent points, runs them through
//! [`par::map`](crate::par::map) and concatenates the rows in grid order, so
//! the CSV never depends on thread scheduling (only `wall_time_s` does).

mod ingest;
mod pca;
mod prop1;
mod sweeps;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::concept_space::{build_nk_split, NuisanceDim};
use crate::error::{Error, Result};
use crate::factorization::ClassifyRule;
use crate::par::Execution;
use crate::probes::ProbeArch;
use crate::synth_data::{DatasetSpec, Family};
use crate::trainer::{ExtractorConfig, TrainConfig};

pub use ingest::{probe_report, run_ingest_factorize, run_ingest_probe, ProbeOutcome};
pub use pca::{top2_projection, PcaPoint};
pub use prop1::{prop1_point, random_truth, run_prop1, Prop1Point};
pub use sweeps::{
    run_diversity_sweeps, run_scale_sweep, run_three_phase, STRUCTURE_METRICS, TRAINING_METRICS,
};

pub const RESULTS_HEADER: [&str; 8] = [
    "experiment",
    "n",
    "k",
    "seed",
    "dataset_size",
    "metric",
    "value",
    "wall_time_s",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Prop1,
    DiversityN,
    DiversityK,
    Scale,
    ThreePhase,
    IngestFactorize,
    IngestProbe,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Prop1,
        ExperimentKind::DiversityN,
        ExperimentKind::DiversityK,
        ExperimentKind::Scale,
        ExperimentKind::ThreePhase,
        ExperimentKind::IngestFactorize,
        ExperimentKind::IngestProbe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Prop1 => "prop1",
            ExperimentKind::DiversityN => "diversity_n",
            ExperimentKind::DiversityK => "diversity_k",
            ExperimentKind::Scale => "scale",
            ExperimentKind::ThreePhase => "three_phase",
            ExperimentKind::IngestFactorize => "ingest_factorize",
            ExperimentKind::IngestProbe => "ingest_probe",
        }
    }

    /// Whether the suite trains extractors from scratch.
    pub fn trains(self) -> bool {
        matches!(
            self,
            ExperimentKind::DiversityN
                | ExperimentKind::DiversityK
                | ExperimentKind::Scale
                | ExperimentKind::ThreePhase
        )
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown experiment `{s}`")))
    }
}

/// Grid axes. Which axes a suite reads is listed on [`ExperimentConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    pub n: Vec<usize>,
    pub k: Vec<usize>,
    /// Alternative to `k` for the three-phase sweep: `k = round(f * n)`.
    pub k_over_n: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Samples per training cell (`n_cell`).
    pub dataset_sizes: Vec<usize>,
    /// Gaussian noise levels added to training joints (prop1 only).
    pub noise: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            n: vec![10],
            k: vec![],
            k_over_n: vec![],
            seeds: vec![0],
            dataset_sizes: vec![],
            noise: vec![0.0],
        }
    }
}

/// Embeddings read from disk by the ingest suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub matrix: PathBuf,
    pub labels: PathBuf,
    /// Values per concept; inferred from the labels when absent.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default = "default_ingest_k")]
    pub k: usize,
    #[serde(default)]
    pub rule: ClassifyRule,
    #[serde(default = "default_archs")]
    pub archs: Vec<ProbeArch>,
}

fn default_ingest_k() -> usize {
    2
}

fn default_archs() -> Vec<ProbeArch> {
    ProbeArch::ALL.to_vec()
}

/// One experiment run.
///
/// Axes used per suite:
/// - `prop1`: `n`, `seeds`, `noise` (k is fixed at 2, `d = 2n + 5`)
/// - `diversity_n`: `n` with `k = n - 1`
/// - `diversity_k`: a single `n` and every `k`
/// - `scale`: single `n` and `k`, `dataset_sizes` (default `n_cell` x1, x2, x4)
/// - `three_phase`: single `n`, `k` or `k_over_n`
/// - ingest suites: `seeds` for probe initialisation
///
/// For training suites the grid seed drives the dataset, the extractor
/// initialisation and the shuffling stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default = "default_dataset")]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub extractor: ExtractorConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Optimisation of decodability and ingest probes.
    #[serde(default = "TrainConfig::probe")]
    pub probe: TrainConfig,
    /// Images per cell of the full-grid set used for structure metrics.
    #[serde(default = "default_probe_n_cell")]
    pub probe_n_cell: usize,
    #[serde(default)]
    pub ingest: Option<IngestConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_dataset() -> DatasetSpec {
    DatasetSpec::standard(Family::SpriteGlyph, 32, 20, 0)
}

fn default_probe_n_cell() -> usize {
    10
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    /// Defaults for `kind`, sized to finish within minutes on one core.
    pub fn desk_scale(kind: ExperimentKind) -> Self {
        let mut dataset = DatasetSpec::standard(Family::SpriteGlyph, 16, 12, 0);
        dataset.concept_spec.nuisance_dims = vec![NuisanceDim::new("position", 4)];
        let mut cfg = Self {
            experiment: kind,
            grid: Grid {
                seeds: (0..5).collect(),
                ..Grid::default()
            },
            dataset,
            extractor: ExtractorConfig {
                hidden_sizes: vec![256],
                feature_dim: 128,
                init_seed: 0,
            },
            train: TrainConfig {
                learning_rate: 1e-3,
                ..TrainConfig::default()
            },
            probe: TrainConfig::probe(),
            probe_n_cell: 10,
            ingest: None,
            output_dir: PathBuf::from("runs").join(kind.name()),
        };
        match kind {
            ExperimentKind::Prop1 => {
                cfg.grid.n = (3..=10).collect();
                cfg.grid.seeds = (0..10).collect();
            }
            ExperimentKind::DiversityN => cfg.grid.n = vec![3, 4, 6, 8],
            ExperimentKind::DiversityK => {
                cfg.grid.n = vec![6];
                cfg.grid.k = (1..=5).collect();
            }
            ExperimentKind::Scale => {
                cfg.grid.n = vec![3];
                cfg.grid.k = vec![1];
                cfg.dataset = DatasetSpec::standard(Family::SpriteGlyph, 16, 8, 0);
                cfg.grid.dataset_sizes = vec![8, 16, 32];
            }
            ExperimentKind::ThreePhase => {
                cfg.grid.n = vec![10];
                cfg.grid.k_over_n = vec![0.1, 0.25, 0.5, 0.75, 0.9];
            }
            ExperimentKind::IngestFactorize | ExperimentKind::IngestProbe => {
                cfg.grid.seeds = vec![0];
            }
        }
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical TOML serialisation.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.seeds.is_empty() {
            return Err(Error::Config("grid.seeds must not be empty".into()));
        }
        self.train.validate()?;
        self.probe.validate()?;
        let kind = self.experiment;
        if kind.trains() {
            self.dataset.validate()?;
            self.extractor.validate()?;
            if self.probe_n_cell < 2 {
                return Err(Error::Config("probe_n_cell must be >= 2".into()));
            }
        }
        if matches!(kind, ExperimentKind::IngestFactorize | ExperimentKind::IngestProbe)
            && self.ingest.is_none()
        {
            return Err(Error::Config(format!("{kind} needs an [ingest] section")));
        }
        if kind == ExperimentKind::Prop1 && self.grid.noise.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("noise levels must be >= 0".into()));
        }
        if kind == ExperimentKind::Prop1 && self.grid.n.iter().any(|&n| n < 3) {
            return Err(Error::Config("prop1 needs n >= 3".into()));
        }
        for (n, k) in self.training_points()? {
            build_nk_split(n, k)?;
            if k == n {
                return Err(Error::Config(format!(
                    "k = n = {n} leaves no unseen combinations"
                )));
            }
        }
        Ok(())
    }

    fn single_n(&self) -> Result<usize> {
        match self.grid.n.as_slice() {
            [n] => Ok(*n),
            other => Err(Error::Config(format!(
                "{} needs exactly one n, got {other:?}",
                self.experiment
            ))),
        }
    }

    /// The `(n, k)` points a training suite visits, in grid order.
    pub fn training_points(&self) -> Result<Vec<(usize, usize)>> {
        let points = match self.experiment {
            ExperimentKind::DiversityN => self
                .grid
                .n
                .iter()
                .map(|&n| (n, n.saturating_sub(1)))
                .collect(),
            ExperimentKind::DiversityK => {
                let n = self.single_n()?;
                self.grid.k.iter().map(|&k| (n, k)).collect()
            }
            ExperimentKind::Scale => {
                let n = self.single_n()?;
                match self.grid.k.as_slice() {
                    [k] => vec![(n, *k)],
                    other => {
                        return Err(Error::Config(format!(
                            "scale needs exactly one k, got {other:?}"
                        )))
                    }
                }
            }
            ExperimentKind::ThreePhase => {
                let n = self.single_n()?;
                if self.grid.k_over_n.is_empty() {
                    self.grid.k.iter().map(|&k| (n, k)).collect()
                } else {
                    self.grid
                        .k_over_n
                        .iter()
                        .map(|&f| (n, k_from_fraction(f, n)))
                        .collect()
                }
            }
            _ => Vec::new(),
        };
        if self.experiment.trains() && points.is_empty() {
            return Err(Error::Config(format!("{} grid is empty", self.experiment)));
        }
        Ok(points)
    }

    /// `n_cell` values of the scale sweep.
    pub fn scale_sizes(&self) -> Vec<usize> {
        if self.grid.dataset_sizes.is_empty() {
            [1, 2, 4].iter().map(|m| m * self.dataset.n_cell).collect()
        } else {
            self.grid.dataset_sizes.clone()
        }
    }
}

/// `k = round(f * n)` (halves away from zero), clamped to `1..=n`.
pub fn k_from_fraction(f: f64, n: usize) -> usize {
    ((f * n as f64).round().max(1.0) as usize).min(n)
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub dataset_size: usize,
    pub metric: String,
    pub value: f64,
    pub wall_time_s: f64,
}

/// Rows of one run plus the three-phase PCA coordinates, if any.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
    pub pca: Vec<PcaPoint>,
}

impl ExperimentResult {
    /// Values of `metric`, optionally restricted to one `(n, k)`.
    pub fn values(&self, metric: &str, nk: Option<(usize, usize)>) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.metric == metric && nk.is_none_or(|(n, k)| r.n == n && r.k == k))
            .map(|r| r.value)
            .collect()
    }

    /// Mean of `metric` over seeds at `(n, k, dataset_size)`.
    pub fn mean(&self, metric: &str, n: usize, k: usize, dataset_size: Option<usize>) -> f64 {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| {
                r.metric == metric
                    && r.n == n
                    && r.k == k
                    && dataset_size.is_none_or(|s| r.dataset_size == s)
            })
            .map(|r| r.value)
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    /// Seed-averaged statistics per `(n, k, dataset_size, metric)`, in first
    /// appearance order.
    pub fn aggregate(&self) -> Vec<Aggregate> {
        let mut out: Vec<Aggregate> = Vec::new();
        let mut sums: Vec<(f64, f64)> = Vec::new();
        for r in &self.rows {
            let pos = out.iter().position(|a| {
                a.n == r.n && a.k == r.k && a.dataset_size == r.dataset_size && a.metric == r.metric
            });
            let idx = pos.unwrap_or_else(|| {
                out.push(Aggregate {
                    n: r.n,
                    k: r.k,
                    dataset_size: r.dataset_size,
                    metric: r.metric.clone(),
                    mean: 0.0,
                    std: 0.0,
                    count: 0,
                });
                sums.push((0.0, 0.0));
                out.len() - 1
            });
            out[idx].count += 1;
            sums[idx].0 += r.value;
            sums[idx].1 += r.value * r.value;
        }
        for (a, (s, sq)) in out.iter_mut().zip(sums) {
            let c = a.count as f64;
            a.mean = s / c;
            a.std = (sq / c - a.mean * a.mean).max(0.0).sqrt();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub k: usize,
    pub dataset_size: usize,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Builds the rows of one grid point, stamping them with its wall time.
pub(crate) struct PointRows {
    experiment: &'static str,
    n: usize,
    k: usize,
    seed: u64,
    dataset_size: usize,
    values: Vec<(String, f64)>,
}

impl PointRows {
    pub(crate) fn new(kind: ExperimentKind, n: usize, k: usize, seed: u64, size: usize) -> Self {
        Self {
            experiment: kind.name(),
            n,
            k,
            seed,
            dataset_size: size,
            values: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, metric: impl Into<String>, value: f64) {
        self.values.push((metric.into(), value));
    }

    pub(crate) fn finish(self, wall_time_s: f64) -> Vec<ResultRow> {
        self.values
            .into_iter()
            .map(|(metric, value)| ResultRow {
                experiment: self.experiment.to_string(),
                n: self.n,
                k: self.k,
                seed: self.seed,
                dataset_size: self.dataset_size,
                metric,
                value,
                wall_time_s,
            })
            .collect()
    }
}

/// Run the suite named in `cfg.experiment`.
pub fn run(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentResult> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentKind::Prop1 => run_prop1(cfg, exec),
        ExperimentKind::DiversityN | ExperimentKind::DiversityK => run_diversity_sweeps(cfg, exec),
        ExperimentKind::Scale => run_scale_sweep(cfg, exec),
        ExperimentKind::ThreePhase => run_three_phase(cfg, exec),
        ExperimentKind::IngestFactorize => run_ingest_factorize(cfg, exec),
        ExperimentKind::IngestProbe => run_ingest_probe(cfg, exec),
    }
}

pub fn write_results_csv(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(RESULTS_HEADER)?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.n.to_string(),
            r.k.to_string(),
            r.seed.to_string(),
            r.dataset_size.to_string(),
            r.metric.clone(),
            r.value.to_string(),
            format!("{:.6}", r.wall_time_s),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != RESULTS_HEADER {
        return Err(Error::InvalidInput(format!(
            "unexpected results header {header:?}"
        )));
    }
    r.deserialize().map(|row| Ok(row?)).collect()
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        e.into()
    }
}

/// Provenance written next to every result set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: ExperimentKind,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub single_thread: bool,
    pub versions: Versions,
    /// The full configuration, re-loadable with [`ExperimentConfig::from_toml`].
    pub config_toml: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub compgen: String,
    pub parallel_feature: bool,
    pub results_format: u32,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig, exec: Execution) -> Result<Self> {
        Ok(Self {
            experiment: cfg.experiment,
            config_hash: cfg.hash()?,
            seeds: cfg.grid.seeds.clone(),
            single_thread: !exec.is_parallel(),
            versions: Versions {
                compgen: env!("CARGO_PKG_VERSION").to_string(),
                parallel_feature: cfg!(feature = "parallel"),
                results_format: 1,
            },
            config_toml: cfg.to_toml()?,
        })
    }

    pub fn config(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml(&self.config_toml)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: ExperimentKind,
    pub rows: usize,
    pub total_wall_time_s: f64,
    pub aggregates: Vec<Aggregate>,
}

/// Paths of the files written by [`write_outputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFiles {
    pub results: PathBuf,
    pub summary: PathBuf,
    pub manifest: PathBuf,
    pub pca: Option<PathBuf>,
}

/// Write `results.csv`, `summary.json`, `manifest.json` (and `pca.csv` when
/// present) into `dir`.
pub fn write_outputs(
    dir: impl AsRef<Path>,
    cfg: &ExperimentConfig,
    exec: Execution,
    result: &ExperimentResult,
) -> Result<OutputFiles> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = OutputFiles {
        results: dir.join("results.csv"),
        summary: dir.join("summary.json"),
        manifest: dir.join("manifest.json"),
        pca: (!result.pca.is_empty()).then(|| dir.join("pca.csv")),
    };
    write_results_csv(&files.results, &result.rows)?;
    let summary = Summary {
        experiment: cfg.experiment,
        rows: result.rows.len(),
        total_wall_time_s: result.rows.iter().map(|r| r.wall_time_s).sum::<f64>()
            / metrics_per_point(&result.rows) as f64,
        aggregates: result.aggregate(),
    };
    write_json(&files.summary, &summary)?;
    write_json(&files.manifest, &Manifest::new(cfg, exec)?)?;
    if let Some(p) = &files.pca {
        pca::write_csv(p, &result.pca)?;
    }
    Ok(files)
}

fn metrics_per_point(rows: &[ResultRow]) -> usize {
    let Some(first) = rows.first() else { return 1 };
    rows.iter()
        .take_while(|r| {
            r.n == first.n
                && r.k == first.k
                && r.seed == first.seed
                && r.dataset_size == first.dataset_size
        })
        .count()
        .max(1)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
