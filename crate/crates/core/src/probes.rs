//! Linear and MLP probes on frozen embeddings.
//!
//! MLP probes share their hidden layers between the two concept heads, the
//! same layout as the from-scratch extractor.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::trainer::{accuracy, fit, EpochRecord, Labeled, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeArch {
    Linear,
    Mlp512,
    Mlp512x512,
}

impl ProbeArch {
    pub const ALL: [ProbeArch; 3] = [ProbeArch::Linear, ProbeArch::Mlp512, ProbeArch::Mlp512x512];

    pub fn hidden_sizes(self) -> &'static [usize] {
        match self {
            ProbeArch::Linear => &[],
            ProbeArch::Mlp512 => &[512],
            ProbeArch::Mlp512x512 => &[512, 512],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProbeArch::Linear => "linear",
            ProbeArch::Mlp512 => "mlp_512",
            ProbeArch::Mlp512x512 => "mlp_512_512",
        }
    }
}

impl std::str::FromStr for ProbeArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProbeArch::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown probe architecture `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub arch: ProbeArch,
    #[serde(default = "TrainConfig::probe")]
    pub train_config: TrainConfig,
    #[serde(default)]
    pub init_seed: u64,
}

impl ProbeSpec {
    pub fn new(arch: ProbeArch) -> Self {
        Self {
            arch,
            train_config: TrainConfig::probe(),
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Probe {
    pub arch: ProbeArch,
    pub network: Network<f32>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Accuracy of the returned weights on the probe's own training table.
    pub train_acc: [f64; 2],
}

struct F32Table {
    x: Array2<f32>,
}

impl F32Table {
    fn of(t: &EmbeddingTable) -> Self {
        Self {
            x: t.matrix.mapv(|v| v as f32),
        }
    }

    fn labeled<'a>(&'a self, t: &'a EmbeddingTable) -> Labeled<'a> {
        Labeled::new(self.x.view(), &t.labels_c1, &t.labels_c2)
    }
}

fn fit_inner(
    train: &EmbeddingTable,
    heldout: Option<&EmbeddingTable>,
    spec: &ProbeSpec,
) -> Result<Probe> {
    if train.rows() == 0 {
        return Err(Error::InvalidInput("probe training table is empty".into()));
    }
    if let Some(h) = heldout {
        if h.n != train.n || h.dim() != train.dim() {
            return Err(Error::InvalidInput(format!(
                "label/feature space mismatch: train (n = {}, d = {}), held-out (n = {}, d = {})",
                train.n,
                train.dim(),
                h.n,
                h.dim()
            )));
        }
    }
    let net = Network::init(
        train.dim(),
        spec.arch.hidden_sizes(),
        [train.n, train.n],
        spec.init_seed,
    );
    let tx = F32Table::of(train);
    let hx = heldout.map(F32Table::of);
    let eval = heldout.zip(hx.as_ref()).map(|(t, x)| x.labeled(t));
    let out = fit(net, tx.labeled(train), eval, &spec.train_config)?;
    let train_acc = accuracy(&out.network, tx.labeled(train));
    Ok(Probe {
        arch: spec.arch,
        network: out.network,
        best_epoch: out.best_epoch,
        history: out.history,
        train_acc,
    })
}

/// Fit a probe on `train`, keeping the last epoch.
pub fn fit_probe(train: &EmbeddingTable, spec: &ProbeSpec) -> Result<Probe> {
    fit_inner(train, None, spec)
}

/// Fit a probe on `train` with per-epoch evaluation on `heldout`; oracle
/// selection (the spec's default) picks the best held-out epoch.
pub fn fit_probe_with_eval(
    train: &EmbeddingTable,
    heldout: &EmbeddingTable,
    spec: &ProbeSpec,
) -> Result<Probe> {
    fit_inner(train, Some(heldout), spec)
}

/// Per-concept accuracy of `probe` on `table`.
pub fn eval_probe(probe: &Probe, table: &EmbeddingTable) -> Result<[f64; 2]> {
    if table.dim() != probe.network.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: probe.network.input_dim(),
            found: table.dim(),
        });
    }
    if table.n > probe.network.n_classes()[0] {
        return Err(Error::InvalidInput(format!(
            "table has n = {}, probe was fit for {}",
            table.n,
            probe.network.n_classes()[0]
        )));
    }
    let x = F32Table::of(table);
    Ok(accuracy(&probe.network, x.labeled(table)))
}

/// Outcome of fitting every architecture and keeping the best.
#[derive(Debug, Clone)]
pub struct BestProbe {
    pub probe: Probe,
    pub heldout_acc: [f64; 2],
    /// Mean held-out accuracy of each architecture tried, in order.
    pub per_arch: Vec<(ProbeArch, f64)>,
}

/// Fit each architecture in `archs` and keep the one with the best mean
/// held-out accuracy (earliest wins ties).
pub fn best_probe(
    train: &EmbeddingTable,
    heldout: &EmbeddingTable,
    archs: &[ProbeArch],
    tc: &TrainConfig,
    init_seed: u64,
) -> Result<BestProbe> {
    let mut best: Option<(Probe, [f64; 2])> = None;
    let mut per_arch = Vec::with_capacity(archs.len());
    for &arch in archs {
        let spec = ProbeSpec {
            arch,
            train_config: tc.clone(),
            init_seed,
        };
        let probe = fit_probe_with_eval(train, heldout, &spec)?;
        let acc = eval_probe(&probe, heldout)?;
        let mean = 0.5 * (acc[0] + acc[1]);
        per_arch.push((arch, mean));
        if best
            .as_ref()
            .is_none_or(|(_, b)| mean > 0.5 * (b[0] + b[1]))
        {
            best = Some((probe, acc));
        }
    }
    let (probe, heldout_acc) =
        best.ok_or_else(|| Error::InvalidParameter("no probe architectures given".into()))?;
    Ok(BestProbe {
        probe,
        heldout_acc,
        per_arch,
    })
}

/// Divide every value by the maximum so the best entry becomes exactly 1.
pub fn normalize_by_max(values: &[f64]) -> Vec<f64> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return values.to_vec();
    }
    values.iter().map(|v| v / max).collect()
}
