//! From-scratch training of a feature extractor with two linear heads.
//!
//! The extractor is an MLP over flattened pixels. Loss is the sum of both
//! heads' cross-entropies, optimized with Adam on shuffled mini-batches.
//! With [`Selection::Oracle`] the returned weights are those of the epoch
//! with the best mean held-out accuracy, evaluated after every epoch.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::nn::{checkpoint, Adam, Network};
use crate::synth_data::LabeledImageSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorConfig {
    pub hidden_sizes: Vec<usize>,
    pub feature_dim: usize,
    pub init_seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![256, 256],
            feature_dim: 64,
            init_seed: 0,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden_sizes.contains(&0) {
            return Err(Error::InvalidParameter("layer widths must be >= 1".into()));
        }
        Ok(())
    }

    /// Trunk widths: hidden layers followed by the feature layer.
    pub fn trunk_widths(&self) -> Vec<usize> {
        let mut w = self.hidden_sizes.clone();
        w.push(self.feature_dim);
        w
    }

    pub fn build<T: crate::nn::Scalar>(&self, input_dim: usize, n: usize) -> Network<T> {
        Network::init(input_dim, &self.trunk_widths(), [n, n], self.init_seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Keep the epoch with the best mean held-out accuracy.
    #[default]
    Oracle,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub selection: Selection,
    /// Seed of the per-epoch shuffling stream.
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 100,
            batch_size: 64,
            selection: Selection::Oracle,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    /// Probe defaults: same schedule, learning rate `1e-3`.
    pub fn probe() -> Self {
        Self {
            learning_rate: 1e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Metrics recorded after one epoch (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub id_acc: [f64; 2],
    /// Held-out accuracy; absent when training had no evaluation set.
    pub ood_acc: Option<[f64; 2]>,
}

impl EpochRecord {
    pub fn id_mean(&self) -> f64 {
        0.5 * (self.id_acc[0] + self.id_acc[1])
    }

    pub fn ood_mean(&self) -> f64 {
        self.ood_acc.map_or(f64::NAN, |a| 0.5 * (a[0] + a[1]))
    }
}

/// Inputs with two label vectors, borrowed.
#[derive(Debug, Clone, Copy)]
pub struct Labeled<'a> {
    pub x: ArrayView2<'a, f32>,
    pub y: [&'a [usize]; 2],
}

impl<'a> Labeled<'a> {
    pub fn new(x: ArrayView2<'a, f32>, y1: &'a [usize], y2: &'a [usize]) -> Self {
        Self { x, y: [y1, y2] }
    }

    pub fn from_set(set: &'a LabeledImageSet) -> Self {
        Self::new(set.pixels.view(), &set.labels_c1, &set.labels_c2)
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }
}

/// Per-head accuracy of `net` on `data`.
pub fn accuracy(net: &Network<f32>, data: Labeled<'_>) -> [f64; 2] {
    if data.is_empty() {
        return [0.0, 0.0];
    }
    let pred = net.predict(data.x);
    let acc = |h: usize| {
        let hits = pred[h].iter().zip(data.y[h]).filter(|(p, y)| p == y).count();
        hits as f64 / data.len() as f64
    };
    [acc(0), acc(1)]
}

/// Result of [`fit`].
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub network: Network<f32>,
    /// 1-based epoch of the returned weights; 0 when no epoch ran.
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Train `net` on `train`, evaluating on `eval` after every epoch.
///
/// Oracle selection needs `eval`; without it the last epoch is kept.
pub fn fit<'a>(
    mut net: Network<f32>,
    train: Labeled<'a>,
    eval: Option<Labeled<'a>>,
    tc: &TrainConfig,
) -> Result<FitOutcome> {
    tc.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    if train.x.ncols() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            found: train.x.ncols(),
        });
    }
    let classes = net.n_classes();
    let checked = [(train, "train"), (eval.unwrap_or(train), "eval")];
    for (labels, name) in checked {
        for h in 0..2 {
            if let Some(&bad) = labels.y[h].iter().find(|&&y| y >= classes[h]) {
                return Err(Error::InvalidInput(format!(
                    "{name} label {bad} out of range for head {} with {} classes",
                    h + 1,
                    classes[h]
                )));
            }
        }
    }
    if let Some(e) = &eval {
        if e.x.ncols() != net.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: net.input_dim(),
                found: e.x.ncols(),
            });
        }
    }

    let mut opt = Adam::new(&net, tc.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.shuffle_seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(tc.epochs);
    let oracle = tc.selection == Selection::Oracle && eval.is_some();
    let mut best: Option<(f64, usize, Network<f32>)> = None;

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(tc.batch_size) {
            let xb = train.x.select(Axis(0), chunk);
            let y1: Vec<usize> = chunk.iter().map(|&r| train.y[0][r]).collect();
            let y2: Vec<usize> = chunk.iter().map(|&r| train.y[1][r]).collect();
            let cache = net.forward(xb.view());
            let loss = net.loss(&cache, [&y1, &y2]);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            loss_sum += f64::from(loss) * chunk.len() as f64;
            let grads = net.backward(&cache, [&y1, &y2]);
            opt.step(&mut net, &grads);
        }
        let record = EpochRecord {
            epoch,
            loss: loss_sum / train.len() as f64,
            id_acc: accuracy(&net, train),
            ood_acc: eval.map(|e| accuracy(&net, e)),
        };
        if oracle && best.as_ref().is_none_or(|(score, _, _)| record.ood_mean() >= *score) {
            best = Some((record.ood_mean(), epoch, net.clone()));
        }
        history.push(record);
    }

    let (network, best_epoch) = match best {
        Some((_, epoch, weights)) => (weights, epoch),
        None => (net, tc.epochs),
    };
    Ok(FitOutcome {
        network,
        best_epoch,
        history,
    })
}

/// A trained extractor plus its heads and training record.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub network: Network<f32>,
    pub extractor: ExtractorConfig,
    pub input_dim: usize,
    pub n: usize,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    extractor: ExtractorConfig,
    input_dim: usize,
    n: usize,
    best_epoch: usize,
    history: Vec<EpochRecord>,
}

impl TrainedModel {
    /// The history entry of the returned weights.
    pub fn selected(&self) -> Option<&EpochRecord> {
        self.history.get(self.best_epoch.checked_sub(1)?)
    }

    /// Features (trunk output) for raw inputs.
    pub fn embed_matrix(&self, x: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
        if x.ncols() != self.input_dim {
            return Err(Error::InvalidInput(format!(
                "inputs have {} columns, model expects {}",
                x.ncols(),
                self.input_dim
            )));
        }
        Ok(self.network.features(x))
    }

    /// Writes `weights.cgwt` and `model.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        checkpoint::save(dir.join("weights.cgwt"), &self.network)?;
        let meta = ModelMeta {
            extractor: self.extractor.clone(),
            input_dim: self.input_dim,
            n: self.n,
            best_epoch: self.best_epoch,
            history: self.history.clone(),
        };
        let path = dir.join("model.json");
        fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("model.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: ModelMeta = serde_json::from_str(&text)?;
        let mut network = meta.extractor.build::<f32>(meta.input_dim, meta.n);
        checkpoint::load_into(dir.join("weights.cgwt"), &mut network)?;
        Ok(Self {
            network,
            extractor: meta.extractor,
            input_dim: meta.input_dim,
            n: meta.n,
            best_epoch: meta.best_epoch,
            history: meta.history,
        })
    }
}

/// Train an extractor on `train_set`, using `test_set` for per-epoch
/// held-out evaluation (and checkpoint choice under oracle selection).
pub fn train(
    train_set: &LabeledImageSet,
    test_set: &LabeledImageSet,
    ec: &ExtractorConfig,
    tc: &TrainConfig,
) -> Result<TrainedModel> {
    ec.validate()?;
    if train_set.n() != test_set.n() {
        return Err(Error::InvalidInput(format!(
            "train set has n = {}, test set n = {}",
            train_set.n(),
            test_set.n()
        )));
    }
    if train_set.pixels.ncols() != test_set.pixels.ncols() {
        return Err(Error::DimensionMismatch {
            expected: train_set.pixels.ncols(),
            found: test_set.pixels.ncols(),
        });
    }
    let n = train_set.n();
    let input_dim = train_set.pixels.ncols();
    let net = ec.build::<f32>(input_dim, n);
    let eval = (!test_set.is_empty()).then(|| Labeled::from_set(test_set));
    let out = fit(net, Labeled::from_set(train_set), eval, tc)?;
    Ok(TrainedModel {
        network: out.network,
        extractor: ec.clone(),
        input_dim,
        n,
        best_epoch: out.best_epoch,
        history: out.history,
    })
}

/// Extractor features for every image in `set`, as an embedding table.
pub fn embed(model: &TrainedModel, set: &LabeledImageSet) -> Result<EmbeddingTable> {
    let feats = model.embed_matrix(set.pixels.view())?;
    EmbeddingTable::new(
        feats.mapv(f64::from),
        set.labels_c1.clone(),
        set.labels_c2.clone(),
        set.n(),
    )
}

/// Largest relative error between backprop and central differences over a
/// random subset of at most `max_params` parameters.
///
/// Relative error is `|a - c| / max(|a|, |c|, 1e-8)`.
pub fn gradient_check_network(
    net: &Network<f64>,
    x: ArrayView2<'_, f64>,
    labels: [&[usize]; 2],
    max_params: usize,
    seed: u64,
) -> f64 {
    const STEP: f64 = 1e-5;
    let cache = net.forward(x);
    let grads = net.backward(&cache, labels);
    let analytic: Vec<f64> = grads
        .param_slices()
        .iter()
        .flat_map(|s| s.iter().copied())
        .collect();

    let total = analytic.len();
    let mut picks: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if total > max_params {
        picks.shuffle(&mut rng);
        picks.truncate(max_params);
        picks.sort_unstable();
    }
    // Always include at least one parameter from every array.
    let mut offset = 0;
    for s in net.param_slices() {
        if !s.is_empty() {
            picks.push(offset + rng.random_range(0..s.len()));
        }
        offset += s.len();
    }

    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for flat in picks {
        let (array, idx) = locate(net, flat);
        let original = probe.param_slices()[array][idx];
        probe.param_slices_mut()[array][idx] = original + STEP;
        let plus = probe.loss(&probe.forward(x), labels);
        probe.param_slices_mut()[array][idx] = original - STEP;
        let minus = probe.loss(&probe.forward(x), labels);
        probe.param_slices_mut()[array][idx] = original;
        let numeric = (plus - minus) / (2.0 * STEP);
        let a = analytic[flat];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

fn locate(net: &Network<f64>, mut flat: usize) -> (usize, usize) {
    for (i, s) in net.param_slices().iter().enumerate() {
        if flat < s.len() {
            return (i, flat);
        }
        flat -= s.len();
    }
    panic!("parameter index out of range");
}

/// Gradient check of the extractor described by `ec` (plus heads) in double
/// precision on a batch of at most 8 images.
pub fn gradient_check(ec: &ExtractorConfig, probe_batch: &LabeledImageSet) -> Result<f64> {
    ec.validate()?;
    if probe_batch.is_empty() || probe_batch.len() > 8 {
        return Err(Error::InvalidInput(format!(
            "gradient check expects 1..=8 samples, got {}",
            probe_batch.len()
        )));
    }
    let net = ec.build::<f64>(probe_batch.pixels.ncols(), probe_batch.n());
    let x = probe_batch.pixels.mapv(f64::from);
    Ok(gradient_check_network(
        &net,
        x.view(),
        [&probe_batch.labels_c1, &probe_batch.labels_c2],
        400,
        ec.init_seed ^ 0x6752_4144,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concept_space::{build_nk_split, full_grid};
    use crate::par::Execution;
    use crate::synth_data::{generate, DatasetSpec, Family, SplitTag};

    fn tiny_spec(n_cell: usize) -> DatasetSpec {
        DatasetSpec::standard(Family::SpriteGlyph, 8, n_cell, 3)
    }

    fn small_ec() -> ExtractorConfig {
        ExtractorConfig {
            hidden_sizes: vec![32],
            feature_dim: 16,
            init_seed: 4,
        }
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let set = generate(&tiny_spec(2), 2, &full_grid(2), SplitTag::Train, Execution::Sequential)
            .unwrap();
        let ec = small_ec();
        let tc = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            selection: Selection::Last,
            ..TrainConfig::default()
        };
        let model = train(&set, &set, &ec, &tc).unwrap();
        assert_eq!(model.network, ec.build::<f32>(set.pixels.ncols(), 2));
        assert_eq!(model.history.len(), 1);
    }

    #[test]
    fn oracle_picks_best_history_entry() {
        let split = build_nk_split(3, 1).unwrap();
        let spec = tiny_spec(6);
        let tr = generate(&spec, 3, &split.train_combos, SplitTag::Train, Execution::Sequential)
            .unwrap();
        let te = generate(&spec, 3, &split.test_combos, SplitTag::Test, Execution::Sequential)
            .unwrap();
        let tc = TrainConfig {
            learning_rate: 3e-3,
            epochs: 12,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let model = train(&tr, &te, &small_ec(), &tc).unwrap();
        assert_eq!(model.history.len(), 12);
        let best = model
            .history
            .iter()
            .map(EpochRecord::ood_mean)
            .fold(f64::NEG_INFINITY, f64::max);
        let sel = model.selected().unwrap();
        assert_eq!(sel.ood_mean(), best);
        // Selected weights reproduce the recorded accuracy.
        assert_eq!(Some(accuracy(&model.network, Labeled::from_set(&te))), sel.ood_acc);

        let last = train(
            &tr,
            &te,
            &small_ec(),
            &TrainConfig {
                selection: Selection::Last,
                ..tc
            },
        )
        .unwrap();
        assert!(sel.ood_mean() >= last.history.last().unwrap().ood_mean());
        assert_eq!(last.best_epoch, 12);
    }

    #[test]
    fn embed_is_deterministic_and_shape_checked() {
        let set = generate(&tiny_spec(2), 2, &full_grid(2), SplitTag::Train, Execution::Sequential)
            .unwrap();
        let tc = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let model = train(&set, &set, &small_ec(), &tc).unwrap();
        let a = embed(&model, &set).unwrap();
        assert_eq!(a.dim(), 16);
        assert_eq!(a, embed(&model, &set).unwrap());
        for r in 0..set.len() {
            let one = model
                .embed_matrix(set.pixels.slice(ndarray::s![r..r + 1, ..]))
                .unwrap();
            for (p, q) in one.row(0).iter().zip(a.row(r)) {
                assert!((f64::from(*p) - q).abs() < 1e-6);
            }
        }
        assert!(matches!(
            model.embed_matrix(Array2::zeros((1, 5)).view()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let set = generate(&tiny_spec(2), 2, &full_grid(2), SplitTag::Train, Execution::Sequential)
            .unwrap();
        let tc = TrainConfig {
            learning_rate: 1e37,
            epochs: 3,
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&set, &set, &small_ec(), &tc),
            Err(Error::TrainingDiverged { epoch: 1 })
        ));
    }

    #[test]
    fn gradient_check_small_network() {
        let set = generate(&tiny_spec(1), 2, &full_grid(2), SplitTag::Train, Execution::Sequential)
            .unwrap();
        let err = gradient_check(&small_ec(), &set).unwrap();
        assert!(err <= 1e-4, "relative error {err}");
        let big = generate(&tiny_spec(3), 2, &full_grid(2), SplitTag::Train, Execution::Sequential)
            .unwrap();
        assert!(gradient_check(&small_ec(), &big).is_err());
    }

    #[test]
    fn save_and_load_model() {
        let set = generate(&tiny_spec(2), 2, &full_grid(2), SplitTag::Train, Execution::Sequential)
            .unwrap();
        let tc = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let model = train(&set, &set, &small_ec(), &tc).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let back = TrainedModel::load(dir.path()).unwrap();
        assert_eq!(back.network, model.network);
        assert_eq!(back.best_epoch, model.best_epoch);
        assert_eq!(back.history, model.history);
    }
}
