//! Minimal compositional learning on synthetic factored embeddings.

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ExperimentConfig, ExperimentKind, ExperimentResult, PointRows};
use crate::concept_space::build_nk_split;
use crate::error::Result;
use crate::factorization::{
    recover_from_split, ClassifyRule, Classifier, FactoredModel, JointEmbedding, JointSet,
};
use crate::par::{self, Execution};

/// Outcome of one `(n, seed, noise)` point.
#[derive(Debug, Clone)]
pub struct Prop1Point {
    pub n: usize,
    pub seed: u64,
    pub noise: f64,
    /// Fraction of unseen combinations classified exactly.
    pub accuracy: f64,
    /// Largest absolute deviation of the recovered mean and concept vectors
    /// from the centered ground truth.
    pub max_recovery_error: f64,
    pub design_rank: usize,
    pub residual: f64,
    pub truth: FactoredModel,
    pub recovered: FactoredModel,
}

fn gaussian(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || StandardNormal.sample(rng))
}

/// Random centered ground truth in `d = 2n + 5` dimensions.
pub fn random_truth(n: usize, seed: u64) -> FactoredModel {
    let d = 2 * n + 5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((n as u64) << 40));
    let center = |mut u: Array2<f64>| {
        let m = u.mean_axis(Axis(0)).expect("n >= 1");
        u -= &m;
        u
    };
    let global_mean: Array1<f64> = gaussian(&mut rng, (1, d)).row(0).to_owned();
    let u1 = center(gaussian(&mut rng, (n, d)));
    let u2 = center(gaussian(&mut rng, (n, d)));
    FactoredModel {
        global_mean,
        u1,
        u2,
        design_rank: 2 * n - 1,
        residual: 0.0,
    }
}

/// Recover from the cyclic `k = 2` joints (plus Gaussian noise of scale
/// `noise`) and classify every unseen combination's exact embedding.
pub fn prop1_point(n: usize, seed: u64, noise: f64) -> Result<Prop1Point> {
    let truth = random_truth(n, seed);
    let split = build_nk_split(n, 2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ n as u64);
    let d = truth.dim();
    let cells: Vec<Array1<f64>> = split
        .train_combos
        .iter()
        .map(|&(i, j)| {
            let mut v = truth.reconstruct(i, j)?;
            if noise > 0.0 {
                v.scaled_add(noise, &gaussian(&mut rng, (1, d)).row(0));
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let mut train_mean = Array1::zeros(d);
    for c in &cells {
        train_mean += c;
    }
    train_mean /= cells.len() as f64;
    let joints = JointSet {
        joints: split
            .train_combos
            .iter()
            .zip(&cells)
            .map(|(&pair, c)| JointEmbedding {
                pair,
                vector: c - &train_mean,
                count: 1,
            })
            .collect(),
        train_mean,
    };
    let recovered = recover_from_split(&joints, n, 2)?;

    let classifier = Classifier::new(&recovered, ClassifyRule::NearestReconstruction)?;
    let mut hits = 0usize;
    for &(i, j) in &split.test_combos {
        let x = truth.reconstruct(i, j)?;
        hits += usize::from(classifier.classify(x.view())? == (i, j));
    }
    let max_abs = |a: &Array2<f64>, b: &Array2<f64>| {
        (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()))
    };
    let mean_err = (&truth.global_mean - &recovered.global_mean)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let max_recovery_error = mean_err
        .max(max_abs(&truth.u1, &recovered.u1))
        .max(max_abs(&truth.u2, &recovered.u2));
    Ok(Prop1Point {
        n,
        seed,
        noise,
        accuracy: hits as f64 / split.test_combos.len() as f64,
        max_recovery_error,
        design_rank: recovered.design_rank,
        residual: recovered.residual,
        truth,
        recovered,
    })
}

/// Rows per `(n, seed, noise)`: `zero_shot_acc`, `max_recovery_error`,
/// `design_rank`, `residual`. The noise level is appended to the metric
/// name when it is non-zero.
pub fn run_prop1(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentResult> {
    let mut points = Vec::new();
    for &n in &cfg.grid.n {
        for &seed in &cfg.grid.seeds {
            for &noise in &cfg.grid.noise {
                points.push((n, seed, noise));
            }
        }
    }
    let rows = par::map(exec, points, |(n, seed, noise)| -> Result<_> {
        let t0 = Instant::now();
        let p = prop1_point(n, seed, noise)?;
        let suffix = if noise > 0.0 {
            format!("@noise={noise}")
        } else {
            String::new()
        };
        let mut out = PointRows::new(ExperimentKind::Prop1, n, 2, seed, 2 * n);
        out.push(format!("zero_shot_acc{suffix}"), p.accuracy);
        out.push(format!("max_recovery_error{suffix}"), p.max_recovery_error);
        out.push(format!("design_rank{suffix}"), p.design_rank as f64);
        out.push(format!("residual{suffix}"), p.residual);
        Ok(out.finish(t0.elapsed().as_secs_f64()))
    });
    let mut result = ExperimentResult::default();
    for r in rows {
        result.rows.extend(r?);
    }
    Ok(result)
}
