use std::fmt::Debug;

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Floating-point element type the network can run in (`f32` or `f64`).
pub trait Scalar:
    LinalgScalar + Float + FromPrimitive + ScalarOperand + Debug + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: LinalgScalar + Float + FromPrimitive + ScalarOperand + Debug + Send + Sync + 'static
{
}

fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("finite f64 converts")
}

/// Fully connected layer `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    fn uniform(fan_in: usize, fan_out: usize, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let w = Array2::from_shape_simple_fn((fan_in, fan_out), || {
            cast(rng.random_range(-bound..=bound))
        });
        Self {
            w,
            b: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        x.dot(&self.w) + &self.b
    }
}

/// Shared ReLU trunk followed by two linear classification heads.
///
/// An empty trunk makes the heads act directly on the input (linear probe).
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub trunk: Vec<Dense<T>>,
    pub heads: [Dense<T>; 2],
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Post-activation output of every trunk layer; `acts[0]` is the input.
    pub acts: Vec<Array2<T>>,
    pub logits: [Array2<T>; 2],
}

impl<T> ForwardCache<T> {
    pub fn features(&self) -> &Array2<T> {
        self.acts.last().expect("input is always cached")
    }
}

impl<T: Scalar> Network<T> {
    /// He-uniform trunk weights (`sqrt(6 / fan_in)`), `1 / sqrt(fan_in)` head
    /// weights, zero biases. Draws happen in `f64` so `f32` and `f64`
    /// networks built from the same seed agree up to rounding.
    pub fn init(input_dim: usize, trunk_widths: &[usize], n: [usize; 2], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trunk = Vec::with_capacity(trunk_widths.len());
        let mut fan_in = input_dim;
        for &w in trunk_widths {
            let bound = (6.0 / fan_in as f64).sqrt();
            trunk.push(Dense::uniform(fan_in, w, bound, &mut rng));
            fan_in = w;
        }
        let bound = 1.0 / (fan_in as f64).sqrt();
        let h1 = Dense::uniform(fan_in, n[0], bound, &mut rng);
        let h2 = Dense::uniform(fan_in, n[1], bound, &mut rng);
        Self {
            trunk,
            heads: [h1, h2],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            trunk: self
                .trunk
                .iter()
                .map(|l| Dense::zeros(l.fan_in(), l.fan_out()))
                .collect(),
            heads: [
                Dense::zeros(self.heads[0].fan_in(), self.heads[0].fan_out()),
                Dense::zeros(self.heads[1].fan_in(), self.heads[1].fan_out()),
            ],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk
            .first()
            .map_or_else(|| self.heads[0].fan_in(), Dense::fan_in)
    }

    pub fn feature_dim(&self) -> usize {
        self.heads[0].fan_in()
    }

    pub fn n_classes(&self) -> [usize; 2] {
        [self.heads[0].fan_out(), self.heads[1].fan_out()]
    }

    /// Convert every parameter to another element type.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let conv = |d: &Dense<T>| Dense {
            w: d.w.mapv(|v| cast::<U>(v.to_f64().expect("finite"))),
            b: d.b.mapv(|v| cast::<U>(v.to_f64().expect("finite"))),
        };
        Network {
            trunk: self.trunk.iter().map(conv).collect(),
            heads: [conv(&self.heads[0]), conv(&self.heads[1])],
        }
    }

    /// Parameter arrays in declaration order: each trunk layer's `W` then
    /// `b`, then head 1, then head 2.
    pub fn param_slices(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(2 * self.trunk.len() + 4);
        for l in self.trunk.iter().chain(self.heads.iter()) {
            out.push(l.w.as_slice().expect("standard layout"));
            out.push(l.b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(2 * self.trunk.len() + 4);
        for l in self.trunk.iter_mut().chain(self.heads.iter_mut()) {
            out.push(l.w.as_slice_mut().expect("standard layout"));
            out.push(l.b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Trunk output (the representation the heads read).
    pub fn features(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        let mut h = x.to_owned();
        for layer in &self.trunk {
            h = layer.forward(h.view()).mapv(relu);
        }
        h
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> ForwardCache<T> {
        let mut acts = Vec::with_capacity(self.trunk.len() + 1);
        acts.push(x.to_owned());
        for layer in &self.trunk {
            let h = layer
                .forward(acts.last().expect("non-empty").view())
                .mapv(relu);
            acts.push(h);
        }
        let feats = acts.last().expect("non-empty").view();
        let logits = [self.heads[0].forward(feats), self.heads[1].forward(feats)];
        ForwardCache { acts, logits }
    }

    /// Sum over both heads of the batch-mean cross-entropy.
    pub fn loss(&self, cache: &ForwardCache<T>, labels: [&[usize]; 2]) -> T {
        let mut total = T::zero();
        for h in 0..2 {
            total = total + cross_entropy(&cache.logits[h], labels[h]);
        }
        total
    }

    /// Gradient of [`Network::loss`] with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache<T>, labels: [&[usize]; 2]) -> Network<T> {
        let batch = cache.acts[0].nrows();
        let inv = T::one() / cast::<T>(batch as f64);
        let feats = cache.features();
        let mut grads = self.zeros_like();
        let mut dfeat = Array2::<T>::zeros(feats.raw_dim());
        for h in 0..2 {
            let mut dlogits = softmax(&cache.logits[h]);
            for (r, &y) in labels[h].iter().enumerate() {
                dlogits[[r, y]] = dlogits[[r, y]] - T::one();
            }
            dlogits.mapv_inplace(|v| v * inv);
            grads.heads[h].w = feats.t().dot(&dlogits);
            grads.heads[h].b = dlogits.sum_axis(Axis(0));
            dfeat = dfeat + dlogits.dot(&self.heads[h].w.t());
        }
        let mut dout = dfeat;
        for (idx, layer) in self.trunk.iter().enumerate().rev() {
            let out = &cache.acts[idx + 1];
            ndarray::Zip::from(&mut dout).and(out).for_each(|d, &o| {
                if o <= T::zero() {
                    *d = T::zero();
                }
            });
            let input = &cache.acts[idx];
            grads.trunk[idx].w = input.t().dot(&dout);
            grads.trunk[idx].b = dout.sum_axis(Axis(0));
            if idx > 0 {
                dout = dout.dot(&layer.w.t());
            }
        }
        grads
    }

    /// Predicted class per head for each row of `x`.
    pub fn predict(&self, x: ArrayView2<'_, T>) -> [Vec<usize>; 2] {
        let feats = self.features(x);
        [
            argmax_rows(&self.heads[0].forward(feats.view())),
            argmax_rows(&self.heads[1].forward(feats.view())),
        ]
    }
}

fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Row-wise softmax, shifted by the row max for stability.
pub fn softmax<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Batch-mean cross-entropy of integer labels.
pub fn cross_entropy<T: Scalar>(logits: &Array2<T>, labels: &[usize]) -> T {
    let mut total = T::zero();
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).fold(T::zero(), |a, b| a + b).ln() + max;
        total = total + (lse - row[y]);
    }
    total / cast::<T>(labels.len().max(1) as f64)
}

pub fn argmax_rows<T: Scalar>(m: &Array2<T>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
