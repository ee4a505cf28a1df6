#![allow(dead_code)]

use compgen::EmbeddingTable;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Raw (uncentered) generative parameters: `x = base + a[i] + b[j] + noise`.
pub struct Truth {
    pub base: Array1<f64>,
    pub a: Array2<f64>,
    pub b: Array2<f64>,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

pub fn truth(n: usize, d: usize, seed: u64) -> Truth {
    let mut r = rng(seed);
    Truth {
        base: gauss(&mut r, 1, d).row(0).to_owned(),
        a: gauss(&mut r, n, d),
        b: gauss(&mut r, n, d),
    }
}

impl Truth {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn joint(&self, i: usize, j: usize) -> Array1<f64> {
        &self.base + &self.a.row(i) + &self.b.row(j)
    }

    /// Centered concept vectors and the grand mean, by explicit sums.
    pub fn centered(&self) -> (Array1<f64>, Array2<f64>, Array2<f64>) {
        let n = self.n();
        let d = self.dim();
        let mut ma = vec![0.0; d];
        let mut mb = vec![0.0; d];
        for i in 0..n {
            for c in 0..d {
                ma[c] += self.a[[i, c]] / n as f64;
                mb[c] += self.b[[i, c]] / n as f64;
            }
        }
        let mean = Array1::from_shape_fn(d, |c| self.base[c] + ma[c] + mb[c]);
        let u1 = Array2::from_shape_fn((n, d), |(i, c)| self.a[[i, c]] - ma[c]);
        let u2 = Array2::from_shape_fn((n, d), |(j, c)| self.b[[j, c]] - mb[c]);
        (mean, u1, u2)
    }

    /// `per` samples of every combination in `combos`, with i.i.d. noise.
    pub fn table(&self, combos: &[(usize, usize)], per: usize, noise: f64, seed: u64) -> EmbeddingTable {
        let mut r = rng(seed ^ 0xABCD);
        let d = self.dim();
        let mut m = Array2::zeros((combos.len() * per, d));
        let mut c1 = Vec::new();
        let mut c2 = Vec::new();
        let mut row = 0;
        for &(i, j) in combos {
            let x = self.joint(i, j);
            for _ in 0..per {
                for c in 0..d {
                    let e: f64 = StandardNormal.sample(&mut r);
                    m[[row, c]] = x[c] + noise * e;
                }
                c1.push(i);
                c2.push(j);
                row += 1;
            }
        }
        EmbeddingTable::new(m, c1, c2, self.n()).unwrap()
    }
}

pub fn grid(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect()
}

/// Random orthogonal matrix by Gram-Schmidt on Gaussian columns.
pub fn random_orthogonal(d: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    let g = gauss(&mut r, d, d);
    let mut q = Array2::<f64>::zeros((d, d));
    for c in 0..d {
        let mut v = g.column(c).to_owned();
        for p in 0..c {
            let qp = q.column(p).to_owned();
            let proj = v.dot(&qp);
            v.scaled_add(-proj, &qp);
        }
        let norm = v.dot(&v).sqrt();
        q.column_mut(c).assign(&(v / norm));
    }
    q
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

pub fn max_abs_diff1(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

/// Random permutation of the labels of `t` (both concepts permuted together).
pub fn shuffled_labels(t: &EmbeddingTable, seed: u64) -> EmbeddingTable {
    let mut r = rng(seed);
    let mut idx: Vec<usize> = (0..t.rows()).collect();
    for i in (1..idx.len()).rev() {
        let j = r.random_range(0..=i);
        idx.swap(i, j);
    }
    let c1 = idx.iter().map(|&r| t.labels_c1[r]).collect();
    let c2 = idx.iter().map(|&r| t.labels_c2[r]).collect();
    EmbeddingTable::new(t.matrix.clone(), c1, c2, t.n).unwrap()
}
