//! Recovery of linearly factored concept vectors.
//!
//! A representation is linearly factored when every joint embedding is the
//! global mean plus one vector per concept value:
//! `f(x) = mean + u1[c1(x)] + u2[c2(x)]`. Two estimators are provided:
//!
//! * [`conditional_vectors`]: conditional means minus the global mean, valid
//!   on a balanced, complete grid.
//! * [`recover_from_split`]: per-dimension minimum-norm least squares over the
//!   observed combinations only. The indicator design matrix always has the
//!   null vector `(1, .., 1, -1, .., -1)`, so its rank is at most `2n - 1`;
//!   the minimum-norm solution is the zero-sum (centered) one.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::concept_space::Combo;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::linalg;
use crate::par::{self, Execution};

/// Global mean plus per-value concept vectors (rows of `u1` / `u2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FactoredModelJson", into = "FactoredModelJson")]
pub struct FactoredModel {
    pub global_mean: Array1<f64>,
    pub u1: Array2<f64>,
    pub u2: Array2<f64>,
    pub design_rank: usize,
    pub residual: f64,
}

#[derive(Serialize, Deserialize)]
struct FactoredModelJson {
    global_mean: Vec<f64>,
    u1: Vec<Vec<f64>>,
    u2: Vec<Vec<f64>>,
    design_rank: usize,
    residual: f64,
}

fn rows_to_vecs(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn vecs_to_rows(rows: &[Vec<f64>], d: usize) -> std::result::Result<Array2<f64>, String> {
    let mut flat = Vec::with_capacity(rows.len() * d);
    for r in rows {
        if r.len() != d {
            return Err(format!("row of length {} in a {d}-dimensional model", r.len()));
        }
        flat.extend_from_slice(r);
    }
    Array2::from_shape_vec((rows.len(), d), flat).map_err(|e| e.to_string())
}

impl From<FactoredModel> for FactoredModelJson {
    fn from(m: FactoredModel) -> Self {
        Self {
            global_mean: m.global_mean.to_vec(),
            u1: rows_to_vecs(&m.u1),
            u2: rows_to_vecs(&m.u2),
            design_rank: m.design_rank,
            residual: m.residual,
        }
    }
}

impl TryFrom<FactoredModelJson> for FactoredModel {
    type Error = String;

    fn try_from(j: FactoredModelJson) -> std::result::Result<Self, String> {
        let d = j.global_mean.len();
        let u1 = vecs_to_rows(&j.u1, d)?;
        let u2 = vecs_to_rows(&j.u2, d)?;
        if u1.nrows() != u2.nrows() {
            return Err("u1 and u2 must have the same number of values".into());
        }
        Ok(Self {
            global_mean: Array1::from(j.global_mean),
            u1,
            u2,
            design_rank: j.design_rank,
            residual: j.residual,
        })
    }
}

impl FactoredModel {
    pub fn n(&self) -> usize {
        self.u1.nrows()
    }

    pub fn dim(&self) -> usize {
        self.global_mean.len()
    }

    /// `mean + u1[i] + u2[j]`.
    pub fn reconstruct(&self, i: usize, j: usize) -> Result<Array1<f64>> {
        let n = self.n();
        if i >= n || j >= n {
            return Err(Error::IndexOutOfRange { i, j, n });
        }
        Ok(&self.global_mean + &self.u1.row(i) + &self.u2.row(j))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Centered mean embedding of one observed combination.
#[derive(Debug, Clone, PartialEq)]
pub struct JointEmbedding {
    pub pair: Combo,
    pub vector: Array1<f64>,
    pub count: usize,
}

/// Joint embeddings of the observed combinations and the mean they were
/// centered by.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSet {
    pub joints: Vec<JointEmbedding>,
    pub train_mean: Array1<f64>,
}

/// Conditional-mean estimator on a balanced, complete grid.
pub fn conditional_vectors(full: &EmbeddingTable) -> Result<FactoredModel> {
    full.check_balanced_complete()?;
    let n = full.n;
    let d = full.dim();
    let mean = full.global_mean();
    let mut sum1 = Array2::<f64>::zeros((n, d));
    let mut sum2 = Array2::<f64>::zeros((n, d));
    let mut cnt1 = vec![0usize; n];
    let mut cnt2 = vec![0usize; n];
    for r in 0..full.rows() {
        let (i, j) = full.combo(r);
        let row = full.row(r);
        sum1.row_mut(i).scaled_add(1.0, &row);
        sum2.row_mut(j).scaled_add(1.0, &row);
        cnt1[i] += 1;
        cnt2[j] += 1;
    }
    let center = |mut sums: Array2<f64>, counts: &[usize]| {
        for (mut row, &c) in sums.axis_iter_mut(Axis(0)).zip(counts) {
            row /= c as f64;
            row -= &mean;
        }
        sums
    };
    let u1 = center(sum1, &cnt1);
    let u2 = center(sum2, &cnt2);

    let mut model = FactoredModel {
        global_mean: mean,
        u1,
        u2,
        design_rank: 2 * n - 1,
        residual: 0.0,
    };
    let mut sq = 0.0;
    for (combo, rows) in full.rows_by_combo() {
        let cell = full.mean_of(&rows);
        let recon = model.reconstruct(combo.0, combo.1)?;
        sq += (&cell - &recon).mapv(|v| v * v).sum();
    }
    model.residual = sq.sqrt();
    Ok(model)
}

/// Per-combination means of `train`, centered by the mean of those cell
/// means. Cells are weighted equally regardless of their sample counts.
pub fn joint_embeddings(train: &EmbeddingTable, combos: &[Combo]) -> Result<JointSet> {
    let groups = train.rows_by_combo();
    let mut cells = Vec::with_capacity(combos.len());
    for &(i, j) in combos {
        let rows = groups
            .get(&(i, j))
            .filter(|r| !r.is_empty())
            .ok_or(Error::IncompleteSplit(i, j))?;
        cells.push(((i, j), train.mean_of(rows), rows.len()));
    }
    if cells.is_empty() {
        return Err(Error::InvalidInput("no combinations given".into()));
    }
    let mut train_mean = Array1::zeros(train.dim());
    for (_, m, _) in &cells {
        train_mean += m;
    }
    train_mean /= cells.len() as f64;
    let joints = cells
        .into_iter()
        .map(|(pair, m, count)| JointEmbedding {
            pair,
            vector: m - &train_mean,
            count,
        })
        .collect();
    Ok(JointSet { joints, train_mean })
}

/// Indicator design matrix with one row `[e_i | e_j]` per combination.
pub fn design_matrix(combos: &[Combo], n: usize) -> Array2<f64> {
    let mut a = Array2::zeros((combos.len(), 2 * n));
    for (row, &(i, j)) in combos.iter().enumerate() {
        a[[row, i]] = 1.0;
        a[[row, n + j]] = 1.0;
    }
    a
}

/// True when the bipartite value graph induced by `combos` spans all `2n`
/// values in a single component.
pub fn combos_connected(combos: &[Combo], n: usize) -> bool {
    let mut parent: Vec<usize> = (0..2 * n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(i, j) in combos {
        let a = find(&mut parent, i);
        let b = find(&mut parent, n + j);
        parent[a] = b;
    }
    let root = find(&mut parent, 0);
    (1..2 * n).all(|v| find(&mut parent, v) == root)
}

/// Solve `A [U1; U2] = V` for the observed joint embeddings.
pub fn recover_from_split(joints: &JointSet, n: usize, k: usize) -> Result<FactoredModel> {
    if k < 2 {
        return Err(Error::InsufficientCombinations(k));
    }
    let d = joints.train_mean.len();
    let combos: Vec<Combo> = joints.joints.iter().map(|j| j.pair).collect();
    if let Some(&(i, j)) = combos.iter().find(|&&(i, j)| i >= n || j >= n) {
        return Err(Error::IndexOutOfRange { i, j, n });
    }
    if !combos_connected(&combos, n) {
        return Err(Error::Unidentifiable);
    }
    let a = design_matrix(&combos, n);
    let mut v = Array2::zeros((combos.len(), d));
    for (mut row, j) in v.axis_iter_mut(Axis(0)).zip(&joints.joints) {
        if j.vector.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: j.vector.len(),
            });
        }
        row.assign(&j.vector);
    }
    let sol = linalg::min_norm_lstsq(&a, &v);
    Ok(FactoredModel {
        global_mean: joints.train_mean.clone(),
        u1: sol.x.slice(ndarray::s![..n, ..]).to_owned(),
        u2: sol.x.slice(ndarray::s![n.., ..]).to_owned(),
        design_rank: sol.rank,
        residual: sol.residual,
    })
}

/// Joint embeddings of `combos` followed by [`recover_from_split`].
pub fn recover_from_table(
    train: &EmbeddingTable,
    combos: &[Combo],
    k: usize,
) -> Result<FactoredModel> {
    let joints = joint_embeddings(train, combos)?;
    recover_from_split(&joints, train.n, k)
}

/// Decision rule used by [`Classifier`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifyRule {
    /// Nearest `mean + u1[i] + u2[j]` over all `n^2` pairs.
    #[default]
    NearestReconstruction,
    /// Split the centered input into its components in `span(u1)` and
    /// `span(u2)`, then pick the nearest concept vector in each subspace.
    SubspaceProjection,
}

/// Zero-shot classifier built from a [`FactoredModel`].
#[derive(Debug, Clone)]
pub struct Classifier<'a> {
    model: &'a FactoredModel,
    rule: ClassifyRule,
    projection: Option<Projection>,
}

#[derive(Debug, Clone)]
struct Projection {
    basis1: Array2<f64>,
    basis2: Array2<f64>,
    /// Pseudo-inverse of `[basis1 | basis2]`.
    pinv: Array2<f64>,
}

impl<'a> Classifier<'a> {
    pub fn new(model: &'a FactoredModel, rule: ClassifyRule) -> Result<Self> {
        if model.n() < 2 {
            return Err(Error::InvalidParameter(
                "classification needs at least two values per concept".into(),
            ));
        }
        let projection = match rule {
            ClassifyRule::NearestReconstruction => None,
            ClassifyRule::SubspaceProjection => {
                let basis1 = linalg::column_basis(&model.u1.t().to_owned());
                let basis2 = linalg::column_basis(&model.u2.t().to_owned());
                let joint = ndarray::concatenate(Axis(1), &[basis1.view(), basis2.view()])
                    .expect("bases share the embedding dimension");
                let eye = Array2::eye(model.dim());
                let pinv = linalg::min_norm_lstsq(&joint, &eye).x;
                Some(Projection {
                    basis1,
                    basis2,
                    pinv,
                })
            }
        };
        Ok(Self {
            model,
            rule,
            projection,
        })
    }

    pub fn rule(&self) -> ClassifyRule {
        self.rule
    }

    pub fn classify(&self, x: ArrayView1<'_, f64>) -> Result<Combo> {
        let d = self.model.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: x.len(),
            });
        }
        let centered = &x - &self.model.global_mean;
        Ok(match &self.projection {
            None => nearest_pair(self.model, centered.view()),
            Some(p) => {
                let coef = p.pinv.dot(&centered);
                let r1 = p.basis1.ncols();
                let part1 = p.basis1.dot(&coef.slice(ndarray::s![..r1]));
                let part2 = p.basis2.dot(&coef.slice(ndarray::s![r1..]));
                (
                    nearest_row(&self.model.u1, part1.view()),
                    nearest_row(&self.model.u2, part2.view()),
                )
            }
        })
    }

    /// Classify every row of `matrix`; order follows the rows.
    pub fn classify_rows(&self, matrix: &Array2<f64>, exec: Execution) -> Result<Vec<Combo>> {
        par::map_range(exec, matrix.nrows(), |r| self.classify(matrix.row(r)))
            .into_iter()
            .collect()
    }
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_row(rows: &Array2<f64>, x: ArrayView1<'_, f64>) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, row) in rows.rows().into_iter().enumerate() {
        let dist = sq_dist(row, x);
        if dist < best.0 {
            best = (dist, i);
        }
    }
    best.1
}

fn nearest_pair(model: &FactoredModel, centered: ArrayView1<'_, f64>) -> Combo {
    let mut best = (f64::INFINITY, (0, 0));
    let mut resid = Array1::zeros(centered.len());
    for (i, a) in model.u1.rows().into_iter().enumerate() {
        for (j, b) in model.u2.rows().into_iter().enumerate() {
            ndarray::Zip::from(&mut resid)
                .and(&centered)
                .and(&a)
                .and(&b)
                .for_each(|r, &x, &a, &b| *r = x - a - b);
            let dist = resid.dot(&resid);
            if dist < best.0 {
                best = (dist, (i, j));
            }
        }
    }
    best.1
}

/// Nearest-reconstruction classification of a single embedding.
pub fn classify(model: &FactoredModel, x: ArrayView1<'_, f64>) -> Result<Combo> {
    Classifier::new(model, ClassifyRule::NearestReconstruction)?.classify(x)
}
