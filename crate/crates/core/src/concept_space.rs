//! Concept spaces and the deterministic (n, k) combination splits.
//!
//! All indices are 0-based. A split observes, for every first-concept value
//! `i`, the `k` second-concept values `(i + j) mod n` for `j in 0..k`; every
//! other cell of the `n x n` grid is held out.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An unlabeled axis of variation (position, rotation, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NuisanceDim {
    pub name: String,
    pub cardinality: usize,
}

impl NuisanceDim {
    pub fn new(name: impl Into<String>, cardinality: usize) -> Self {
        Self {
            name: name.into(),
            cardinality,
        }
    }
}

/// Two labeled concepts plus any number of unlabeled nuisance concepts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub name: String,
    pub cardinality_c1: usize,
    pub cardinality_c2: usize,
    #[serde(default)]
    pub nuisance_dims: Vec<NuisanceDim>,
}

impl ConceptSpec {
    pub fn new(
        name: impl Into<String>,
        cardinality_c1: usize,
        cardinality_c2: usize,
        nuisance_dims: Vec<NuisanceDim>,
    ) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            cardinality_c1,
            cardinality_c2,
            nuisance_dims,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cardinality_c1 == 0 || self.cardinality_c2 == 0 {
            return Err(Error::InvalidParameter(
                "labeled concept cardinalities must be >= 1".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for dim in &self.nuisance_dims {
            if dim.cardinality == 0 {
                return Err(Error::InvalidParameter(format!(
                    "nuisance dimension `{}` has cardinality 0",
                    dim.name
                )));
            }
            if !seen.insert(dim.name.as_str()) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate nuisance dimension `{}`",
                    dim.name
                )));
            }
        }
        Ok(())
    }

    /// Number of distinct nuisance assignments (product of cardinalities).
    pub fn nuisance_space_size(&self) -> usize {
        self.nuisance_dims.iter().map(|d| d.cardinality).product()
    }

    /// Decode a flat nuisance index into one value per nuisance dimension
    /// (last dimension varies fastest).
    pub fn decode_nuisance(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.nuisance_dims.len()];
        for (slot, dim) in out.iter_mut().zip(&self.nuisance_dims).rev() {
            *slot = flat % dim.cardinality;
            flat /= dim.cardinality;
        }
        out
    }
}

/// A `(c1, c2)` value-index pair.
pub type Combo = (usize, usize);

/// Observed / held-out partition of the `n x n` concept grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NkSplit {
    pub n: usize,
    pub k: usize,
    #[serde(rename = "train")]
    pub train_combos: Vec<Combo>,
    #[serde(rename = "test")]
    pub test_combos: Vec<Combo>,
}

impl NkSplit {
    pub fn is_train(&self, combo: Combo) -> bool {
        let (i, j) = combo;
        i < self.n && j < self.n && (j + self.n - i) % self.n < self.k
    }

    /// Every cell of the grid in row-major order.
    pub fn full_grid(&self) -> Vec<Combo> {
        full_grid(self.n)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let split: NkSplit = serde_json::from_str(s)?;
        let rebuilt = build_nk_split(split.n, split.k)?;
        if rebuilt != split {
            return Err(Error::InvalidInput(format!(
                "split JSON does not match the canonical ({}, {}) split",
                split.n, split.k
            )));
        }
        Ok(split)
    }
}

pub fn full_grid(n: usize) -> Vec<Combo> {
    (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect()
}

/// Build the canonical cyclic `(n, k)` split.
///
/// Train pairs are emitted row-major, then in shift order `j = 0..k`; test
/// pairs are the remaining cells in row-major order.
pub fn build_nk_split(n: usize, k: usize) -> Result<NkSplit> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be >= 1".into()));
    }
    if k < 1 || k > n {
        return Err(Error::InvalidParameter(format!(
            "k must lie in [1, n] (n = {n}, k = {k})"
        )));
    }
    let train_combos: Vec<Combo> = (0..n)
        .flat_map(|i| (0..k).map(move |j| (i, (i + j) % n)))
        .collect();
    let test_combos = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| (j + n - i) % n >= k)
        .collect();
    Ok(NkSplit {
        n,
        k,
        train_combos,
        test_combos,
    })
}

/// Pick `n` evenly spread value indices out of `total_values`:
/// `i * floor(total_values / n)` for `i in 0..n`.
pub fn select_value_indices(total_values: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > total_values {
        return Err(Error::InvalidParameter(format!(
            "cannot select {n} values out of {total_values}"
        )));
    }
    let stride = total_values / n;
    Ok((0..n).map(|i| i * stride).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_4_2_expands_the_union() {
        let s = build_nk_split(4, 2).unwrap();
        assert_eq!(
            s.train_combos,
            vec![
                (0, 0),
                (0, 1),
                (1, 1),
                (1, 2),
                (2, 2),
                (2, 3),
                (3, 3),
                (3, 0)
            ]
        );
        assert_eq!(s.test_combos.len(), 8);
        assert_eq!(s.test_combos[0], (0, 2));
    }

    #[test]
    fn full_k_leaves_no_test_cells() {
        assert!(build_nk_split(3, 3).unwrap().test_combos.is_empty());
    }

    #[test]
    fn ten_one_holds_out_ninety() {
        let s = build_nk_split(10, 1).unwrap();
        assert_eq!(s.test_combos.len(), 90);
        assert_eq!(s.test_combos.len(), (10 - 1) * 10);
    }

    #[test]
    fn invalid_k_is_rejected() {
        assert!(matches!(
            build_nk_split(4, 0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            build_nk_split(4, 5),
            Err(Error::InvalidParameter(_))
        ));
        assert!(build_nk_split(0, 0).is_err());
    }

    #[test]
    fn k_two_is_diagonal_plus_shifted_diagonal() {
        for n in 2..=12 {
            let s = build_nk_split(n, 2).unwrap();
            let got: BTreeSet<Combo> = s.train_combos.iter().copied().collect();
            let mut want = BTreeSet::new();
            for i in 0..n {
                want.insert((i, i));
                want.insert((i, (i + 1) % n));
            }
            assert_eq!(got, want);
        }
    }

    #[test]
    fn is_train_matches_lists() {
        let s = build_nk_split(7, 3).unwrap();
        for c in &s.train_combos {
            assert!(s.is_train(*c));
        }
        for c in &s.test_combos {
            assert!(!s.is_train(*c));
        }
    }

    #[test]
    fn value_selection() {
        assert_eq!(select_value_indices(40, 4).unwrap(), vec![0, 10, 20, 30]);
        assert_eq!(
            select_value_indices(10, 10).unwrap(),
            (0..10).collect::<Vec<_>>()
        );
        assert_eq!(select_value_indices(7, 3).unwrap(), vec![0, 2, 4]);
        assert!(matches!(
            select_value_indices(3, 4),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn json_shape() {
        let s = build_nk_split(2, 1).unwrap();
        let json = s.to_json().unwrap();
        assert_eq!(
            json,
            r#"{"n":2,"k":1,"train":[[0,0],[1,1]],"test":[[0,1],[1,0]]}"#
        );
        assert_eq!(NkSplit::from_json(&json).unwrap(), s);
        let tampered = r#"{"n":2,"k":1,"train":[[0,1],[1,1]],"test":[[0,0],[1,0]]}"#;
        assert!(NkSplit::from_json(tampered).is_err());
    }

    #[test]
    fn concept_spec_validation() {
        assert!(ConceptSpec::new("x", 0, 3, vec![]).is_err());
        assert!(ConceptSpec::new(
            "x",
            3,
            3,
            vec![NuisanceDim::new("pos", 2), NuisanceDim::new("pos", 3)]
        )
        .is_err());
        let spec = ConceptSpec::new(
            "x",
            3,
            3,
            vec![NuisanceDim::new("pos", 8), NuisanceDim::new("rot", 12)],
        )
        .unwrap();
        assert_eq!(spec.nuisance_space_size(), 96);
        assert_eq!(spec.decode_nuisance(13), vec![1, 1]);
        assert_eq!(spec.decode_nuisance(95), vec![7, 11]);
    }
}
