//! Toolkit for studying compositional generalization in the (n, k) setting.
//!
//! Two labeled concepts with `n` values each span an `n x n` grid of
//! combinations; a model observes `k` combinations per value and is tested on
//! the remaining `n^2 - n k`. The crate covers the whole loop: split
//! construction ([`concept_space`]), procedural datasets ([`synth_data`]),
//! from-scratch feature extractors ([`nn`]), factored-representation recovery
//! ([`factorization`]), structure metrics ([`metrics`]), frozen-feature probes
//! ([`probes`]) and the experiment suites ([`experiments`]).

pub mod concept_space;
pub mod embedding;
pub mod error;
pub mod experiments;
pub mod factorization;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod probes;
pub mod synth_data;
pub mod trainer;

pub use concept_space::{build_nk_split, select_value_indices, Combo, ConceptSpec, NkSplit};
pub use embedding::EmbeddingTable;
pub use error::{Error, FormatError, Result};
pub use factorization::{FactoredModel, JointEmbedding, JointSet};
pub use par::Execution;
